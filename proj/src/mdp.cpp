#include "iclab/mdp.hpp"

#include "iclab/errors.hpp"
#include "iclab/rng.hpp"

#include <cmath>
#include <string>

namespace iclab {

namespace {

constexpr double kProbTol = 1e-9;

std::string dims(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Mdp::Mdp(int num_states, int num_actions, int horizon, std::vector<double> transition,
         Eigen::VectorXd initial_dist)
    : num_states_(num_states),
      num_actions_(num_actions),
      horizon_(horizon),
      transition_(std::move(transition)),
      initial_dist_(std::move(initial_dist)) {
  if (num_states < 1 || num_actions < 1) throw ArgumentError("Mdp: state and action counts must be positive");
  if (horizon < 1) throw ArgumentError("Mdp: horizon must be >= 1");
  const std::size_t expected = static_cast<std::size_t>(num_states) * num_actions * num_states;
  if (transition_.size() != expected)
    throw ShapeError("Mdp: transition table has " + std::to_string(transition_.size()) +
                     " entries, expected " + std::to_string(expected));
  if (initial_dist_.size() != num_states) throw ShapeError("Mdp: initial_dist length mismatch");
  if ((initial_dist_.array() < 0.0).any() || std::abs(initial_dist_.sum() - 1.0) > kProbTol)
    throw ArgumentError("Mdp: initial_dist is not a probability distribution");

  offsets_.reserve(static_cast<std::size_t>(num_states) * num_actions + 1);
  offsets_.push_back(0);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      double row_sum = 0.0;
      for (int n = 0; n < num_states; ++n) {
        const double p = this->transition(s, a, n);
        if (p < 0.0 || !std::isfinite(p))
          throw ArgumentError("Mdp: negative or non-finite transition probability at (" +
                              std::to_string(s) + "," + std::to_string(a) + ")");
        if (p > 0.0) successors_.push_back({n, p});
        row_sum += p;
      }
      if (std::abs(row_sum - 1.0) > kProbTol)
        throw ArgumentError("Mdp: transition row (" + std::to_string(s) + "," +
                            std::to_string(a) + ") sums to " + std::to_string(row_sum));
      offsets_.push_back(successors_.size());
    }
  }
}

Table Mdp::lookahead(const Eigen::VectorXd& next_value) const {
  Table out(num_states_, num_actions_);
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) {
      double acc = 0.0;
      for (const auto& succ : successors(s, a)) acc += succ.prob * next_value(succ.state);
      out(s, a) = acc;
    }
  }
  return out;
}

Eigen::VectorXd Mdp::push_forward(const Table& rho) const {
  Eigen::VectorXd next = Eigen::VectorXd::Zero(num_states_);
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) {
      const double mass = rho(s, a);
      if (mass == 0.0) continue;
      for (const auto& succ : successors(s, a)) next(succ.state) += mass * succ.prob;
    }
  }
  return next;
}

Mdp Mdp::with_horizon(int horizon) const {
  return Mdp(num_states_, num_actions_, horizon, transition_, initial_dist_);
}

Mdp Mdp::with_initial_dist(Eigen::VectorXd initial_dist) const {
  return Mdp(num_states_, num_actions_, horizon_, transition_, std::move(initial_dist));
}

void Mdp::check_table(const Table& t, const char* what) const {
  if (t.rows() != num_states_ || t.cols() != num_actions_)
    throw ShapeError(std::string(what) + " is " + dims(t.rows(), t.cols()) + ", MDP is " +
                     dims(num_states_, num_actions_));
}

ScalarSignal::ScalarSignal(Table values) : values_(std::move(values)) {
  if (values_.size() == 0) throw ShapeError("ScalarSignal: empty table");
  if (!values_.allFinite() || values_.maxCoeff() > 1.0 || values_.minCoeff() < -1.0)
    throw ArgumentError("ScalarSignal: entries must lie in [-1, 1]");
}

ScalarSignal ScalarSignal::zeros(int num_states, int num_actions) {
  return ScalarSignal(Table::Zero(num_states, num_actions));
}

ScalarSignal ScalarSignal::constant(int num_states, int num_actions, double v) {
  return ScalarSignal(Table::Constant(num_states, num_actions, v));
}

Policy::Policy(std::vector<Table> action_probs) : probs_(std::move(action_probs)) {
  if (probs_.empty()) throw ArgumentError("Policy: horizon must be >= 1");
  const auto rows = probs_.front().rows();
  const auto cols = probs_.front().cols();
  if (rows < 1 || cols < 1) throw ShapeError("Policy: empty table");
  for (const auto& p : probs_) {
    if (p.rows() != rows || p.cols() != cols) throw ShapeError("Policy: ragged tables");
    if ((p.array() < 0.0).any() || !p.allFinite())
      throw ArgumentError("Policy: negative or non-finite probability");
    if (((p.rowwise().sum().array() - 1.0).abs() > kProbTol).any())
      throw ArgumentError("Policy: action probabilities do not sum to 1");
  }
}

Policy Policy::uniform(int horizon, int num_states, int num_actions) {
  return Policy(std::vector<Table>(horizon, Table::Constant(num_states, num_actions,
                                                            1.0 / num_actions)));
}

Policy Policy::deterministic(const std::vector<std::vector<int>>& actions, int num_actions) {
  std::vector<Table> probs;
  probs.reserve(actions.size());
  for (const auto& row : actions) {
    Table p = Table::Zero(static_cast<Eigen::Index>(row.size()), num_actions);
    for (std::size_t s = 0; s < row.size(); ++s) {
      if (row[s] < 0 || row[s] >= num_actions) throw ArgumentError("Policy: action out of range");
      p(static_cast<Eigen::Index>(s), row[s]) = 1.0;
    }
    probs.push_back(std::move(p));
  }
  return Policy(std::move(probs));
}

bool Policy::operator==(const Policy& other) const {
  if (probs_.size() != other.probs_.size()) return false;
  for (std::size_t t = 0; t < probs_.size(); ++t)
    if (probs_[t] != other.probs_[t]) return false;
  return true;
}

MixturePolicy::MixturePolicy(std::vector<Policy> components, std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
  if (components_.empty() || components_.size() != weights_.size())
    throw ShapeError("MixturePolicy: components and weights must be nonempty and aligned");
  double total = 0.0;
  for (double w : weights_) {
    if (w < 0.0) throw ArgumentError("MixturePolicy: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > kProbTol) throw ArgumentError("MixturePolicy: weights must sum to 1");
  for (const auto& c : components_) {
    if (c.horizon() != components_.front().horizon() ||
        c.num_states() != components_.front().num_states() ||
        c.num_actions() != components_.front().num_actions())
      throw ShapeError("MixturePolicy: component shapes differ");
  }
}

Table OccupancyMeasure::aggregate() const {
  Table total = Table::Zero(rho_.front().rows(), rho_.front().cols());
  for (const auto& r : rho_) total += r;
  return total;
}

double OccupancyMeasure::flow_residual(const Mdp& mdp) const {
  double worst = 0.0;
  for (int t = 0; t < horizon(); ++t) worst = std::max(worst, std::abs(rho_[t].sum() - 1.0));
  Eigen::VectorXd inflow = mdp.initial_dist();
  for (int t = 0; t < horizon(); ++t) {
    const Eigen::VectorXd visit = rho_[t].rowwise().sum();
    worst = std::max(worst, (visit - inflow).cwiseAbs().maxCoeff());
    inflow = mdp.push_forward(rho_[t]);
  }
  return worst;
}

namespace {

void check_policy(const Mdp& mdp, const Policy& policy) {
  if (policy.horizon() != mdp.horizon() || policy.num_states() != mdp.num_states() ||
      policy.num_actions() != mdp.num_actions())
    throw ShapeError("policy shape (T=" + std::to_string(policy.horizon()) + ", " +
                     dims(policy.num_states(), policy.num_actions()) +
                     ") does not match MDP (T=" + std::to_string(mdp.horizon()) + ", " +
                     dims(mdp.num_states(), mdp.num_actions()) + ")");
}

}  // namespace

OccupancyMeasure occupancy(const Mdp& mdp, const Policy& policy) {
  check_policy(mdp, policy);
  std::vector<Table> rho;
  rho.reserve(mdp.horizon());
  Eigen::VectorXd state_dist = mdp.initial_dist();
  for (int t = 0; t < mdp.horizon(); ++t) {
    Table r = policy.at(t).array().colwise() * state_dist.array();
    state_dist = mdp.push_forward(r);
    rho.push_back(std::move(r));
  }
  return OccupancyMeasure(std::move(rho));
}

OccupancyMeasure occupancy(const Mdp& mdp, const MixturePolicy& policy) {
  std::vector<Table> rho(mdp.horizon(), Table::Zero(mdp.num_states(), mdp.num_actions()));
  for (std::size_t k = 0; k < policy.components().size(); ++k) {
    const auto occ = occupancy(mdp, policy.components()[k]);
    for (int t = 0; t < mdp.horizon(); ++t) rho[t] += policy.weights()[k] * occ.at(t);
  }
  return OccupancyMeasure(std::move(rho));
}

double inner(const OccupancyMeasure& occ, const Table& f) {
  double total = 0.0;
  for (const auto& r : occ.tables()) total += r.cwiseProduct(f).sum();
  return total;
}

double value(const Mdp& mdp, const Policy& policy, const Table& signal) {
  mdp.check_table(signal, "signal");
  return inner(occupancy(mdp, policy), signal);
}

double value(const Mdp& mdp, const Policy& policy, const ScalarSignal& signal) {
  return value(mdp, policy, signal.values());
}

double value(const Mdp& mdp, const MixturePolicy& policy, const ScalarSignal& signal) {
  double total = 0.0;
  for (std::size_t k = 0; k < policy.components().size(); ++k)
    total += policy.weights()[k] * value(mdp, policy.components()[k], signal);
  return total;
}

double policy_value_dp(const Mdp& mdp, const Policy& policy, const Table& signal) {
  check_policy(mdp, policy);
  mdp.check_table(signal, "signal");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.num_states());
  for (int t = mdp.horizon() - 1; t >= 0; --t) {
    const Table q = signal + mdp.lookahead(v);
    v = policy.at(t).cwiseProduct(q).rowwise().sum();
  }
  return mdp.initial_dist().dot(v);
}

Policy to_markov(const OccupancyMeasure& occ) {
  std::vector<Table> probs;
  probs.reserve(occ.horizon());
  for (const auto& r : occ.tables()) {
    Table p(r.rows(), r.cols());
    for (Eigen::Index s = 0; s < r.rows(); ++s) {
      const double mass = r.row(s).sum();
      if (mass > 0.0)
        p.row(s) = r.row(s) / mass;
      else
        p.row(s).setConstant(1.0 / static_cast<double>(r.cols()));
    }
    probs.push_back(std::move(p));
  }
  return Policy(std::move(probs));
}

Policy to_markov(const Mdp& mdp, const MixturePolicy& mixture) {
  return to_markov(occupancy(mdp, mixture));
}

Policy with_action_noise(const Policy& policy, double eps) {
  if (eps < 0.0 || eps > 1.0) throw ArgumentError("with_action_noise: eps must lie in [0, 1]");
  std::vector<Table> probs;
  probs.reserve(policy.horizon());
  const double u = 1.0 / policy.num_actions();
  for (const auto& p : policy.tables()) probs.push_back(((1.0 - eps) * p.array() + eps * u).matrix());
  return Policy(std::move(probs));
}

namespace {

Trajectory rollout(const Mdp& mdp, const Policy& policy, RandomStream& rng) {
  Trajectory traj;
  traj.steps.reserve(mdp.horizon());
  const auto& init = mdp.initial_dist();
  int s = rng.categorical(std::span<const double>(init.data(), init.size()));
  std::vector<double> row(mdp.num_actions());
  std::vector<double> next;
  for (int t = 0; t < mdp.horizon(); ++t) {
    for (int a = 0; a < mdp.num_actions(); ++a) row[a] = policy(t, s, a);
    const int a = rng.categorical(row);
    traj.steps.push_back({s, a});
    const auto succ = mdp.successors(s, a);
    next.resize(succ.size());
    for (std::size_t k = 0; k < succ.size(); ++k) next[k] = succ[k].prob;
    s = succ[rng.categorical(next)].state;
  }
  return traj;
}

}  // namespace

std::vector<Trajectory> sample_trajectories(const Mdp& mdp, const Policy& policy, int n,
                                            std::uint64_t seed) {
  check_policy(mdp, policy);
  if (n < 1) throw ArgumentError("sample_trajectories: n must be >= 1");
  RandomStream rng(seed, "sample_trajectories");
  std::vector<Trajectory> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(rollout(mdp, policy, rng));
  return out;
}

std::vector<Trajectory> sample_trajectories(const Mdp& mdp, const MixturePolicy& policy, int n,
                                            std::uint64_t seed) {
  for (const auto& c : policy.components()) check_policy(mdp, c);
  if (n < 1) throw ArgumentError("sample_trajectories: n must be >= 1");
  RandomStream rng(seed, "sample_trajectories/mixture");
  std::vector<Trajectory> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int k = rng.categorical(policy.weights());
    out.push_back(rollout(mdp, policy.components()[k], rng));
  }
  return out;
}

double trajectory_total(const Trajectory& traj, const Table& f) {
  double total = 0.0;
  for (const auto& st : traj.steps) {
    if (st.state < 0 || st.state >= f.rows() || st.action < 0 || st.action >= f.cols())
      throw ShapeError("trajectory step out of bounds");
    total += f(st.state, st.action);
  }
  return total;
}

double empirical_value(std::span<const Trajectory> trajectories, const Table& signal) {
  if (trajectories.empty()) throw ArgumentError("empirical_value: empty trajectory list");
  double total = 0.0;
  for (const auto& traj : trajectories) total += trajectory_total(traj, signal);
  return total / static_cast<double>(trajectories.size());
}

double empirical_value(std::span<const Trajectory> trajectories, const ScalarSignal& signal) {
  return empirical_value(trajectories, signal.values());
}

}  // namespace iclab
