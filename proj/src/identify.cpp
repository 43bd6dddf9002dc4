#include "iclab/identify.hpp"

#include "iclab/errors.hpp"
#include "iclab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace iclab {

AggregateOccupancy AggregateOccupancy::from(const OccupancyMeasure& occ) {
  const Table agg = occ.aggregate();
  AggregateOccupancy out;
  out.horizon = occ.horizon();
  out.rho.resize(agg.size());
  for (Eigen::Index s = 0; s < agg.rows(); ++s)
    for (Eigen::Index a = 0; a < agg.cols(); ++a) out.rho(s * agg.cols() + a) = agg(s, a);
  return out;
}

void AggregateOccupancy::validate() const {
  if (rho.size() == 0) throw ArgumentError("AggregateOccupancy: empty vector");
  if (rho.minCoeff() < -1e-12) throw ArgumentError("AggregateOccupancy: negative entry");
  if (std::abs(rho.sum() - horizon) > 1e-8)
    throw ArgumentError("AggregateOccupancy: mass " + std::to_string(rho.sum()) + " differs from horizon " +
                        std::to_string(horizon));
}

Eigen::MatrixXd occupancy_difference_matrix(std::span<const AggregateOccupancy> experts) {
  if (experts.size() < 2) throw ArgumentError("occupancy_difference_matrix: need at least two experts");
  const Eigen::Index n = experts.front().rho.size();
  Eigen::MatrixXd M(static_cast<Eigen::Index>(experts.size()) - 1, n);
  for (std::size_t i = 0; i + 1 < experts.size(); ++i) {
    if (experts[i + 1].rho.size() != n) throw ShapeError("occupancy_difference_matrix: size mismatch");
    M.row(static_cast<Eigen::Index>(i)) = (experts[i].rho - experts[i + 1].rho).transpose();
  }
  return M;
}

NullSpaceResult null_space_constraint(const Eigen::MatrixXd& diff_matrix, const AggregateOccupancy& unsafe_probe,
                                      double tol, Gauge gauge) {
  if (diff_matrix.rows() == 0 || diff_matrix.cols() == 0)
    throw ArgumentError("null_space_constraint: empty matrix");
  if (unsafe_probe.rho.size() != diff_matrix.cols()) throw ShapeError("null_space_constraint: probe size mismatch");
  if (diff_matrix.cwiseAbs().maxCoeff() == 0.0)
    throw DegenerateInputError("null_space_constraint: all occupancy differences are zero");
  if (!(tol > 0.0)) throw ArgumentError("null_space_constraint: tol must be positive");

  const Eigen::Index n = diff_matrix.cols();
  Eigen::MatrixXd M = diff_matrix;
  if (gauge == Gauge::modulo_constants) {
    // Appending the constant direction removes it from the null space.
    M.conservativeResize(M.rows() + 1, Eigen::NoChange);
    M.row(M.rows() - 1) = Eigen::RowVectorXd::Constant(n, diff_matrix.cwiseAbs().maxCoeff() / std::sqrt(double(n)));
  }
  // Pad to a square system so the full right singular basis is available.
  if (M.rows() < n) {
    const Eigen::Index r = M.rows();
    M.conservativeResize(n, Eigen::NoChange);
    M.bottomRows(n - r).setZero();
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd.singularValues();
  const double cutoff = tol * sv(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > cutoff ? 1 : 0;

  NullSpaceResult out;
  out.singular_values = sv;
  out.null_dim = static_cast<int>(n) - rank;
  out.basis = svd.matrixV().rightCols(out.null_dim);
  if (out.null_dim >= 1) {
    out.c_hat = out.basis.col(0);
    if (out.null_dim == 1) {
      const double side = out.c_hat.dot(unsafe_probe.rho);
      if (side < 0.0) out.c_hat = -out.c_hat;
    }
  } else {
    out.c_hat = Eigen::VectorXd::Zero(n);
  }
  return out;
}

ScalarSignal to_signal(const Eigen::VectorXd& c_hat, int num_states, int num_actions) {
  if (c_hat.size() != static_cast<Eigen::Index>(num_states) * num_actions)
    throw ShapeError("to_signal: size mismatch");
  const double m = c_hat.cwiseAbs().maxCoeff();
  Table t(num_states, num_actions);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a) t(s, a) = m > 0.0 ? c_hat(s * num_actions + a) / m : 0.0;
  return ScalarSignal(std::move(t));
}

std::vector<SaturationEntry> verify_saturation(const TaskBundle& bundle, const ScalarSignal& c) {
  std::vector<SaturationEntry> out;
  for (const auto& t : bundle.tasks) {
    SaturationEntry e;
    e.task_id = t.id;
    e.optimal_reward = optimal_value(bundle.mdp, t.reward.values());
    if (t.expert_policy) {
      e.exact = true;
      e.expert_reward = value(bundle.mdp, *t.expert_policy, t.reward);
      e.expert_violation = value(bundle.mdp, *t.expert_policy, c);
    } else {
      e.expert_reward = empirical_value(t.demos, t.reward);
      e.expert_violation = empirical_value(t.demos, c);
    }
    e.saturated = e.optimal_reward - e.expert_reward > 1e-6;
    out.push_back(std::move(e));
  }
  return out;
}

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter) {
  if (A.rows() != b.size()) throw ShapeError("nnls: row mismatch");
  const Eigen::Index n = A.cols();
  if (max_iter <= 0) max_iter = static_cast<int>(3 * n + 30);
  const double tol = 10.0 * std::numeric_limits<double>::epsilon() * A.cwiseAbs().colwise().sum().maxCoeff() *
                     static_cast<double>(std::max(A.rows(), n));

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  auto solve_passive = [&]() {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j)
      if (passive[j]) idx.push_back(j);
    Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    const Eigen::VectorXd zp = Ap.colPivHouseholderQr().solve(b);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) z(idx[k]) = zp(static_cast<Eigen::Index>(k));
    return z;
  };

  for (int outer = 0; outer < max_iter; ++outer) {
    const Eigen::VectorXd w = A.transpose() * (b - A * x);
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < n; ++j)
      if (!passive[j] && w(j) > tol && (best < 0 || w(j) > w(best))) best = j;
    if (best < 0) break;
    passive[best] = true;

    for (int inner = 0; inner < max_iter; ++inner) {
      const Eigen::VectorXd z = solve_passive();
      bool positive = true;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && z(j) <= 0.0) positive = false;
      if (positive) {
        x = z;
        break;
      }
      double step = 1.0;
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && z(j) <= 0.0) step = std::min(step, x(j) / (x(j) - z(j)));
      x += step * (z - x);
      for (Eigen::Index j = 0; j < n; ++j)
        if (passive[j] && x(j) <= tol) {
          passive[j] = false;
          x(j) = 0.0;
        }
    }
  }
  return x;
}

std::vector<MixtureEntry> check_mixture_independence(std::span<const AggregateOccupancy> experts, double tol) {
  if (experts.size() < 2) throw ArgumentError("check_mixture_independence: need at least two experts");
  const Eigen::Index d = experts.front().rho.size();
  const Eigen::Index m = static_cast<Eigen::Index>(experts.size());
  std::vector<MixtureEntry> out;
  for (Eigen::Index i = 0; i < m; ++i) {
    // Convex weights: a heavily weighted row enforces sum(lambda) = 1.
    const double weight = 1e4 * (1.0 + experts[i].rho.cwiseAbs().maxCoeff());
    Eigen::MatrixXd A(d + 1, m - 1);
    Eigen::VectorXd b(d + 1);
    b.head(d) = experts[i].rho;
    b(d) = weight;
    Eigen::Index col = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      if (experts[j].rho.size() != d) throw ShapeError("check_mixture_independence: size mismatch");
      A.col(col).head(d) = experts[j].rho;
      A(d, col++) = weight;
    }
    Eigen::VectorXd lambda = nnls(A, b);
    const double total = lambda.sum();
    if (total > 0.0) lambda /= total;
    MixtureEntry e;
    e.residual = (A.topRows(d) * lambda - experts[i].rho).norm();
    e.violated = e.residual < tol;
    out.push_back(e);
  }
  return out;
}

double min_reachable_entry(const Mdp& mdp, const AggregateOccupancy& occ) {
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  if (occ.rho.size() != static_cast<Eigen::Index>(S) * A) throw ShapeError("min_reachable_entry: size mismatch");
  std::vector<bool> reach(S, false);
  std::vector<bool> frontier(S, false);
  for (int s = 0; s < S; ++s) frontier[s] = reach[s] = mdp.initial_dist()(s) > 0.0;
  for (int t = 1; t < mdp.horizon(); ++t) {
    std::vector<bool> next(S, false);
    for (int s = 0; s < S; ++s) {
      if (!frontier[s]) continue;
      for (int a = 0; a < A; ++a)
        for (const auto& succ : mdp.successors(s, a)) next[succ.state] = true;
    }
    for (int s = 0; s < S; ++s) reach[s] = reach[s] || next[s];
    frontier = next;
  }
  double lo = std::numeric_limits<double>::infinity();
  for (int s = 0; s < S; ++s)
    if (reach[s])
      for (int a = 0; a < A; ++a) lo = std::min(lo, occ.rho(s * A + a));
  return lo;
}

namespace {

std::optional<IdentifiabilityFixture> draw_fixture(int S, int A, int horizon, RandomStream& rng, double temperature) {
  const int n = S * A;
  std::vector<double> P(static_cast<std::size_t>(S) * A * S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double total = 0.0;
      for (int k = 0; k < S; ++k) total += P[(s * A + a) * S + k] = 0.1 + rng.uniform();
      for (int k = 0; k < S; ++k) P[(s * A + a) * S + k] /= total;
    }
  Eigen::VectorXd init(S);
  for (int s = 0; s < S; ++s) init(s) = 0.5 + rng.uniform();
  init /= init.sum();
  Mdp mdp(S, A, horizon, std::move(P), std::move(init));

  Eigen::VectorXd c(n);
  for (int i = 0; i < n; ++i) c(i) = rng.normal();
  c.array() -= c.mean();
  c /= c.cwiseAbs().maxCoeff();
  Table ct(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) ct(s, a) = c(s * A + a);

  std::vector<Table> rewards;
  std::vector<Policy> experts;
  std::vector<AggregateOccupancy> occs;
  for (int attempt = 0; static_cast<int>(experts.size()) < n; ++attempt) {
    if (attempt > 50 * n) return std::nullopt;
    Table r(S, A);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) r(s, a) = 2.0 * rng.uniform() - 1.0;
    // The constraint must bind for both the optimum and the soft optimum.
    if (value(mdp, rl_best_response(mdp, r), ct) <= 1e-3) continue;
    if (value(mdp, soft_rl(mdp, r, temperature), ct) <= 1e-3) continue;
    double lambda = 0.0;
    Policy pi = soft_constrained_policy(mdp, r, ct, 0.0, temperature, &lambda);
    if (!(lambda > 0.0)) continue;
    occs.push_back(AggregateOccupancy::from(occupancy(mdp, pi)));
    rewards.push_back(std::move(r));
    experts.push_back(std::move(pi));
    // Keep the set free of experts that mix the others (the newest one goes on failure).
    if (occs.size() >= 2) {
      const auto mix = check_mixture_independence(occs, 1e-4);
      if (std::any_of(mix.begin(), mix.end(), [](const MixtureEntry& e) { return e.violated; })) {
        occs.pop_back();
        rewards.pop_back();
        experts.pop_back();
      }
    }
  }
  AggregateOccupancy probe = AggregateOccupancy::from(occupancy(mdp, rl_best_response(mdp, rewards.front())));
  return IdentifiabilityFixture{std::move(mdp), std::move(c), std::move(rewards), std::move(experts),
                                std::move(occs), std::move(probe)};
}

}  // namespace

IdentifiabilityFixture make_identifiability_fixture(int num_states, int num_actions, int horizon,
                                                    std::uint64_t seed, double temperature) {
  if (num_states < 1 || num_actions < 2 || horizon < 2)
    throw ArgumentError("make_identifiability_fixture: need S >= 1, A >= 2, T >= 2");
  RandomStream rng(seed, "identifiability");
  // Some draws of c* admit few binding rewards; redraw the whole instance then.
  for (int draw = 0; draw < 20; ++draw)
    if (auto fx = draw_fixture(num_states, num_actions, horizon, rng, temperature)) return std::move(*fx);
  throw ArgumentError("make_identifiability_fixture: could not draw binding rewards");
}

IdentifiabilityReport identify_report(const TaskBundle& bundle, std::span<const AggregateOccupancy> experts,
                                      const AggregateOccupancy& unsafe_probe, const ScalarSignal& c_for_saturation,
                                      const std::optional<Eigen::VectorXd>& c_star, double tol, Gauge gauge) {
  IdentifiabilityReport rep;
  const NullSpaceResult ns = null_space_constraint(occupancy_difference_matrix(experts), unsafe_probe, tol, gauge);
  rep.null_dim = ns.null_dim;
  if (c_star && ns.identifiable()) {
    if (c_star->size() != ns.c_hat.size()) throw ShapeError("identify_report: c* size mismatch");
    rep.cosine_to_truth = std::abs(ns.c_hat.dot(*c_star)) / (ns.c_hat.norm() * c_star->norm());
  }
  rep.saturation = verify_saturation(bundle, c_for_saturation);
  rep.mixture_independence = check_mixture_independence(experts, 1e-6);
  rep.min_relint_entry = std::numeric_limits<double>::infinity();
  for (const auto& e : experts) rep.min_relint_entry = std::min(rep.min_relint_entry, min_reachable_entry(bundle.mdp, e));
  return rep;
}

}  // namespace iclab
