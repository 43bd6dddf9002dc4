#include "iclab/solvers.hpp"

#include "iclab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace iclab {

double CrlParams::learning_rate(int i) const {
  switch (schedule) {
    case StepSchedule::constant:
      return eta0;
    case StepSchedule::inv_sqrt:
      break;
  }
  return eta0 / std::sqrt(static_cast<double>(i));
}

void CrlParams::validate() const {
  if (num_iters < 1) throw ArgumentError("CrlParams: num_iters must be >= 1");
  if (!(eta0 > 0.0)) throw ArgumentError("CrlParams: eta0 must be positive");
  if (pid.kp < 0.0 || pid.ki < 0.0 || pid.kd < 0.0)
    throw ArgumentError("CrlParams: PID gains must be nonnegative");
  if (!(lambda_max > 0.0)) throw ArgumentError("CrlParams: lambda_max must be positive");
}

namespace {

struct Greedy {
  std::vector<std::vector<int>> actions;
  double value;
};

Greedy backward_induction(const Mdp& mdp, const Table& signal) {
  mdp.check_table(signal, "signal");
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  std::vector<std::vector<int>> actions(mdp.horizon(), std::vector<int>(S, 0));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(S);
  for (int t = mdp.horizon() - 1; t >= 0; --t) {
    const Table q = signal + mdp.lookahead(v);
    Eigen::VectorXd next(S);
    for (int s = 0; s < S; ++s) {
      const double best = q.row(s).maxCoeff();
      const double tol = 1e-12 * std::max(1.0, std::abs(best));
      int pick = 0;
      for (int a = 0; a < A; ++a) {
        if (q(s, a) >= best - tol) {
          pick = a;
          break;
        }
      }
      actions[t][s] = pick;
      next(s) = q(s, pick);
    }
    v = std::move(next);
  }
  return {std::move(actions), mdp.initial_dist().dot(v)};
}

std::uint64_t hash_actions(const std::vector<std::vector<int>>& actions) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& row : actions)
    for (int a : row) {
      h ^= static_cast<std::uint64_t>(a) + 0x9e3779b97f4a7c15ULL;
      h *= 0x100000001b3ULL;
    }
  return h;
}

}  // namespace

Policy rl_best_response(const Mdp& mdp, const Table& signal) {
  return Policy::deterministic(backward_induction(mdp, signal).actions, mdp.num_actions());
}

Policy rl_best_response(const Mdp& mdp, const ScalarSignal& signal) {
  return rl_best_response(mdp, signal.values());
}

double optimal_value(const Mdp& mdp, const Table& signal) {
  return backward_induction(mdp, signal).value;
}

Policy soft_rl(const Mdp& mdp, const Table& signal, double temperature) {
  if (!(temperature > 0.0)) throw ArgumentError("soft_rl: temperature must be positive");
  mdp.check_table(signal, "signal");
  const int S = mdp.num_states();
  std::vector<Table> probs(mdp.horizon());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(S);
  for (int t = mdp.horizon() - 1; t >= 0; --t) {
    const Table q = signal + mdp.lookahead(v);
    Table p(S, mdp.num_actions());
    Eigen::VectorXd next(S);
    for (int s = 0; s < S; ++s) {
      const double m = q.row(s).maxCoeff();
      const Eigen::ArrayXd z = ((q.row(s).array() - m) / temperature).exp().transpose();
      const double total = z.sum();
      p.row(s) = (z / total).transpose();
      next(s) = m + temperature * std::log(total);
    }
    probs[t] = std::move(p);
    v = std::move(next);
  }
  return Policy(std::move(probs));
}

Policy soft_rl(const Mdp& mdp, const ScalarSignal& signal, double temperature) {
  return soft_rl(mdp, signal.values(), temperature);
}

CrlResult crl(const Mdp& mdp, const Table& r, const Table& c, double delta,
              const CrlParams& params) {
  params.validate();
  mdp.check_table(r, "reward");
  mdp.check_table(c, "constraint");
  const int T = mdp.horizon();
  if (std::abs(delta) > T + 1e-12) throw ArgumentError("crl: |delta| must not exceed the horizon");

  const int N = params.num_iters;
  std::vector<double> lambda_trace;
  lambda_trace.reserve(N);

  std::vector<std::vector<std::vector<int>>> unique_actions;
  std::vector<int> counts;
  std::unordered_multimap<std::uint64_t, std::size_t> index;
  std::vector<Table> rho_sum(T, Table::Zero(mdp.num_states(), mdp.num_actions()));
  std::size_t last_unique = 0;

  double lambda = 0.0;
  double integral = 0.0;
  double prev_error = 0.0;
  for (int i = 1; i <= N; ++i) {
    lambda_trace.push_back(lambda);
    Greedy br = backward_induction(mdp, r - lambda * c);

    const std::uint64_t h = hash_actions(br.actions);
    std::size_t slot = unique_actions.size();
    auto [lo, hi] = index.equal_range(h);
    for (auto it = lo; it != hi; ++it) {
      if (unique_actions[it->second] == br.actions) {
        slot = it->second;
        break;
      }
    }
    const Policy pi = Policy::deterministic(br.actions, mdp.num_actions());
    const OccupancyMeasure occ = occupancy(mdp, pi);
    if (slot == unique_actions.size()) {
      unique_actions.push_back(std::move(br.actions));
      counts.push_back(0);
      index.emplace(h, slot);
    }
    ++counts[slot];
    last_unique = slot;
    for (int t = 0; t < T; ++t) rho_sum[t] += occ.at(t);

    const double error = inner(occ, c) - delta;
    if (params.dual_mode == DualMode::classic) {
      lambda = std::clamp(lambda + params.learning_rate(i) * error, 0.0, params.lambda_max);
    } else {
      const double derivative = (i == 1) ? 0.0 : error - prev_error;
      integral = std::clamp(integral + params.pid.ki * error, 0.0, params.lambda_max);
      lambda = std::clamp(integral + params.pid.kp * error + params.pid.kd * derivative, 0.0,
                          params.lambda_max);
    }
    prev_error = error;
  }

  std::vector<Policy> components;
  std::vector<double> weights;
  components.reserve(unique_actions.size());
  for (std::size_t k = 0; k < unique_actions.size(); ++k) {
    components.push_back(Policy::deterministic(unique_actions[k], mdp.num_actions()));
    weights.push_back(static_cast<double>(counts[k]) / N);
  }
  for (auto& r_t : rho_sum) r_t /= static_cast<double>(N);
  OccupancyMeasure occ(std::move(rho_sum));
  Policy last = components[last_unique];

  CrlResult out{MixturePolicy(std::move(components), std::move(weights)), std::move(last),
                std::move(occ), std::move(lambda_trace)};
  out.final_lambda = lambda;
  out.achieved_value = inner(out.occupancy, r);
  out.achieved_violation = inner(out.occupancy, c);
  out.delta = delta;
  return out;
}

CrlResult crl(const Mdp& mdp, const ScalarSignal& r, const ScalarSignal& c, double delta,
              const CrlParams& params) {
  return crl(mdp, r.values(), c.values(), delta, params);
}

double crl_dual_oracle(const Mdp& mdp, const ScalarSignal& r, const ScalarSignal& c,
                       double delta, std::span<const double> lambda_grid) {
  if (lambda_grid.empty()) throw ArgumentError("crl_dual_oracle: empty grid");
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : lambda_grid) {
    if (lambda < 0.0) throw ArgumentError("crl_dual_oracle: grid entries must be >= 0");
    best = std::min(best, optimal_value(mdp, r.values() - lambda * c.values()) + lambda * delta);
  }
  return best;
}

Policy soft_constrained_policy(const Mdp& mdp, const Table& r, const Table& c, double delta,
                               double temperature, double* lambda_out) {
  auto violation = [&](double lambda, Policy* keep) {
    Policy pi = soft_rl(mdp, r - lambda * c, temperature);
    const double v = value(mdp, pi, c);
    if (keep) *keep = std::move(pi);
    return v;
  };
  Policy pi = soft_rl(mdp, r, temperature);
  if (value(mdp, pi, c) <= delta) {
    if (lambda_out) *lambda_out = 0.0;
    return pi;
  }
  double lo = 0.0;
  double hi = 1.0;
  while (violation(hi, nullptr) > delta) {
    hi *= 2.0;
    if (hi > 1e8) throw ArgumentError("soft_constrained_policy: constraint level is infeasible");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (violation(mid, nullptr) > delta)
      lo = mid;
    else
      hi = mid;
  }
  violation(hi, &pi);
  if (lambda_out) *lambda_out = hi;
  return pi;
}

}  // namespace iclab
