#pragma once

// Random instances and brute-force oracles shared by the unit tests. The
// oracles deliberately avoid the library's solvers.

#include "iclab/mdp.hpp"
#include "iclab/rng.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace testing {

using iclab::Mdp;
using iclab::Policy;
using iclab::Table;

inline Mdp random_mdp(int S, int A, int T, std::uint64_t seed) {
  iclab::RandomStream rng(seed, "mdp");
  std::vector<double> P(static_cast<std::size_t>(S) * A * S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) {
      double sum = 0.0;
      for (int n = 0; n < S; ++n) {
        const double u = rng.uniform();
        // Sparse-ish rows so some transitions are exactly zero.
        const double w = u < 0.3 ? 0.0 : u;
        P[(static_cast<std::size_t>(s) * A + a) * S + n] = w;
        sum += w;
      }
      if (sum == 0.0) {
        P[(static_cast<std::size_t>(s) * A + a) * S + s] = 1.0;
        sum = 1.0;
      }
      for (int n = 0; n < S; ++n) P[(static_cast<std::size_t>(s) * A + a) * S + n] /= sum;
    }
  Eigen::VectorXd init(S);
  for (int s = 0; s < S; ++s) init(s) = 0.1 + rng.uniform();
  init /= init.sum();
  return Mdp(S, A, T, std::move(P), init);
}

inline Table random_table(int S, int A, std::uint64_t seed, const char* stream = "table") {
  iclab::RandomStream rng(seed, stream);
  Table t(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) t(s, a) = 2.0 * rng.uniform() - 1.0;
  return t;
}

inline Policy random_policy(int T, int S, int A, std::uint64_t seed) {
  iclab::RandomStream rng(seed, "policy");
  std::vector<Table> probs;
  for (int t = 0; t < T; ++t) {
    Table p(S, A);
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) p(s, a) = 0.05 + rng.uniform();
      p.row(s) /= p.row(s).sum();
    }
    probs.push_back(p);
  }
  return Policy(std::move(probs));
}

/// Bandit: one state, `payoff.size()` actions, horizon T.
inline Mdp bandit(int A, int T = 1) {
  std::vector<double> P(static_cast<std::size_t>(A), 1.0);
  return Mdp(1, A, T, std::move(P), Eigen::VectorXd::Ones(1));
}

inline Table row(std::initializer_list<double> v) {
  Table t(1, static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) t(0, i++) = x;
  return t;
}

/// Forward simulation of the exact state distribution, written independently of occupancy().
inline double forward_value(const Mdp& mdp, const Policy& pi, const Table& f) {
  const int S = mdp.num_states(), A = mdp.num_actions();
  Eigen::VectorXd d = mdp.initial_dist();
  double total = 0.0;
  for (int t = 0; t < mdp.horizon(); ++t) {
    Eigen::VectorXd next = Eigen::VectorXd::Zero(S);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const double m = d(s) * pi(t, s, a);
        total += m * f(s, a);
        for (int n = 0; n < S; ++n) next(n) += m * mdp.transition(s, a, n);
      }
    d = next;
  }
  return total;
}

/// Calls `fn` with every deterministic nonstationary policy (A^(S*T) of them).
inline void for_each_deterministic(int T, int S, int A, const std::function<void(const Policy&)>& fn) {
  const int slots = T * S;
  std::vector<int> digits(slots, 0);
  while (true) {
    std::vector<std::vector<int>> actions(T, std::vector<int>(S));
    for (int k = 0; k < slots; ++k) actions[k / S][k % S] = digits[k];
    fn(Policy::deterministic(actions, A));
    int k = 0;
    while (k < slots && ++digits[k] == A) digits[k++] = 0;
    if (k == slots) break;
  }
}

/// Exhaustive best value over deterministic policies.
inline double brute_force_optimum(const Mdp& mdp, const Table& f) {
  double best = -1e300;
  for_each_deterministic(mdp.horizon(), mdp.num_states(), mdp.num_actions(),
                         [&](const Policy& p) { best = std::max(best, forward_value(mdp, p, f)); });
  return best;
}

/// Constrained optimum over mixtures of deterministic policies: the (J_r, J_c) points of all
/// deterministic policies span the achievable set, and a two-point mix suffices.
inline double brute_force_constrained(const Mdp& mdp, const Table& r, const Table& c, double delta) {
  std::vector<std::pair<double, double>> pts;
  for_each_deterministic(mdp.horizon(), mdp.num_states(), mdp.num_actions(), [&](const Policy& p) {
    pts.emplace_back(forward_value(mdp, p, r), forward_value(mdp, p, c));
  });
  double best = -1e300;
  for (const auto& [ri, ci] : pts) {
    if (ci <= delta) best = std::max(best, ri);
    for (const auto& [rj, cj] : pts) {
      if (ci <= delta || cj >= delta) continue;
      // ci > delta > cj: mix to land exactly on the boundary.
      const double w = (delta - cj) / (ci - cj);
      best = std::max(best, w * ri + (1.0 - w) * rj);
    }
  }
  return best;
}

}  // namespace testing
