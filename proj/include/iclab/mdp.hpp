#pragma once

// Exact finite-horizon tabular MDP engine: dynamics, time-indexed policies,
// occupancy measures, values and trajectory sampling.
//
// Conventions: states and actions are zero-based; a horizon of T means
// exactly T decision steps t = 0..T-1; a "table" is an S x A matrix.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace iclab {

using Table = Eigen::MatrixXd;

class Mdp {
 public:
  struct Successor {
    int state;
    double prob;
  };

  /// `transition` is row-major [s][a][s'] with S*A*S entries.
  Mdp(int num_states, int num_actions, int horizon, std::vector<double> transition,
      Eigen::VectorXd initial_dist);

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  int horizon() const { return horizon_; }

  double transition(int s, int a, int next) const {
    return transition_[(static_cast<std::size_t>(s) * num_actions_ + a) * num_states_ + next];
  }
  const std::vector<double>& transition_table() const { return transition_; }
  const Eigen::VectorXd& initial_dist() const { return initial_dist_; }

  /// Nonzero successors of (s, a).
  std::span<const Successor> successors(int s, int a) const {
    const std::size_t row = static_cast<std::size_t>(s) * num_actions_ + a;
    return {successors_.data() + offsets_[row], successors_.data() + offsets_[row + 1]};
  }

  /// Q-style lookahead: out(s, a) = sum_s' P(s'|s,a) next_value(s').
  Table lookahead(const Eigen::VectorXd& next_value) const;
  /// State distribution after one step from state-action mass `rho`.
  Eigen::VectorXd push_forward(const Table& rho) const;

  /// Same dynamics and initial distribution, different horizon.
  Mdp with_horizon(int horizon) const;
  /// Same dynamics and horizon, different initial distribution.
  Mdp with_initial_dist(Eigen::VectorXd initial_dist) const;

  void check_table(const Table& t, const char* what) const;

 private:
  int num_states_;
  int num_actions_;
  int horizon_;
  std::vector<double> transition_;
  Eigen::VectorXd initial_dist_;
  std::vector<Successor> successors_;
  std::vector<std::size_t> offsets_;
};

/// A bounded per-(state, action) function with entries in [-1, 1].
class ScalarSignal {
 public:
  explicit ScalarSignal(Table values);
  static ScalarSignal zeros(int num_states, int num_actions);
  static ScalarSignal constant(int num_states, int num_actions, double v);

  const Table& values() const { return values_; }
  double operator()(int s, int a) const { return values_(s, a); }
  int num_states() const { return static_cast<int>(values_.rows()); }
  int num_actions() const { return static_cast<int>(values_.cols()); }

 private:
  Table values_;
};

/// Time-indexed stochastic policy pi_t(a|s).
class Policy {
 public:
  explicit Policy(std::vector<Table> action_probs);
  static Policy uniform(int horizon, int num_states, int num_actions);
  /// actions[t][s] is the chosen action.
  static Policy deterministic(const std::vector<std::vector<int>>& actions, int num_actions);

  int horizon() const { return static_cast<int>(probs_.size()); }
  int num_states() const { return static_cast<int>(probs_.front().rows()); }
  int num_actions() const { return static_cast<int>(probs_.front().cols()); }
  const Table& at(int t) const { return probs_[t]; }
  double operator()(int t, int s, int a) const { return probs_[t](s, a); }
  const std::vector<Table>& tables() const { return probs_; }

  bool operator==(const Policy& other) const;

 private:
  std::vector<Table> probs_;
};

/// Trajectory-level mixture: a component is drawn once, then followed.
class MixturePolicy {
 public:
  MixturePolicy(std::vector<Policy> components, std::vector<double> weights);
  static MixturePolicy single(Policy p) { return MixturePolicy({std::move(p)}, {1.0}); }

  const std::vector<Policy>& components() const { return components_; }
  const std::vector<double>& weights() const { return weights_; }

 private:
  std::vector<Policy> components_;
  std::vector<double> weights_;
};

/// Per-timestep state-action visitation rho_t(s, a).
class OccupancyMeasure {
 public:
  explicit OccupancyMeasure(std::vector<Table> rho) : rho_(std::move(rho)) {}

  int horizon() const { return static_cast<int>(rho_.size()); }
  const Table& at(int t) const { return rho_[t]; }
  const std::vector<Table>& tables() const { return rho_; }
  /// Sum over timesteps; total mass equals the horizon.
  Table aggregate() const;

  /// Largest violation of per-step normalization and Bellman flow.
  double flow_residual(const Mdp& mdp) const;

 private:
  std::vector<Table> rho_;
};

struct Step {
  int state;
  int action;
  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::vector<Step> steps;
  bool operator==(const Trajectory&) const = default;
};

OccupancyMeasure occupancy(const Mdp& mdp, const Policy& policy);
OccupancyMeasure occupancy(const Mdp& mdp, const MixturePolicy& policy);

/// <rho, f> summed over time.
double inner(const OccupancyMeasure& occ, const Table& f);

double value(const Mdp& mdp, const Policy& policy, const ScalarSignal& signal);
double value(const Mdp& mdp, const MixturePolicy& policy, const ScalarSignal& signal);
/// Unbounded-signal variant used by the solvers.
double value(const Mdp& mdp, const Policy& policy, const Table& signal);

/// Policy evaluation by backward dynamic programming (independent of occupancy()).
double policy_value_dp(const Mdp& mdp, const Policy& policy, const Table& signal);

/// Markov policy with the same occupancy measure (uniform where unvisited).
Policy to_markov(const OccupancyMeasure& occ);
Policy to_markov(const Mdp& mdp, const MixturePolicy& mixture);

/// (1 - eps) * pi + eps * uniform, per step.
Policy with_action_noise(const Policy& policy, double eps);

std::vector<Trajectory> sample_trajectories(const Mdp& mdp, const Policy& policy, int n,
                                            std::uint64_t seed);
std::vector<Trajectory> sample_trajectories(const Mdp& mdp, const MixturePolicy& policy, int n,
                                            std::uint64_t seed);

double trajectory_total(const Trajectory& traj, const Table& f);
double empirical_value(std::span<const Trajectory> trajectories, const ScalarSignal& signal);
double empirical_value(std::span<const Trajectory> trajectories, const Table& signal);

}  // namespace iclab
