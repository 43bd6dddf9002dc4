#pragma once

// Inverse constraint learning as a game between a CRL policy player and an
// online constraint player. The same loop serves the single-task and the
// multi-task variants.

#include "iclab/constraints.hpp"
#include "iclab/solvers.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iclab {

enum class ConstraintUpdate { ftrl, regression };

/// How select_validation scores a candidate round.
enum class ValidationKey {
  /// Violation of the candidate's own constraint (degenerate for c_1 = 0).
  own_constraint,
  /// Worst normalized violation over every nonzero learned constraint.
  learned_family,
};

struct IclParams {
  int rounds = 10;
  /// FTRL regularization strength; <= 0 selects default_alpha(G, N, W_max).
  double alpha = 0.0;
  CrlParams crl;
  ConstraintUpdate update = ConstraintUpdate::ftrl;
  /// Trajectories sampled per round from the learner for the regression update.
  int regression_samples = 20;
  /// Optional cost-limit buffer added to delta, annealed linearly to 0 over the rounds.
  double anneal_buffer = 0.0;
  ValidationKey validation_key = ValidationKey::learned_family;
  /// Candidates whose per-step validation score is within this of the best count as ties.
  double selection_tol = 0.01;
};

/// One task as seen by the constraint game.
struct GameTask {
  std::string id;
  Table reward;
  /// Empirical expert feature expectation from training demos.
  Eigen::VectorXd expert_features;
  /// Per-demo feature totals (needed only by the regression update).
  std::vector<Eigen::VectorXd> expert_traj_features;
};

struct TaskRound {
  OccupancyMeasure occupancy;   // of the CRL mixture
  Eigen::VectorXd learner_features;
  double delta = 0.0;
  double loss = 0.0;            // this task's share of the round loss
  double reward_value = 0.0;    // J(pi, r_k)
  double final_lambda = 0.0;
  std::vector<double> lambda_trace;
};

struct IclRound {
  LinearConstraint constraint;  // c_i, chosen before the round was played
  int clip_count = 0;
  std::vector<TaskRound> tasks;
  Eigen::VectorXd grad;         // g_i
  double loss = 0.0;            // l_i(c_i) = <w_i, g_i>
  double regret = 0.0;          // Reg(i)
  double avg_regret = 0.0;      // Reg(i) / i
};

struct IclTrace {
  std::vector<IclRound> rounds;
  ConstraintSet set;
  double alpha = 0.0;
  int horizon = 0;
  bool zero_delta = false;
  int selected = 0;
  std::vector<std::string> warnings;
};

/// (1/T)(J(pi_i, c) - J(pi_E, c)).
double per_round_loss(const OccupancyMeasure& learner_occ, const Eigen::VectorXd& expert_features,
                      const LinearConstraint& c, int horizon);

/// argmax over the set of <w, sum g>; 0 when the sum vanishes.
Eigen::VectorXd best_in_hindsight_weights(std::span<const Eigen::VectorXd> loss_grads,
                                          const ConstraintSet& set);
LinearConstraint best_in_hindsight(std::span<const Eigen::VectorXd> loss_grads,
                                   const ConstraintSet& set, FeatureMapPtr fmap);

struct RegretStats {
  double regret = 0.0;
  double avg_regret = 0.0;
};
RegretStats regret(const IclTrace& trace, const ConstraintSet& set);
RegretStats regret_of(std::span<const Eigen::VectorXd> grads, std::span<const Eigen::VectorXd> played,
                      const ConstraintSet& set);

/// The game loop. zero_delta = false: each CRL uses delta = expert's empirical value
/// under c_i (single task). zero_delta = true: delta = 0 for every task (multi-task).
IclTrace run_constraint_game(const Mdp& mdp, std::span<const GameTask> tasks, FeatureMapPtr fmap,
                             const ConstraintSet& set, const IclParams& params, std::uint64_t seed,
                             bool zero_delta);

/// Single-task game; selection uses the validation demos (training demos if none given).
IclTrace icl(const Mdp& mdp, const ScalarSignal& r, std::span<const Trajectory> expert_trajs,
             FeatureMapPtr fmap, const ConstraintSet& set, const IclParams& params,
             std::uint64_t seed, std::span<const Trajectory> validation_trajs = {});

/// Index of the best round on held-out expert features (one vector per task).
int select_validation(const IclTrace& trace, std::span<const Eigen::VectorXd> validation_features,
                      const IclParams& params);
int select_validation(const IclTrace& trace, const Mdp& mdp, const ScalarSignal& r,
                      std::span<const Trajectory> validation_trajs, const IclParams& params);

/// The constraint of a round as a CRL-ready table (scaled to max-abs 1) and its delta scale.
struct CrlProblem {
  Table constraint;
  double scale = 1.0;
};
CrlProblem normalized_constraint(const LinearConstraint& c);

/// Re-solves CRL for round `index` of the trace on one task (policies are not stored).
CrlResult round_policy(const Mdp& mdp, const IclTrace& trace, int index, const Table& reward,
                       double delta, const CrlParams& params);

}  // namespace iclab
