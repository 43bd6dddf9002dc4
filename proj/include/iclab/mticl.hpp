#pragma once

// Multi-task inverse constraint learning: one constraint shared by K tasks that
// differ only in their rewards, plus the sample-size calculator and the
// realizability diagnostics that go with it.

#include "iclab/icl.hpp"

#include <optional>
#include <string>
#include <vector>

namespace iclab {

struct BundleTask {
  std::string id;
  ScalarSignal reward;
  std::vector<Trajectory> demos;
  /// Held-out demos of the same expert (optional).
  std::vector<Trajectory> validation_demos;
  std::optional<Policy> expert_policy;
};

struct TaskBundle {
  Mdp mdp;
  std::vector<BundleTask> tasks;

  /// Throws ShapeError / ArgumentError on an inconsistent bundle.
  void validate() const;
  std::vector<std::string> task_ids() const;
};

enum class MtValidation { held_out_demos, held_out_tasks };

struct MtIclParams {
  IclParams icl;
  MtValidation validation = MtValidation::held_out_tasks;
  /// Fraction of tasks held out for selection (at least one).
  double held_out_fraction = 0.2;
  /// Fraction of each task's demos held out when it carries no validation demos.
  double held_out_demo_fraction = 0.2;
};

struct ExtremePointCheck {
  Eigen::VectorXd weights;
  /// min over policies of J(pi, c_w).
  double min_value = 0.0;
  bool feasible = false;
};

struct AssumptionReport {
  /// Task-averaged exact (or empirical) expert value under c*; set only when c* is given.
  std::optional<double> truth_violation;
  std::optional<bool> truth_ok;
  bool restricted_nonempty = false;
  std::vector<ExtremePointCheck> extreme_points;
  bool extreme_points_ok = true;
  std::vector<std::string> messages;

  bool ok() const {
    return truth_ok.value_or(true) && restricted_nonempty && extreme_points_ok;
  }
};

struct MtIclResult {
  IclTrace trace;
  std::vector<std::string> train_ids;
  std::vector<std::string> held_out_ids;
  AssumptionReport assumption;
};

/// Per-task expert feature expectation from the training demos.
std::vector<Eigen::VectorXd> bundle_expert_features(const TaskBundle& bundle, const FeatureMap& fmap);

/// Shared-constraint game over the bundle with delta = 0 in every inner CRL call.
MtIclResult mticl(const TaskBundle& bundle, FeatureMapPtr fmap, const ConstraintSet& base_set,
                  const MtIclParams& params, std::uint64_t seed);

struct TaskOutcome {
  Eigen::VectorXd learner_features;
  Eigen::VectorXd expert_features;
};

/// Mean over tasks of J(pi^k, c) - J(pi_E^k, c).
double estimate_V(const LinearConstraint& c, std::span<const TaskOutcome> outcomes);
double estimate_V(const LinearConstraint& c, std::span<const OccupancyMeasure> learner_occs,
                  std::span<const Eigen::VectorXd> expert_features);

/// Tasks sufficient for uniform-over-class estimates of V within epsilon:
/// ceil((2T)^2 / (2 eps^2) * ln(2 |F| / delta)).
long long sample_complexity(long long class_size, double delta, double epsilon, int horizon);
/// Smaller count for the [0, 1]-valued expert-membership indicator:
/// ceil(ln(2 |F| / delta) / (2 eps^2)).
long long sample_complexity_indicator(long long class_size, double delta, double epsilon);

/// Number of tasks whose expert looks safe under c (empirical value <= tol).
int expert_membership_count(const LinearConstraint& c, std::span<const Eigen::VectorXd> expert_features,
                            double tol = 1e-9);

/// Realizability diagnostics; never throws on a failed check.
AssumptionReport check_assumption(const TaskBundle& bundle, FeatureMapPtr fmap, const ConstraintSet& set,
                                  const std::optional<ScalarSignal>& c_star, std::uint64_t seed = 0,
                                  int extreme_samples = 16);

}  // namespace iclab
