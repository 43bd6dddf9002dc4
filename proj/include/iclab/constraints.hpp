#pragma once

// Feature-linear constraint classes and the constraint player's updates.

#include "iclab/mdp.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace iclab {

/// phi(s, a) in R^d with every coordinate in [-1, 1]. Row s * A + a of matrix().
class FeatureMap {
 public:
  FeatureMap(std::string id, int num_states, int num_actions, Eigen::MatrixXd phi);

  const std::string& id() const { return id_; }
  int dim() const { return static_cast<int>(phi_.cols()); }
  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  const Eigen::MatrixXd& matrix() const { return phi_; }
  Eigen::VectorXd at(int s, int a) const { return phi_.row(s * num_actions_ + a).transpose(); }

  /// <w, phi(s, a)> as an S x A table, unclipped.
  Table evaluate(const Eigen::VectorXd& w) const;

 private:
  std::string id_;
  int num_states_;
  int num_actions_;
  Eigen::MatrixXd phi_;
};

using FeatureMapPtr = std::shared_ptr<const FeatureMap>;

struct Halfspace {
  Eigen::VectorXd normal;
  double offset = 0.0;  // <normal, w> <= offset
};

/// Ball of radius w_max intersected with optional halfspaces.
class ConstraintSet {
 public:
  ConstraintSet(int dim, double w_max, std::vector<Halfspace> halfspaces = {});

  int dim() const { return dim_; }
  double w_max() const { return w_max_; }
  const std::vector<Halfspace>& halfspaces() const { return halfspaces_; }

  /// Euclidean projection (Dykstra's alternating projections).
  Eigen::VectorXd project(const Eigen::VectorXd& x) const;
  /// Largest constraint violation of w (0 when feasible).
  double residual(const Eigen::VectorXd& w) const;
  /// Throws DescriptorError if projecting 0 does not land in the set.
  void check_nonempty() const;

  ConstraintSet with_halfspaces(std::span<const Halfspace> extra) const;

 private:
  int dim_;
  double w_max_;
  std::vector<Halfspace> halfspaces_;
};

struct ExportedSignal {
  ScalarSignal signal;
  int clip_count = 0;
};

class LinearConstraint {
 public:
  LinearConstraint(FeatureMapPtr fmap, Eigen::VectorXd weights, double w_max);
  static LinearConstraint zero(FeatureMapPtr fmap, double w_max);

  const FeatureMap& feature_map() const { return *fmap_; }
  const FeatureMapPtr& feature_map_ptr() const { return fmap_; }
  const Eigen::VectorXd& weights() const { return w_; }
  double w_max() const { return w_max_; }

  /// c_w(s, a), unclipped.
  Table values() const { return fmap_->evaluate(w_); }
  /// c_w clipped into [-1, 1]; the number of clipped entries is reported.
  ExportedSignal export_signal() const;
  double value_of(const Eigen::VectorXd& expected_feats) const { return w_.dot(expected_feats); }

 private:
  FeatureMapPtr fmap_;
  Eigen::VectorXd w_;
  double w_max_;
};

/// Phi(rho) = sum_t sum_{s,a} rho_t(s, a) phi(s, a).
Eigen::VectorXd expected_features(const OccupancyMeasure& occ, const FeatureMap& fmap);
Eigen::VectorXd trajectory_features(const Trajectory& traj, const FeatureMap& fmap);
/// Mean of trajectory_features over a nonempty batch.
Eigen::VectorXd empirical_features(std::span<const Trajectory> trajs, const FeatureMap& fmap);

/// argmax_w <w, sum g> - alpha/2 |w|^2 over the set.
Eigen::VectorXd ftrl_weights(std::span<const Eigen::VectorXd> loss_grads, double alpha,
                             const ConstraintSet& set);
LinearConstraint ftrl_update(std::span<const Eigen::VectorXd> loss_grads, double alpha,
                             const ConstraintSet& set, FeatureMapPtr fmap);
/// Default regularization strength G sqrt(N) / D.
double default_alpha(double grad_bound, int rounds, double radius);

/// Appends <phi_E_k, w> <= 0 for every expert; throws InfeasibleRestrictionError if empty.
ConstraintSet build_restricted_set(const ConstraintSet& base,
                                   std::span<const Eigen::VectorXd> expert_feature_vectors);

/// Minimum-norm least squares of totals to +1 (learner) / -1 (expert), projected to the set.
Eigen::VectorXd regression_weights(std::span<const Eigen::VectorXd> learner_feature_vectors,
                                   std::span<const Eigen::VectorXd> expert_feature_vectors,
                                   const ConstraintSet& set);
LinearConstraint regression_update(std::span<const Eigen::VectorXd> learner_feature_vectors,
                                   std::span<const Eigen::VectorXd> expert_feature_vectors,
                                   const ConstraintSet& set, FeatureMapPtr fmap);

}  // namespace iclab
