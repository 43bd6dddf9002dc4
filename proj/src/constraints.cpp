#include "iclab/constraints.hpp"

#include "iclab/errors.hpp"

#include <algorithm>
#include <cmath>

namespace iclab {

namespace {

constexpr int kMaxProjectionSweeps = 10000;
constexpr double kProjectionTol = 1e-8;

Eigen::VectorXd project_ball(const Eigen::VectorXd& x, double radius) {
  const double n = x.norm();
  if (n <= radius) return x;
  return x * (radius / n);
}

Eigen::VectorXd project_halfspace(const Eigen::VectorXd& x, const Halfspace& h) {
  const double excess = h.normal.dot(x) - h.offset;
  if (excess <= 0.0) return x;
  const double nn = h.normal.squaredNorm();
  if (nn == 0.0) return x;  // 0 <= offset is checked separately
  return x - (excess / nn) * h.normal;
}

void check_dim(const Eigen::VectorXd& v, int dim, const char* what) {
  if (v.size() != dim)
    throw ShapeError(std::string(what) + ": expected dimension " + std::to_string(dim) + ", got " +
                     std::to_string(v.size()));
}

}  // namespace

FeatureMap::FeatureMap(std::string id, int num_states, int num_actions, Eigen::MatrixXd phi)
    : id_(std::move(id)), num_states_(num_states), num_actions_(num_actions), phi_(std::move(phi)) {
  if (phi_.rows() != static_cast<Eigen::Index>(num_states) * num_actions)
    throw ShapeError("FeatureMap: expected S*A rows");
  if (phi_.cols() < 1) throw ShapeError("FeatureMap: dimension must be >= 1");
  if (!phi_.allFinite() || phi_.cwiseAbs().maxCoeff() > 1.0 + 1e-12)
    throw ArgumentError("FeatureMap '" + id_ + "': feature entries must lie in [-1, 1]");
}

Table FeatureMap::evaluate(const Eigen::VectorXd& w) const {
  check_dim(w, dim(), "FeatureMap::evaluate");
  const Eigen::VectorXd flat = phi_ * w;
  Table out(num_states_, num_actions_);
  for (int s = 0; s < num_states_; ++s)
    for (int a = 0; a < num_actions_; ++a) out(s, a) = flat(s * num_actions_ + a);
  return out;
}

ConstraintSet::ConstraintSet(int dim, double w_max, std::vector<Halfspace> halfspaces)
    : dim_(dim), w_max_(w_max), halfspaces_(std::move(halfspaces)) {
  if (dim_ < 1) throw DescriptorError("ConstraintSet: dimension must be >= 1");
  if (!(w_max_ >= 0.0) || !std::isfinite(w_max_))
    throw DescriptorError("ConstraintSet: ball radius must be finite and nonnegative");
  for (const auto& h : halfspaces_) {
    if (h.normal.size() != dim_) throw DescriptorError("ConstraintSet: halfspace dimension mismatch");
    if (!h.normal.allFinite() || !std::isfinite(h.offset))
      throw DescriptorError("ConstraintSet: non-finite halfspace");
  }
}

double ConstraintSet::residual(const Eigen::VectorXd& w) const {
  double r = std::max(0.0, w.norm() - w_max_);
  for (const auto& h : halfspaces_) r = std::max(r, h.normal.dot(w) - h.offset);
  return r;
}

Eigen::VectorXd ConstraintSet::project(const Eigen::VectorXd& x) const {
  check_dim(x, dim_, "ConstraintSet::project");
  if (halfspaces_.empty()) return project_ball(x, w_max_);

  const std::size_t m = halfspaces_.size() + 1;
  std::vector<Eigen::VectorXd> increments(m, Eigen::VectorXd::Zero(dim_));
  Eigen::VectorXd w = x;
  for (int sweep = 0; sweep < kMaxProjectionSweeps; ++sweep) {
    const Eigen::VectorXd before = w;
    for (std::size_t j = 0; j < m; ++j) {
      const Eigen::VectorXd y = w + increments[j];
      w = (j == 0) ? project_ball(y, w_max_) : project_halfspace(y, halfspaces_[j - 1]);
      increments[j] = y - w;
    }
    const double scale = 1.0 + x.norm();
    if (residual(w) <= kProjectionTol * 1e-2 && (w - before).norm() <= 1e-13 * scale) break;
  }
  return w;
}

void ConstraintSet::check_nonempty() const {
  for (const auto& h : halfspaces_)
    if (h.normal.squaredNorm() == 0.0 && h.offset < 0.0)
      throw DescriptorError("ConstraintSet: halfspace 0 <= " + std::to_string(h.offset) + " is empty");
  const Eigen::VectorXd w = project(Eigen::VectorXd::Zero(dim_));
  const double r = residual(w);
  if (r > 1e-6)
    throw DescriptorError("ConstraintSet: set appears empty (projection residual " +
                          std::to_string(r) + ")");
}

ConstraintSet ConstraintSet::with_halfspaces(std::span<const Halfspace> extra) const {
  std::vector<Halfspace> all = halfspaces_;
  all.insert(all.end(), extra.begin(), extra.end());
  return ConstraintSet(dim_, w_max_, std::move(all));
}

LinearConstraint::LinearConstraint(FeatureMapPtr fmap, Eigen::VectorXd weights, double w_max)
    : fmap_(std::move(fmap)), w_(std::move(weights)), w_max_(w_max) {
  if (!fmap_) throw ArgumentError("LinearConstraint: null feature map");
  check_dim(w_, fmap_->dim(), "LinearConstraint");
  if (!w_.allFinite()) throw ArgumentError("LinearConstraint: non-finite weights");
  if (w_.norm() > w_max_ * (1.0 + 1e-6) + 1e-9)
    throw ArgumentError("LinearConstraint: weights exceed the ball radius");
}

LinearConstraint LinearConstraint::zero(FeatureMapPtr fmap, double w_max) {
  const int d = fmap->dim();
  return LinearConstraint(std::move(fmap), Eigen::VectorXd::Zero(d), w_max);
}

ExportedSignal LinearConstraint::export_signal() const {
  Table v = values();
  int clipped = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double& x = v.data()[i];
    if (x > 1.0 || x < -1.0) {
      x = std::clamp(x, -1.0, 1.0);
      ++clipped;
    }
  }
  return {ScalarSignal(std::move(v)), clipped};
}

Eigen::VectorXd expected_features(const OccupancyMeasure& occ, const FeatureMap& fmap) {
  const Table agg = occ.aggregate();
  if (agg.rows() != fmap.num_states() || agg.cols() != fmap.num_actions())
    throw ShapeError("expected_features: occupancy and feature map shapes differ");
  Eigen::VectorXd flat(agg.size());
  for (int s = 0; s < fmap.num_states(); ++s)
    for (int a = 0; a < fmap.num_actions(); ++a) flat(s * fmap.num_actions() + a) = agg(s, a);
  return fmap.matrix().transpose() * flat;
}

Eigen::VectorXd trajectory_features(const Trajectory& traj, const FeatureMap& fmap) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(fmap.dim());
  for (const Step& st : traj.steps) {
    if (st.state < 0 || st.state >= fmap.num_states() || st.action < 0 ||
        st.action >= fmap.num_actions())
      throw ShapeError("trajectory_features: step out of range");
    out += fmap.matrix().row(st.state * fmap.num_actions() + st.action).transpose();
  }
  return out;
}

Eigen::VectorXd empirical_features(std::span<const Trajectory> trajs, const FeatureMap& fmap) {
  if (trajs.empty()) throw ArgumentError("empirical_features: no trajectories");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(fmap.dim());
  for (const auto& tr : trajs) sum += trajectory_features(tr, fmap);
  return sum / static_cast<double>(trajs.size());
}

Eigen::VectorXd ftrl_weights(std::span<const Eigen::VectorXd> loss_grads, double alpha,
                             const ConstraintSet& set) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ArgumentError("ftrl_update: alpha must be positive");
  set.check_nonempty();
  Eigen::VectorXd total = Eigen::VectorXd::Zero(set.dim());
  for (const auto& g : loss_grads) {
    check_dim(g, set.dim(), "ftrl_update");
    if (!g.allFinite()) throw ArgumentError("ftrl_update: non-finite gradient");
    total += g;
  }
  if (set.halfspaces().empty()) return project_ball(total / alpha, set.w_max());

  // Projected gradient ascent on <w, G> - alpha/2 |w|^2 with step 1/alpha.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(set.dim());
  const double step = 1.0 / alpha;
  for (int it = 0; it < kMaxProjectionSweeps; ++it) {
    const Eigen::VectorXd next = set.project(w + step * (total - alpha * w));
    const double moved = (next - w).norm();
    w = next;
    if (moved <= kProjectionTol) break;
  }
  return w;
}

LinearConstraint ftrl_update(std::span<const Eigen::VectorXd> loss_grads, double alpha,
                             const ConstraintSet& set, FeatureMapPtr fmap) {
  return LinearConstraint(std::move(fmap), ftrl_weights(loss_grads, alpha, set), set.w_max());
}

double default_alpha(double grad_bound, int rounds, double radius) {
  if (!(grad_bound > 0.0) || rounds < 1 || !(radius > 0.0))
    throw ArgumentError("default_alpha: bounds must be positive");
  return grad_bound * std::sqrt(static_cast<double>(rounds)) / radius;
}

ConstraintSet build_restricted_set(const ConstraintSet& base,
                                   std::span<const Eigen::VectorXd> expert_feature_vectors) {
  if (expert_feature_vectors.empty())
    throw ArgumentError("build_restricted_set: at least one expert is required");
  std::vector<Halfspace> extra;
  for (const auto& phi : expert_feature_vectors) {
    check_dim(phi, base.dim(), "build_restricted_set");
    extra.push_back({phi, 0.0});
  }
  ConstraintSet out = base.with_halfspaces(extra);
  try {
    out.check_nonempty();
  } catch (const DescriptorError& e) {
    throw InfeasibleRestrictionError(std::string("restricted constraint set is empty: ") + e.what());
  }
  return out;
}

Eigen::VectorXd regression_weights(std::span<const Eigen::VectorXd> learner_feature_vectors,
                                   std::span<const Eigen::VectorXd> expert_feature_vectors,
                                   const ConstraintSet& set) {
  if (learner_feature_vectors.empty() || expert_feature_vectors.empty())
    throw ArgumentError("regression_update: both sample lists must be nonempty");
  const Eigen::Index n = static_cast<Eigen::Index>(learner_feature_vectors.size() +
                                                   expert_feature_vectors.size());
  Eigen::MatrixXd X(n, set.dim());
  Eigen::VectorXd y(n);
  Eigen::Index row = 0;
  for (const auto& v : learner_feature_vectors) {
    check_dim(v, set.dim(), "regression_update");
    X.row(row) = v.transpose();
    y(row++) = 1.0;
  }
  for (const auto& v : expert_feature_vectors) {
    check_dim(v, set.dim(), "regression_update");
    X.row(row) = v.transpose();
    y(row++) = -1.0;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  cod.setThreshold(1e-12);
  const Eigen::VectorXd w = cod.solve(y);
  return set.project(w);
}

LinearConstraint regression_update(std::span<const Eigen::VectorXd> learner_feature_vectors,
                                   std::span<const Eigen::VectorXd> expert_feature_vectors,
                                   const ConstraintSet& set, FeatureMapPtr fmap) {
  return LinearConstraint(std::move(fmap),
                          regression_weights(learner_feature_vectors, expert_feature_vectors, set),
                          set.w_max());
}

}  // namespace iclab
