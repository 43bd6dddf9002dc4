#include "iclab/errors.hpp"
#include "iclab/harness.hpp"
#include "iclab/rng.hpp"

#include <cmath>

namespace iclab {

BaselineResult baseline_chou(const Mdp& mdp, const ScalarSignal& r, std::span<const Trajectory> expert_trajs,
                             FeatureMapPtr fmap, const ConstraintSet& set, int budget, std::uint64_t seed) {
  if (budget < 1) throw ArgumentError("baseline_chou: budget must be >= 1");
  if (expert_trajs.empty()) throw ArgumentError("baseline_chou: expert trajectories must be nonempty");
  if (!fmap || fmap->num_states() != mdp.num_states() || fmap->num_actions() != mdp.num_actions())
    throw ShapeError("baseline_chou: feature map does not match the MDP");
  if (set.dim() != fmap->dim()) throw ShapeError("baseline_chou: set and feature map dimensions differ");
  mdp.check_table(r.values(), "baseline reward");

  const double expert_return = empirical_value(expert_trajs, r);
  const double tie = 1e-9 * std::max(1.0, std::abs(expert_return));
  // Near-greedy to near-uniform; higher temperatures find the rarer high-return detours.
  static constexpr double kLadder[] = {0.01, 0.03, 0.1, 0.3, 1.0, 3.0};
  constexpr int L = static_cast<int>(std::size(kLadder));

  std::vector<Eigen::VectorXd> candidates;
  int sampled = 0;
  for (int k = 0; k < L; ++k) {
    const int n = budget / L + (k < budget % L ? 1 : 0);
    if (n == 0) continue;
    const Policy pi = soft_rl(mdp, r, kLadder[k]);
    for (const auto& traj : sample_trajectories(mdp, pi, n, derive_seed(seed, static_cast<std::uint64_t>(k)))) {
      ++sampled;
      if (trajectory_total(traj, r.values()) > expert_return + tie)
        candidates.push_back(trajectory_features(traj, *fmap));
    }
  }

  BaselineResult out{LinearConstraint::zero(fmap, set.w_max()), static_cast<int>(candidates.size()), sampled, {}};
  if (candidates.empty()) {
    out.warnings.push_back("no candidate trajectory beat the expert's return in " + std::to_string(sampled) +
                           " samples; returning the zero constraint");
    return out;
  }
  std::vector<Eigen::VectorXd> expert;
  for (const auto& t : expert_trajs) expert.push_back(trajectory_features(t, *fmap));
  out.constraint = regression_update(candidates, expert, set, fmap);
  return out;
}

}  // namespace iclab
