#include "iclab/mticl.hpp"

#include "iclab/errors.hpp"
#include "iclab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace iclab {

namespace {

int held_out_count(std::size_t n, double fraction) {
  const int k = static_cast<int>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  return std::clamp(k, 1, static_cast<int>(n) - 1);
}

}  // namespace

void TaskBundle::validate() const {
  if (tasks.empty()) throw ArgumentError("TaskBundle: at least one task is required");
  for (const auto& t : tasks) {
    if (t.reward.num_states() != mdp.num_states() || t.reward.num_actions() != mdp.num_actions())
      throw ShapeError("TaskBundle: reward of task '" + t.id + "' does not match the MDP");
    if (t.demos.empty()) throw ArgumentError("TaskBundle: task '" + t.id + "' has no demos");
    if (t.expert_policy && (t.expert_policy->horizon() != mdp.horizon() ||
                            t.expert_policy->num_states() != mdp.num_states() ||
                            t.expert_policy->num_actions() != mdp.num_actions()))
      throw ShapeError("TaskBundle: expert policy of task '" + t.id + "' does not match the MDP");
  }
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i].id == tasks[j].id) throw ArgumentError("TaskBundle: duplicate task id '" + tasks[i].id + "'");
}

std::vector<std::string> TaskBundle::task_ids() const {
  std::vector<std::string> out;
  for (const auto& t : tasks) out.push_back(t.id);
  return out;
}

std::vector<Eigen::VectorXd> bundle_expert_features(const TaskBundle& bundle, const FeatureMap& fmap) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& t : bundle.tasks) out.push_back(empirical_features(t.demos, fmap));
  return out;
}

MtIclResult mticl(const TaskBundle& bundle, FeatureMapPtr fmap, const ConstraintSet& base_set,
                  const MtIclParams& params, std::uint64_t seed) {
  bundle.validate();
  if (!fmap) throw ArgumentError("mticl: null feature map");
  if (!(params.held_out_fraction > 0.0 && params.held_out_fraction < 1.0) ||
      !(params.held_out_demo_fraction > 0.0 && params.held_out_demo_fraction < 1.0))
    throw ArgumentError("mticl: held-out fractions must lie in (0, 1)");

  MtValidation mode = params.validation;
  std::vector<std::string> warnings;
  if (mode == MtValidation::held_out_tasks && bundle.tasks.size() < 2) {
    warnings.push_back("a single task cannot be held out; validating on held-out demos");
    mode = MtValidation::held_out_demos;
  }

  // Split into the game's tasks and what selection sees.
  std::vector<GameTask> game;
  std::vector<Eigen::VectorXd> validation_features;
  std::vector<const BundleTask*> held_out;
  // Held-out tasks are spread evenly over the bundle; task lists are often ordered
  // (goal rows, angles), and a contiguous tail would be unrepresentative.
  const std::size_t n = bundle.tasks.size();
  std::vector<bool> is_held_out(n, false);
  if (mode == MtValidation::held_out_tasks) {
    const int h = held_out_count(n, params.held_out_fraction);
    for (int j = 0; j < h; ++j)
      is_held_out[static_cast<std::size_t>((j + 0.5) * static_cast<double>(n) / h)] = true;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const BundleTask& t = bundle.tasks[k];
    if (is_held_out[k]) {
      held_out.push_back(&t);
      validation_features.push_back(empirical_features(t.demos, *fmap));
      continue;
    }
    std::span<const Trajectory> train(t.demos);
    if (mode == MtValidation::held_out_demos) {
      if (!t.validation_demos.empty()) {
        validation_features.push_back(empirical_features(t.validation_demos, *fmap));
      } else if (t.demos.size() >= 2) {
        const int n_val = held_out_count(t.demos.size(), params.held_out_demo_fraction);
        train = train.first(t.demos.size() - n_val);
        validation_features.push_back(empirical_features(std::span<const Trajectory>(t.demos).last(n_val), *fmap));
      } else {
        warnings.push_back("task '" + t.id + "' has one demo; validating on it");
        validation_features.push_back(empirical_features(train, *fmap));
      }
    }
    GameTask g{t.id, t.reward.values(), empirical_features(train, *fmap), {}};
    for (const auto& tr : train) g.expert_traj_features.push_back(trajectory_features(tr, *fmap));
    game.push_back(std::move(g));
  }

  std::vector<Eigen::VectorXd> expert_features;
  for (const auto& g : game) expert_features.push_back(g.expert_features);
  ConstraintSet restricted = base_set;
  try {
    restricted = build_restricted_set(base_set, expert_features);
  } catch (const InfeasibleRestrictionError& e) {
    throw InfeasibleRestrictionError(std::string("mticl: no constraint in the class keeps every expert safe (") +
                                     e.what() + ")");
  }

  TaskBundle train_bundle{bundle.mdp, {}};
  for (std::size_t k = 0; k < n; ++k)
    if (!is_held_out[k]) train_bundle.tasks.push_back(bundle.tasks[k]);
  AssumptionReport assumption =
      check_assumption(train_bundle, fmap, restricted, std::nullopt, derive_seed(seed, "assumption"));
  if (!assumption.ok())
    for (const auto& m : assumption.messages) warnings.push_back("realizability check: " + m);

  MtIclResult out{run_constraint_game(bundle.mdp, game, fmap, restricted, params.icl, seed, /*zero_delta=*/true),
                  train_bundle.task_ids(), {}, std::move(assumption)};
  for (const auto* t : held_out) out.held_out_ids.push_back(t->id);
  out.trace.warnings.insert(out.trace.warnings.begin(), warnings.begin(), warnings.end());

  if (mode == MtValidation::held_out_demos) {
    out.trace.selected = select_validation(out.trace, validation_features, params.icl);
    return out;
  }

  // Held-out tasks: play every round's constraint on the unseen rewards and score those.
  IclTrace proxy{{}, out.trace.set, out.trace.alpha, out.trace.horizon, true, 0, {}};
  for (std::size_t i = 0; i < out.trace.rounds.size(); ++i) {
    const IclRound& src = out.trace.rounds[i];
    IclRound r{src.constraint, src.clip_count, {}, src.grad, src.loss, src.regret, src.avg_regret};
    for (const auto* t : held_out) {
      const CrlResult res = round_policy(bundle.mdp, out.trace, static_cast<int>(i), t->reward.values(), 0.0,
                                         params.icl.crl);
      TaskRound tr{res.occupancy, expected_features(res.occupancy, *fmap), 0.0, 0.0, res.achieved_value,
                   res.final_lambda, {}};
      r.tasks.push_back(std::move(tr));
    }
    proxy.rounds.push_back(std::move(r));
  }
  out.trace.selected = select_validation(proxy, validation_features, params.icl);
  return out;
}

double estimate_V(const LinearConstraint& c, std::span<const TaskOutcome> outcomes) {
  if (outcomes.empty()) throw ArgumentError("estimate_V: no task outcomes");
  double total = 0.0;
  for (const auto& o : outcomes) {
    if (o.learner_features.size() != c.weights().size() || o.expert_features.size() != c.weights().size())
      throw ShapeError("estimate_V: feature dimension mismatch");
    total += c.value_of(o.learner_features) - c.value_of(o.expert_features);
  }
  return total / static_cast<double>(outcomes.size());
}

double estimate_V(const LinearConstraint& c, std::span<const OccupancyMeasure> learner_occs,
                  std::span<const Eigen::VectorXd> expert_features) {
  if (learner_occs.size() != expert_features.size())
    throw ArgumentError("estimate_V: need one expert feature vector per learner occupancy");
  std::vector<TaskOutcome> outcomes;
  for (std::size_t k = 0; k < learner_occs.size(); ++k)
    outcomes.push_back({expected_features(learner_occs[k], c.feature_map()), expert_features[k]});
  return estimate_V(c, outcomes);
}

long long sample_complexity(long long class_size, double delta, double epsilon, int horizon) {
  if (class_size < 1) throw ArgumentError("sample_complexity: class size must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("sample_complexity: delta must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ArgumentError("sample_complexity: epsilon must be positive");
  if (horizon < 1) throw ArgumentError("sample_complexity: horizon must be >= 1");
  const double range = 2.0 * horizon;
  const double k = range * range / (2.0 * epsilon * epsilon) * std::log(2.0 * class_size / delta);
  return static_cast<long long>(std::ceil(k - 1e-9));
}

long long sample_complexity_indicator(long long class_size, double delta, double epsilon) {
  if (class_size < 1) throw ArgumentError("sample_complexity: class size must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("sample_complexity: delta must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ArgumentError("sample_complexity: epsilon must be positive");
  return static_cast<long long>(std::ceil(std::log(2.0 * class_size / delta) / (2.0 * epsilon * epsilon) - 1e-9));
}

int expert_membership_count(const LinearConstraint& c, std::span<const Eigen::VectorXd> expert_features,
                            double tol) {
  int n = 0;
  for (const auto& phi : expert_features) n += c.value_of(phi) <= tol ? 1 : 0;
  return n;
}

AssumptionReport check_assumption(const TaskBundle& bundle, FeatureMapPtr fmap, const ConstraintSet& set,
                                  const std::optional<ScalarSignal>& c_star, std::uint64_t seed,
                                  int extreme_samples) {
  AssumptionReport rep;
  const Mdp& mdp = bundle.mdp;

  if (c_star && !bundle.tasks.empty()) {
    double total = 0.0;
    for (const auto& t : bundle.tasks)
      total += t.expert_policy ? value(mdp, *t.expert_policy, *c_star) : empirical_value(t.demos, *c_star);
    const double v = total / static_cast<double>(bundle.tasks.size());
    rep.truth_violation = v;
    rep.truth_ok = v <= 1e-9;
    if (!*rep.truth_ok) rep.messages.push_back("experts violate the true constraint on average (" + std::to_string(v) + ")");
  }

  try {
    set.check_nonempty();
    rep.restricted_nonempty = true;
  } catch (const DescriptorError& e) {
    rep.messages.push_back(std::string("constraint set is empty: ") + e.what());
    return rep;
  }

  RandomStream rng(seed, "extreme-points");
  for (int i = 0; i < extreme_samples; ++i) {
    Eigen::VectorXd u(set.dim());
    for (int j = 0; j < set.dim(); ++j) u(j) = rng.normal();
    ExtremePointCheck chk;
    chk.weights = best_in_hindsight_weights(std::span<const Eigen::VectorXd>(&u, 1), set);
    const Table c = fmap->evaluate(chk.weights);
    chk.min_value = -optimal_value(mdp, -c);
    chk.feasible = chk.min_value <= 1e-9;
    if (!chk.feasible) {
      rep.extreme_points_ok = false;
      rep.messages.push_back("extreme point " + std::to_string(i) + " admits no safe policy (min value " +
                             std::to_string(chk.min_value) + ")");
    }
    rep.extreme_points.push_back(std::move(chk));
  }
  return rep;
}

}  // namespace iclab
