#include "iclab/icl.hpp"

#include "iclab/errors.hpp"
#include "iclab/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace iclab {

namespace {

// Largest number of halfspaces for which best_in_hindsight enumerates active sets.
constexpr std::size_t kMaxEnumeratedHalfspaces = 14;

// max <G, w> over {w : A w = b, |w| <= R}; nullopt if the affine set misses the ball.
std::optional<Eigen::VectorXd> sphere_candidate(const Eigen::VectorXd& G, const Eigen::MatrixXd& A,
                                                const Eigen::VectorXd& b, double R) {
  Eigen::VectorXd w0 = Eigen::VectorXd::Zero(G.size());
  Eigen::VectorXd u = G;
  if (A.rows() > 0) {
    // Work in the k x k Gram system; k is small.
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> gram(A * A.transpose());
    gram.setThreshold(1e-12);
    w0 = A.transpose() * gram.solve(b);
    if ((A * w0 - b).cwiseAbs().maxCoeff() > 1e-9) return std::nullopt;
    u = G - A.transpose() * gram.solve(A * G);
  }
  const double slack = R * R - w0.squaredNorm();
  if (slack < -1e-12) return std::nullopt;
  const double un = u.norm();
  if (un <= 1e-14 * std::max(1.0, G.norm())) return w0;
  return Eigen::VectorXd(w0 + std::sqrt(std::max(0.0, slack)) * u / un);
}

double per_step_gap(const Eigen::VectorXd& w, const Eigen::VectorXd& learner,
                    const Eigen::VectorXd& expert, int horizon) {
  return w.dot(learner - expert) / horizon;
}

}  // namespace

double per_round_loss(const OccupancyMeasure& learner_occ, const Eigen::VectorXd& expert_features,
                      const LinearConstraint& c, int horizon) {
  if (horizon < 1) throw ArgumentError("per_round_loss: horizon must be >= 1");
  const Eigen::VectorXd phi = expected_features(learner_occ, c.feature_map());
  if (expert_features.size() != phi.size()) throw ShapeError("per_round_loss: feature dimension mismatch");
  return per_step_gap(c.weights(), phi, expert_features, horizon);
}

Eigen::VectorXd best_in_hindsight_weights(std::span<const Eigen::VectorXd> loss_grads,
                                          const ConstraintSet& set) {
  if (loss_grads.empty()) throw ArgumentError("best_in_hindsight: empty history");
  Eigen::VectorXd G = Eigen::VectorXd::Zero(set.dim());
  for (const auto& g : loss_grads) {
    if (g.size() != set.dim()) throw ShapeError("best_in_hindsight: gradient dimension mismatch");
    G += g;
  }
  const double gn = G.norm();
  if (gn == 0.0) return Eigen::VectorXd::Zero(set.dim());
  if (set.halfspaces().empty()) return set.w_max() * G / gn;

  set.check_nonempty();
  const auto& hs = set.halfspaces();
  const double feas_tol = 1e-9 * std::max(1.0, set.w_max());
  Eigen::VectorXd best = set.project(Eigen::VectorXd::Zero(set.dim()));
  double best_val = G.dot(best);
  auto consider = [&](const Eigen::VectorXd& w) {
    if (set.residual(w) > feas_tol) return;
    const double v = G.dot(w);
    if (v > best_val) {
      best_val = v;
      best = w;
    }
  };

  // Far projection along G approaches the maximizer from inside.
  for (double s : {1e2, 1e4, 1e6}) consider(set.project(s * set.w_max() * G / gn));

  if (hs.size() <= kMaxEnumeratedHalfspaces) {
    const std::size_t m = hs.size();
    const int d = set.dim();
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      const int k = std::popcount(mask);
      if (k > d) continue;
      Eigen::MatrixXd A(k, d);
      Eigen::VectorXd b(k);
      int row = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (!(mask & (1u << j))) continue;
        A.row(row) = hs[j].normal.transpose();
        b(row++) = hs[j].offset;
      }
      if (auto w = sphere_candidate(G, A, b, set.w_max())) consider(*w);
      if (k == d) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (lu.isInvertible()) consider(lu.solve(b));
      }
    }
  }
  return best;
}

LinearConstraint best_in_hindsight(std::span<const Eigen::VectorXd> loss_grads,
                                   const ConstraintSet& set, FeatureMapPtr fmap) {
  return LinearConstraint(std::move(fmap), best_in_hindsight_weights(loss_grads, set), set.w_max());
}

RegretStats regret_of(std::span<const Eigen::VectorXd> grads, std::span<const Eigen::VectorXd> played,
                      const ConstraintSet& set) {
  if (grads.empty() || grads.size() != played.size())
    throw ArgumentError("regret: need one played point per gradient");
  const Eigen::VectorXd comparator = best_in_hindsight_weights(grads, set);
  double total = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) total += comparator.dot(grads[i]) - played[i].dot(grads[i]);
  return {total, total / static_cast<double>(grads.size())};
}

RegretStats regret(const IclTrace& trace, const ConstraintSet& set) {
  std::vector<Eigen::VectorXd> grads;
  std::vector<Eigen::VectorXd> played;
  for (const auto& r : trace.rounds) {
    grads.push_back(r.grad);
    played.push_back(r.constraint.weights());
  }
  return regret_of(grads, played, set);
}

CrlProblem normalized_constraint(const LinearConstraint& c) {
  Table v = c.values();
  const double m = v.cwiseAbs().maxCoeff();
  if (m > 0.0) v /= m;
  return {std::move(v), m > 0.0 ? m : 1.0};
}

IclTrace run_constraint_game(const Mdp& mdp, std::span<const GameTask> tasks, FeatureMapPtr fmap,
                             const ConstraintSet& set, const IclParams& params, std::uint64_t seed,
                             bool zero_delta) {
  if (tasks.empty()) throw ArgumentError("constraint game: at least one task is required");
  if (params.rounds < 1) throw ArgumentError("constraint game: rounds must be >= 1");
  if (!fmap || fmap->num_states() != mdp.num_states() || fmap->num_actions() != mdp.num_actions())
    throw ShapeError("constraint game: feature map does not match the MDP");
  if (set.dim() != fmap->dim()) throw ShapeError("constraint game: set and feature map dimensions differ");
  for (const auto& t : tasks) {
    mdp.check_table(t.reward, "task reward");
    if (t.expert_features.size() != fmap->dim()) throw ShapeError("constraint game: expert feature size");
  }
  set.check_nonempty();

  const int T = mdp.horizon();
  const int N = params.rounds;
  const double K = static_cast<double>(tasks.size());
  // |g| <= 2 sqrt(d) since every feature coordinate lies in [-1, 1].
  const double grad_bound = 2.0 * std::sqrt(static_cast<double>(fmap->dim()));
  const double alpha = params.alpha > 0.0
                           ? params.alpha
                           : default_alpha(grad_bound, N, std::max(set.w_max(), 1e-12));

  IclTrace trace{{}, set, alpha, T, zero_delta, 0, {}};
  std::vector<Eigen::VectorXd> grads;
  std::vector<Eigen::VectorXd> played;
  std::vector<Eigen::VectorXd> learner_samples;
  std::vector<Eigen::VectorXd> expert_samples;
  if (params.update == ConstraintUpdate::regression) {
    for (const auto& t : tasks) {
      if (t.expert_traj_features.empty())
        throw ArgumentError("constraint game: regression update needs per-demo expert features");
      expert_samples.insert(expert_samples.end(), t.expert_traj_features.begin(), t.expert_traj_features.end());
    }
  }

  LinearConstraint current = LinearConstraint::zero(fmap, set.w_max());
  for (int i = 1; i <= N; ++i) {
    const CrlProblem prob = normalized_constraint(current);
    IclRound round{current, current.export_signal().clip_count, {}, Eigen::VectorXd::Zero(fmap->dim()), 0.0, 0.0, 0.0};
    const double anneal =
        params.anneal_buffer * T * (N > 1 ? 1.0 - static_cast<double>(i - 1) / (N - 1) : 1.0);

    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const GameTask& task = tasks[k];
      const double delta_raw = zero_delta ? 0.0 : current.value_of(task.expert_features);
      const double delta = std::clamp(delta_raw / prob.scale + anneal, -static_cast<double>(T),
                                      static_cast<double>(T));
      CrlResult res = crl(mdp, task.reward, prob.constraint, delta, params.crl);
      TaskRound tr{res.occupancy, expected_features(res.occupancy, *fmap), 0.0, 0.0, 0.0, 0.0, {}};
      tr.delta = delta * prob.scale;
      tr.loss = per_step_gap(current.weights(), tr.learner_features, task.expert_features, T);
      tr.reward_value = res.achieved_value;
      tr.final_lambda = res.final_lambda;
      tr.lambda_trace = std::move(res.lambda_trace);
      round.grad += (tr.learner_features - task.expert_features) / (T * K);

      if (params.update == ConstraintUpdate::regression) {
        const auto samples = sample_trajectories(
            mdp, res.mixture, params.regression_samples,
            derive_seed(derive_seed(seed, static_cast<std::uint64_t>(i)), task.id.empty() ? std::string_view("task") : std::string_view(task.id)));
        for (const auto& tr_s : samples) learner_samples.push_back(trajectory_features(tr_s, *fmap));
      }
      round.tasks.push_back(std::move(tr));
    }

    round.loss = current.weights().dot(round.grad);
    grads.push_back(round.grad);
    played.push_back(current.weights());
    const RegretStats rs = regret_of(grads, played, set);
    round.regret = rs.regret;
    round.avg_regret = rs.avg_regret;
    trace.rounds.push_back(std::move(round));

    if (i == N) break;
    if (params.update == ConstraintUpdate::ftrl)
      current = ftrl_update(grads, alpha, set, fmap);
    else
      current = regression_update(learner_samples, expert_samples, set, fmap);
  }
  return trace;
}

int select_validation(const IclTrace& trace, std::span<const Eigen::VectorXd> validation_features,
                      const IclParams& params) {
  const std::size_t n = trace.rounds.size();
  if (n == 0) throw ArgumentError("select_validation: empty trace");
  if (validation_features.empty()) throw ArgumentError("select_validation: empty validation set");
  const std::size_t K = trace.rounds.front().tasks.size();
  if (validation_features.size() != K)
    throw ArgumentError("select_validation: need one validation feature vector per task");
  const int T = trace.horizon;

  auto violation = [&](const IclRound& cand, const Eigen::VectorXd& w) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      total += std::max(0.0, per_step_gap(w, cand.tasks[k].learner_features, validation_features[k], T));
    return total / static_cast<double>(K);
  };

  // Each learned constraint judges on the scale CRL solved it on (max-abs 1).
  std::vector<double> judge_scale(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) judge_scale[j] = trace.rounds[j].constraint.values().cwiseAbs().maxCoeff();
  std::vector<double> score(n, 0.0);
  std::vector<double> reward(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const IclRound& cand = trace.rounds[i];
    for (const auto& t : cand.tasks) reward[i] += t.reward_value / static_cast<double>(K);
    if (params.validation_key == ValidationKey::own_constraint) {
      if (judge_scale[i] > 0.0) score[i] = violation(cand, cand.constraint.weights()) / judge_scale[i];
    } else {
      for (std::size_t j = 0; j < n; ++j) {
        if (judge_scale[j] <= 0.0) continue;
        score[i] = std::max(score[i], violation(cand, trace.rounds[j].constraint.weights()) / judge_scale[j]);
      }
    }
  }
  const double best_score = *std::min_element(score.begin(), score.end());
  int pick = -1;
  for (std::size_t i = 0; i < n; ++i) {
    if (score[i] > best_score + params.selection_tol) continue;
    if (pick < 0 || reward[i] > reward[pick] + 1e-12) pick = static_cast<int>(i);
  }
  return pick;
}

int select_validation(const IclTrace& trace, const Mdp& mdp, const ScalarSignal& r,
                      std::span<const Trajectory> validation_trajs, const IclParams& params) {
  (void)mdp;
  (void)r;
  if (validation_trajs.empty()) throw ArgumentError("select_validation: empty validation set");
  if (trace.rounds.empty()) throw ArgumentError("select_validation: empty trace");
  const Eigen::VectorXd phi =
      empirical_features(validation_trajs, trace.rounds.front().constraint.feature_map());
  return select_validation(trace, std::span<const Eigen::VectorXd>(&phi, 1), params);
}

IclTrace icl(const Mdp& mdp, const ScalarSignal& r, std::span<const Trajectory> expert_trajs,
             FeatureMapPtr fmap, const ConstraintSet& set, const IclParams& params,
             std::uint64_t seed, std::span<const Trajectory> validation_trajs) {
  if (expert_trajs.empty()) throw ArgumentError("icl: expert trajectories must be nonempty");
  GameTask task{"task0", r.values(), empirical_features(expert_trajs, *fmap), {}};
  for (const auto& tr : expert_trajs) task.expert_traj_features.push_back(trajectory_features(tr, *fmap));
  IclTrace trace = run_constraint_game(mdp, std::span<const GameTask>(&task, 1), fmap, set, params, seed,
                                       /*zero_delta=*/false);
  if (validation_trajs.empty()) {
    trace.warnings.push_back("no validation demos given; selecting on training demos");
    trace.selected = select_validation(trace, mdp, r, expert_trajs, params);
  } else {
    trace.selected = select_validation(trace, mdp, r, validation_trajs, params);
  }
  return trace;
}

CrlResult round_policy(const Mdp& mdp, const IclTrace& trace, int index, const Table& reward,
                       double delta, const CrlParams& params) {
  if (index < 0 || index >= static_cast<int>(trace.rounds.size()))
    throw ArgumentError("round_policy: index out of range");
  const CrlProblem prob = normalized_constraint(trace.rounds[index].constraint);
  const double T = mdp.horizon();
  return crl(mdp, reward, prob.constraint, std::clamp(delta / prob.scale, -T, T), params);
}

}  // namespace iclab
