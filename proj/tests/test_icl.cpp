#include "doctest.h"
#include "helpers.hpp"

#include "iclab/errors.hpp"
#include "iclab/icl.hpp"

#include <cmath>
#include <memory>

using namespace iclab;
using Eigen::VectorXd;
using testing::bandit;
using testing::row;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<int>(v.size()));
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

FeatureMapPtr sa_onehot(int S, int A) {
  return std::make_shared<FeatureMap>("sa-onehot", S, A, Eigen::MatrixXd::Identity(S * A, S * A));
}

std::vector<Trajectory> always(int action, int n, int T = 1) {
  Trajectory tr;
  for (int t = 0; t < T; ++t) tr.steps.push_back({0, action});
  return std::vector<Trajectory>(n, tr);
}

IclParams bandit_params(int rounds) {
  IclParams p;
  p.rounds = rounds;
  p.crl.num_iters = 300;
  return p;
}

}  // namespace

TEST_CASE("per_round_loss: identical occupancies, direct formula, linearity") {
  const Mdp b = bandit(2, 10);
  Eigen::MatrixXd phi(2, 1);
  phi << 0.2, 0.0;
  auto f = std::make_shared<FeatureMap>("p", 1, 2, phi);
  const auto occ = occupancy(b, Policy::deterministic(std::vector<std::vector<int>>(10, {0}), 2));
  const VectorXd learner = expected_features(occ, *f);  // J(pi, c) = 2 for w = 1
  const LinearConstraint c(f, vec({1.0}), 2.0);
  CHECK(per_round_loss(occ, learner, c, 10) == doctest::Approx(0.0));
  CHECK(per_round_loss(occ, vec({1.0}), c, 10) == doctest::Approx(0.1));
  const LinearConstraint c2(f, vec({2.0}), 2.0);
  CHECK(per_round_loss(occ, vec({1.0}), c2, 10) == doctest::Approx(0.2));
}

TEST_CASE("best_in_hindsight: tie, normalization and halfspace") {
  const ConstraintSet ball(2, 1.0);
  const std::vector<VectorXd> none = {vec({1, -2}), vec({-1, 2})};
  CHECK(best_in_hindsight_weights(none, ball).isZero());
  const std::vector<VectorXd> g = {vec({3, 4})};
  CHECK(best_in_hindsight_weights(g, ball).isApprox(vec({0.6, 0.8}), 1e-9));
  const ConstraintSet cut(2, 1.0, {Halfspace{vec({0, 1}), 0.0}});
  const VectorXd w = best_in_hindsight_weights(g, cut);
  CHECK(w(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(w(1)) < 1e-6);
  // Grid oracle over the half disk.
  double best = -1e300;
  for (int k = 0; k <= 20000; ++k) {
    const double th = -M_PI + M_PI * k / 20000.0;  // w_2 <= 0 on the unit circle
    best = std::max(best, 3 * std::cos(th) + 4 * std::sin(th));
  }
  CHECK(w.dot(vec({3, 4})) == doctest::Approx(best).epsilon(1e-6));
}

TEST_CASE("regret: one-round optimum, constant gradients and nonnegativity") {
  const ConstraintSet ball(2, 1.0);
  const std::vector<VectorXd> g1 = {vec({0.3, 0.4})};
  const std::vector<VectorXd> p1 = {vec({0.6, 0.8})};
  CHECK(std::abs(regret_of(g1, p1, ball).regret) < 1e-12);

  auto run = [&](int N) {
    const double alpha = default_alpha(1.0, N, 1.0);
    std::vector<VectorXd> grads, played;
    for (int i = 0; i < N; ++i) {
      played.push_back(grads.empty() ? VectorXd::Zero(2) : ftrl_weights(grads, alpha, ball));
      grads.push_back(vec({0.6, -0.8}));
    }
    return regret_of(grads, played, ball);
  };
  const auto r16 = run(16), r64 = run(64);
  CHECK(r64.avg_regret < r16.avg_regret);
  CHECK(r16.regret >= 0.0);
  CHECK(r64.regret >= 0.0);
}

TEST_CASE("icl: bandit with the rewarding arm unsafe learns to play the safe arm") {
  const Mdp b = bandit(2);
  const ScalarSignal r(row({1, 0}));
  const auto demos = always(1, 20);
  const auto f = sa_onehot(1, 2);
  const ConstraintSet set(2, 1.0);
  const IclTrace trace = icl(b, r, demos, f, set, bandit_params(20), 3, demos);
  REQUIRE(trace.rounds.size() == 20);
  const auto& last = trace.rounds.back().tasks[0].occupancy;
  CHECK(last.at(0)(0, 1) >= 0.95);
  const int sel = trace.selected;
  CHECK(trace.rounds[sel].tasks[0].occupancy.at(0)(0, 1) >= 0.95);
  // The learned weights put the cost on arm A.
  const VectorXd w = trace.rounds.back().constraint.weights();
  CHECK(w(0) > w(1));

  // Regret is measured against the best fixed constraint and is never negative.
  for (const auto& round : trace.rounds) CHECK(round.regret >= -1e-12);
  const RegretStats rs = regret(trace, set);
  CHECK(rs.regret == doctest::Approx(trace.rounds.back().regret));
}

TEST_CASE("icl: every CRL call uses the expert's empirical value as its budget") {
  const Mdp m = testing::random_mdp(3, 2, 4, 5);
  const ScalarSignal r(testing::random_table(3, 2, 5, "r"));
  const auto demos = sample_trajectories(m, Policy::uniform(4, 3, 2), 20, 1);
  const auto f = sa_onehot(3, 2);
  IclParams params;
  params.rounds = 6;
  params.crl.num_iters = 100;
  const IclTrace trace = icl(m, r, demos, f, ConstraintSet(6, 1.0), params, 9);
  CHECK_FALSE(trace.zero_delta);
  const VectorXd phi_e = empirical_features(demos, *f);
  for (const auto& round : trace.rounds) {
    const double expected = round.constraint.value_of(phi_e);
    CHECK(round.tasks[0].delta == doctest::Approx(expected).epsilon(1e-12));
  }
  // No validation demos were given, which is noted.
  CHECK(trace.warnings.size() == 1);
}

TEST_CASE("icl: an unconstrained-optimal expert gives nonpositive losses") {
  const Mdp m = testing::random_mdp(3, 2, 4, 8);
  const Table rt = testing::random_table(3, 2, 8, "r");
  const ScalarSignal r(rt);
  const Policy expert = rl_best_response(m, r);
  const auto demos = sample_trajectories(m, expert, 20, 2);
  const auto f = sa_onehot(3, 2);
  IclParams params;
  params.rounds = 8;
  params.crl.num_iters = 500;
  const IclTrace trace = icl(m, r, demos, f, ConstraintSet(6, 1.0), params, 4, demos);
  const double T = m.horizon();
  for (const auto& round : trace.rounds) CHECK(round.loss <= 0.05);
  const CrlResult sel = round_policy(m, trace, trace.selected, rt, trace.rounds[trace.selected].tasks[0].delta, params.crl);
  CHECK(sel.achieved_value >= optimal_value(m, rt) - 0.05 * T);
}

TEST_CASE("icl: same seed reproduces the trace") {
  const Mdp m = testing::random_mdp(3, 2, 3, 6);
  const ScalarSignal r(testing::random_table(3, 2, 6, "r"));
  const auto demos = sample_trajectories(m, Policy::uniform(3, 3, 2), 10, 3);
  IclParams params;
  params.rounds = 4;
  params.crl.num_iters = 50;
  params.update = ConstraintUpdate::regression;
  const auto f = sa_onehot(3, 2);
  const auto a = icl(m, r, demos, f, ConstraintSet(6, 1.0), params, 5, demos);
  const auto b = icl(m, r, demos, f, ConstraintSet(6, 1.0), params, 5, demos);
  for (std::size_t i = 0; i < a.rounds.size(); ++i)
    CHECK(a.rounds[i].constraint.weights() == b.rounds[i].constraint.weights());
  CHECK(a.selected == b.selected);
}

TEST_CASE("icl: argument errors") {
  const Mdp b = bandit(2);
  const ScalarSignal r(row({1, 0}));
  CHECK_THROWS_AS(icl(b, r, std::vector<Trajectory>{}, sa_onehot(1, 2), ConstraintSet(2, 1.0), bandit_params(2), 0),
                  ArgumentError);
  CHECK_THROWS_AS(icl(b, r, always(1, 2), sa_onehot(2, 2), ConstraintSet(4, 1.0), bandit_params(2), 0), ShapeError);
}

TEST_CASE("select_validation: single candidate, ordering by violation, empty set") {
  const Mdp b = bandit(2);
  const ScalarSignal r(row({1, 0}));
  const auto demos = always(1, 5);
  const auto f = sa_onehot(1, 2);
  const IclTrace one = icl(b, r, demos, f, ConstraintSet(2, 1.0), bandit_params(1), 0, demos);
  CHECK(one.selected == 0);
  CHECK_THROWS_AS(select_validation(one, b, r, std::vector<Trajectory>{}, IclParams{}), ArgumentError);

  // Hand-built trace: round 0 plays the unsafe arm, round 1 the safe arm; both share c = (1, -1).
  IclTrace t{{}, ConstraintSet(2, 1.0), 1.0, 1, false, 0, {}};
  const LinearConstraint c(f, vec({0.5, -0.5}), 1.0);
  for (int arm : {0, 1}) {
    const auto occ = occupancy(b, Policy::deterministic({{arm}}, 2));
    TaskRound tr{occ, expected_features(occ, *f), 0.0, 0.0, arm == 0 ? 1.0 : 0.0, 0.0, {}};
    t.rounds.push_back(IclRound{c, 0, {tr}, VectorXd::Zero(2), 0.0, 0.0, 0.0});
  }
  IclParams p;
  p.validation_key = ValidationKey::own_constraint;
  CHECK(select_validation(t, b, r, demos, p) == 1);
  p.validation_key = ValidationKey::learned_family;
  CHECK(select_validation(t, b, r, demos, p) == 1);
  // Exhaustive evaluation of every round: worst violation under any learned constraint (on its
  // own max-abs-1 scale), then the highest reward among the near-best.
  const IclTrace bt = icl(b, r, demos, f, ConstraintSet(2, 1.0), bandit_params(10), 1, demos);
  const VectorXd val = empirical_features(demos, *f);
  std::vector<double> score(bt.rounds.size(), 0.0);
  for (std::size_t i = 0; i < bt.rounds.size(); ++i)
    for (const auto& judge : bt.rounds) {
      const VectorXd& w = judge.constraint.weights();
      if (w.cwiseAbs().maxCoeff() == 0.0) continue;
      const double gap = w.dot(bt.rounds[i].tasks[0].learner_features - val) / w.cwiseAbs().maxCoeff();
      score[i] = std::max(score[i], std::max(0.0, gap));
    }
  const double best = *std::min_element(score.begin(), score.end());
  double best_reward = -1e300;
  for (std::size_t i = 0; i < score.size(); ++i)
    if (score[i] <= best + IclParams{}.selection_tol) best_reward = std::max(best_reward, bt.rounds[i].tasks[0].reward_value);
  CHECK(score[bt.selected] <= best + IclParams{}.selection_tol);
  CHECK(bt.rounds[bt.selected].tasks[0].reward_value == best_reward);
}

TEST_CASE("normalized_constraint scales to max-abs 1") {
  const auto f = sa_onehot(1, 2);
  const CrlProblem p = normalized_constraint(LinearConstraint(f, vec({0.4, -0.2}), 1.0));
  CHECK(p.scale == doctest::Approx(0.4));
  CHECK(p.constraint(0, 0) == doctest::Approx(1.0));
  CHECK(p.constraint(0, 1) == doctest::Approx(-0.5));
  const CrlProblem z = normalized_constraint(LinearConstraint::zero(f, 1.0));
  CHECK(z.constraint.isZero());
}
