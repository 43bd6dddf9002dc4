#include "doctest.h"
#include "helpers.hpp"

#include "iclab/errors.hpp"
#include "iclab/mdp.hpp"

#include <cmath>

using namespace iclab;
using testing::random_mdp;

namespace {

Mdp chain2(int T) {
  // s0 -a0-> s1, s1 absorbing; a1 stays put.
  std::vector<double> P = {0, 1, 1, 0, 0, 1, 0, 1};
  Eigen::VectorXd init(2);
  init << 1, 0;
  return Mdp(2, 2, T, P, init);
}

}  // namespace

TEST_CASE("occupancy: single state and action puts unit mass on every step") {
  Mdp m(1, 1, 3, {1.0}, Eigen::VectorXd::Ones(1));
  const auto occ = occupancy(m, Policy::uniform(3, 1, 1));
  for (int t = 0; t < 3; ++t) CHECK(occ.at(t)(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("occupancy: deterministic chain") {
  const Mdp m = chain2(2);
  const auto occ = occupancy(m, Policy::deterministic({{0, 0}, {0, 0}}, 2));
  CHECK(occ.at(0)(0, 0) == doctest::Approx(1.0));
  CHECK(occ.at(1)(1, 0) == doctest::Approx(1.0));
  CHECK(occ.at(1)(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("occupancy: matches a Monte-Carlo estimate within 3 standard errors") {
  const Mdp m = random_mdp(4, 2, 4, 11);
  const Policy pi = Policy::uniform(4, 4, 2);
  const auto occ = occupancy(m, pi);
  const int n = 1000000;
  const auto trajs = sample_trajectories(m, pi, n, 5);
  std::vector<Table> counts(4, Table::Zero(4, 2));
  for (const auto& tr : trajs)
    for (int t = 0; t < 4; ++t) counts[t](tr.steps[t].state, tr.steps[t].action) += 1.0;
  for (int t = 0; t < 4; ++t)
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 2; ++a) {
        const double p = occ.at(t)(s, a);
        const double se = std::sqrt(std::max(p * (1 - p), 1e-12) / n);
        CHECK(std::abs(counts[t](s, a) / n - p) <= 3 * se + 1e-12);
      }
}

TEST_CASE("occupancy: shape mismatch is rejected") {
  const Mdp m = chain2(2);
  CHECK_THROWS_AS(occupancy(m, Policy::uniform(3, 2, 2)), ShapeError);
  CHECK_THROWS_AS(occupancy(m, Policy::uniform(2, 3, 2)), ShapeError);
  CHECK_THROWS_AS(value(m, Policy::uniform(2, 2, 2), ScalarSignal::zeros(2, 3)), ShapeError);
}

TEST_CASE("value: zero, constant and mixture examples") {
  const Mdp m = random_mdp(3, 2, 4, 2);
  CHECK(value(m, Policy::uniform(4, 3, 2), ScalarSignal::zeros(3, 2)) == 0.0);

  Mdp one(1, 1, 5, {1.0}, Eigen::VectorXd::Ones(1));
  CHECK(value(one, Policy::uniform(5, 1, 1), ScalarSignal::constant(1, 1, 1.0)) == doctest::Approx(5.0));

  // Two bandit arms with per-step payoff 1 and -0.5 over T=2 give values 2 and -1.
  const Mdp b = testing::bandit(2, 2);
  const ScalarSignal f(testing::row({1.0, -0.5}));
  const Policy p0 = Policy::deterministic({{0}, {0}}, 2);
  const Policy p1 = Policy::deterministic({{1}, {1}}, 2);
  CHECK(value(b, p0, f) == doctest::Approx(2.0));
  CHECK(value(b, p1, f) == doctest::Approx(-1.0));
  CHECK(value(b, MixturePolicy({p0, p1}, {0.25, 0.75}), f) == doctest::Approx(-0.25));
}

TEST_CASE("scalar signals must lie in [-1, 1]") {
  CHECK_THROWS_AS(ScalarSignal(testing::row({0.5, 1.5})), ArgumentError);
  CHECK_NOTHROW(ScalarSignal(testing::row({-1.0, 1.0})));
}

TEST_CASE("property: flow conservation on 100 random MDPs") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int S = 2 + static_cast<int>(seed % 4), A = 1 + static_cast<int>(seed % 3), T = 1 + static_cast<int>(seed % 6);
    const Mdp m = random_mdp(S, A, T, seed);
    const auto occ = occupancy(m, testing::random_policy(T, S, A, seed));
    CHECK(occ.flow_residual(m) < 1e-12);
    for (int t = 0; t < T; ++t) {
      CHECK(occ.at(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(occ.at(t).minCoeff() >= 0.0);
    }
    CHECK(occ.aggregate().sum() == doctest::Approx(T));
  }
}

TEST_CASE("property: occupancy value equals backward DP and forward simulation") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Mdp m = random_mdp(4, 3, 5, seed);
    const Policy pi = testing::random_policy(5, 4, 3, seed + 1000);
    const Table f = testing::random_table(4, 3, seed);
    const double v = value(m, pi, ScalarSignal(f));
    CHECK(std::abs(v - policy_value_dp(m, pi, f)) < 1e-8);
    CHECK(std::abs(v - testing::forward_value(m, pi, f)) < 1e-8);
    CHECK(std::abs(v) <= m.horizon() + 1e-12);
  }
}

TEST_CASE("property: mixture value is linear in the weights") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Mdp m = random_mdp(3, 2, 4, seed);
    const Policy a = testing::random_policy(4, 3, 2, seed), b = testing::random_policy(4, 3, 2, seed + 77);
    const ScalarSignal f(testing::random_table(3, 2, seed));
    const double w = 0.1 + 0.08 * static_cast<double>(seed % 10);
    const double mix = value(m, MixturePolicy({a, b}, {w, 1 - w}), f);
    CHECK(std::abs(mix - (w * value(m, a, f) + (1 - w) * value(m, b, f))) < 1e-10);
  }
}

TEST_CASE("to_markov reproduces the mixture's occupancy") {
  const Mdp m = random_mdp(4, 2, 5, 3);
  const MixturePolicy mix({testing::random_policy(5, 4, 2, 1), Policy::deterministic(
                                                                   std::vector<std::vector<int>>(5, {1, 0, 1, 0}), 2)},
                          {0.3, 0.7});
  const auto target = occupancy(m, mix);
  const auto got = occupancy(m, to_markov(m, mix));
  for (int t = 0; t < 5; ++t) CHECK((target.at(t) - got.at(t)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("with_action_noise mixes towards uniform") {
  const Policy det = Policy::deterministic({{1, 0}}, 2);
  const Policy full = with_action_noise(det, 1.0);
  CHECK(full(0, 0, 0) == doctest::Approx(0.5));
  CHECK(with_action_noise(det, 0.2)(0, 0, 1) == doctest::Approx(0.9));
  CHECK_THROWS_AS(with_action_noise(det, 1.5), ArgumentError);
}

TEST_CASE("sample_trajectories: deterministic MDP and policy give identical trajectories") {
  const Mdp m = chain2(4);
  const auto trajs = sample_trajectories(m, Policy::deterministic(std::vector<std::vector<int>>(4, {0, 1}), 2), 20, 99);
  REQUIRE(trajs.size() == 20);
  for (const auto& tr : trajs) CHECK(tr == trajs.front());
  CHECK(trajs.front().steps.size() == 4);
}

TEST_CASE("sample_trajectories: same seed, same draws; n must be positive") {
  const Mdp m = random_mdp(3, 2, 4, 8);
  const Policy pi = Policy::uniform(4, 3, 2);
  CHECK(sample_trajectories(m, pi, 30, 4) == sample_trajectories(m, pi, 30, 4));
  CHECK(sample_trajectories(m, pi, 30, 4) != sample_trajectories(m, pi, 30, 5));
  CHECK_THROWS_AS(sample_trajectories(m, pi, 0, 1), ArgumentError);
}

TEST_CASE("empirical_value: examples and convergence to the exact value") {
  Mdp one(1, 1, 4, {1.0}, Eigen::VectorXd::Ones(1));
  const auto single = sample_trajectories(one, Policy::uniform(4, 1, 1), 1, 0);
  CHECK(empirical_value(single, ScalarSignal::constant(1, 1, 1.0)) == doctest::Approx(4.0));
  CHECK(empirical_value(single, ScalarSignal::zeros(1, 1)) == 0.0);
  CHECK_THROWS_AS(empirical_value(std::vector<Trajectory>{}, ScalarSignal::zeros(1, 1)), ArgumentError);

  const Mdp m = random_mdp(4, 2, 5, 21);
  const Policy pi = testing::random_policy(5, 4, 2, 21);
  const Table f = testing::random_table(4, 2, 21);
  const int n = 100000;
  const auto trajs = sample_trajectories(m, pi, n, 6);
  double mean = 0.0, sq = 0.0;
  for (const auto& tr : trajs) {
    const double x = trajectory_total(tr, f);
    mean += x;
    sq += x * x;
  }
  mean /= n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  CHECK(empirical_value(trajs, ScalarSignal(f)) == doctest::Approx(mean).epsilon(1e-12));
  CHECK(std::abs(mean - value(m, pi, ScalarSignal(f))) <= 3 * se);
}

TEST_CASE("sample_trajectories: visit frequencies match occupancy") {
  const Mdp m = random_mdp(3, 2, 3, 31);
  const Policy pi = testing::random_policy(3, 3, 2, 31);
  const auto occ = occupancy(m, pi).aggregate();
  const int n = 100000;
  Table counts = Table::Zero(3, 2);
  for (const auto& tr : sample_trajectories(m, pi, n, 2))
    for (const auto& st : tr.steps) counts(st.state, st.action) += 1.0;
  for (int s = 0; s < 3; ++s)
    for (int a = 0; a < 2; ++a) {
      // Per-step indicators summed over T=3 steps: variance is at most T * occ.
      const double se = std::sqrt(3.0 * occ(s, a) / n);
      CHECK(std::abs(counts(s, a) / n - occ(s, a)) <= 3 * se + 1e-12);
    }
}

TEST_CASE("Mdp rejects malformed dynamics") {
  CHECK_THROWS_AS(Mdp(2, 1, 2, {0.5, 0.4, 0, 1}, Eigen::VectorXd::Constant(2, 0.5)), ArgumentError);
  CHECK_THROWS_AS(Mdp(2, 1, 2, {1, 0, 0}, Eigen::VectorXd::Constant(2, 0.5)), ShapeError);
  CHECK_THROWS_AS(Mdp(1, 1, 0, {1.0}, Eigen::VectorXd::Ones(1)), ArgumentError);
}
