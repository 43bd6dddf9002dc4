#include "doctest.h"
#include "helpers.hpp"

#include "iclab/errors.hpp"
#include "iclab/identify.hpp"

#include <cmath>

using namespace iclab;
using Eigen::MatrixXd;
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

AggregateOccupancy agg(VectorXd rho, int T) { return AggregateOccupancy{std::move(rho), T}; }

/// Rank by Gaussian elimination with partial pivoting.
int elimination_rank(MatrixXd m, double tol = 1e-9) {
  int rank = 0;
  for (int c = 0; c < m.cols() && rank < m.rows(); ++c) {
    int piv = rank;
    for (int r = rank + 1; r < m.rows(); ++r)
      if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
    if (std::abs(m(piv, c)) < tol) continue;
    m.row(piv).swap(m.row(rank));
    for (int r = rank + 1; r < m.rows(); ++r) m.row(r) -= m(r, c) / m(rank, c) * m.row(rank);
    ++rank;
  }
  return rank;
}

/// NNLS oracle: least squares on every support, keep feasible solutions, take the best.
VectorXd nnls_brute(const MatrixXd& A, const VectorXd& b) {
  const int n = static_cast<int>(A.cols());
  VectorXd best = VectorXd::Zero(n);
  double best_res = b.squaredNorm();
  for (int mask = 1; mask < (1 << n); ++mask) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if (mask & (1 << j)) idx.push_back(j);
    MatrixXd sub(A.rows(), static_cast<int>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) sub.col(static_cast<int>(k)) = A.col(idx[k]);
    const VectorXd xs = sub.colPivHouseholderQr().solve(b);
    if (xs.minCoeff() < 0.0) continue;
    const double res = (sub * xs - b).squaredNorm();
    if (res < best_res) {
      best_res = res;
      best.setZero();
      for (std::size_t k = 0; k < idx.size(); ++k) best(idx[k]) = xs(static_cast<int>(k));
    }
  }
  return best;
}

}  // namespace

TEST_CASE("occupancy_difference_matrix: identical experts, hand example, errors") {
  const std::vector<AggregateOccupancy> same = {agg(vec({0.5, 0.5}), 1), agg(vec({0.5, 0.5}), 1)};
  CHECK(occupancy_difference_matrix(same).isZero());
  const std::vector<AggregateOccupancy> two = {agg(vec({0.6, 0.4}), 1), agg(vec({0.2, 0.8}), 1)};
  const MatrixXd d = occupancy_difference_matrix(two);
  REQUIRE(d.rows() == 1);
  CHECK(d(0, 0) == doctest::Approx(0.4));
  CHECK(d(0, 1) == doctest::Approx(-0.4));
  CHECK_THROWS_AS(occupancy_difference_matrix(std::vector<AggregateOccupancy>{two[0]}), ArgumentError);
}

TEST_CASE("occupancy_difference_matrix: general position gives rank m - 1") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    iclab::RandomStream rng(seed, "occ");
    std::vector<AggregateOccupancy> experts;
    for (int i = 0; i < 5; ++i) {
      VectorXd rho(8);
      for (int k = 0; k < 8; ++k) rho(k) = rng.uniform();
      experts.push_back(agg(3.0 * rho / rho.sum(), 3));
    }
    const MatrixXd d = occupancy_difference_matrix(experts);
    CHECK(d.rows() == 4);
    CHECK(elimination_rank(d) == 4);
    const Eigen::JacobiSVD<MatrixXd> svd(d);
    CHECK(svd.singularValues()(3) > 1e-9 * svd.singularValues()(0));
  }
}

TEST_CASE("null_space_constraint: two-dimensional example and degenerate input") {
  MatrixXd m(1, 2);
  m << 0.4, -0.4;
  const NullSpaceResult r = null_space_constraint(m, agg(vec({1, 0}), 1));
  CHECK(r.null_dim == 1);
  CHECK(r.identifiable());
  CHECK(r.c_hat(0) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(r.c_hat(1) == doctest::Approx(1 / std::sqrt(2.0)));

  // Coinciding experts leave nothing to recover from.
  const std::vector<AggregateOccupancy> same = {agg(vec({0.5, 0.5}), 1), agg(vec({0.5, 0.5}), 1)};
  CHECK_THROWS_AS(null_space_constraint(occupancy_difference_matrix(same), agg(vec({1, 0}), 1)), DegenerateInputError);
}

TEST_CASE("null_space_constraint: too few experts flag non-identifiability") {
  // Two experts in four dimensions: a three-dimensional null space.
  const std::vector<AggregateOccupancy> two = {agg(vec({0.4, 0.1, 0.3, 0.2}), 1), agg(vec({0.1, 0.4, 0.2, 0.3}), 1)};
  const NullSpaceResult r = null_space_constraint(occupancy_difference_matrix(two), two[0]);
  CHECK(r.null_dim == 3);
  CHECK_FALSE(r.identifiable());
  CHECK(r.basis.cols() == 3);
}

TEST_CASE("null_space_constraint: random fixture with six experts recovers c*") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const IdentifiabilityFixture fx = make_identifiability_fixture(3, 2, 5, seed);
    REQUIRE(fx.occupancies.size() == 6);
    const MatrixXd d = occupancy_difference_matrix(fx.occupancies);
    const NullSpaceResult r = null_space_constraint(d, fx.unsafe_probe, 1e-8, Gauge::modulo_constants);
    REQUIRE(r.identifiable());
    const double cosine = std::abs(r.c_hat.dot(fx.c_star)) / (r.c_hat.norm() * fx.c_star.norm());
    CHECK(cosine >= 0.99);
    // Orientation: the reward-optimal policy is unsafe under c_hat.
    CHECK(r.c_hat.dot(fx.unsafe_probe.rho) > 0.0);
    // Every expert saturates the recovered constraint the same way (the differences vanish).
    CHECK((d * r.c_hat).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("property: the basis is annihilated and the direction is scale-equivariant") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const IdentifiabilityFixture fx = make_identifiability_fixture(2, 3, 4, seed + 10);
    const MatrixXd d = occupancy_difference_matrix(fx.occupancies);
    const double tol = 1e-8;
    const NullSpaceResult r = null_space_constraint(d, fx.unsafe_probe, tol);
    const double smax = r.singular_values.maxCoeff();
    CHECK((d * r.basis).cwiseAbs().maxCoeff() <= 10 * tol * smax);

    AggregateOccupancy probe2 = fx.unsafe_probe;
    probe2.rho *= 3.5;
    const NullSpaceResult s = null_space_constraint(3.5 * d, probe2, tol);
    CHECK(s.null_dim == r.null_dim);
    if (r.identifiable()) CHECK((s.c_hat - r.c_hat).norm() < 1e-9);
  }
}

TEST_CASE("verify_saturation: optimal expert, forced bandit arm, built-in fixtures") {
  TaskBundle opt{bandit(2), {BundleTask{"opt", ScalarSignal(row({1, 0})), {Trajectory{{{0, 0}}}}, {},
                                        Policy::deterministic({{0}}, 2)}}};
  const auto a = verify_saturation(opt, ScalarSignal(row({1, 0})));
  CHECK_FALSE(a[0].saturated);

  TaskBundle forced{bandit(2), {BundleTask{"b", ScalarSignal(row({1, 0})), {Trajectory{{{0, 1}}}}, {},
                                           Policy::deterministic({{1}}, 2)}}};
  const auto b = verify_saturation(forced, ScalarSignal(row({1, 0})));
  CHECK(b[0].saturated);
  CHECK(b[0].optimal_reward - b[0].expert_reward == doctest::Approx(1.0));
  CHECK(b[0].exact);

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const IdentifiabilityFixture fx = make_identifiability_fixture(3, 2, 5, seed);
    TaskBundle bundle{fx.mdp, {}};
    for (std::size_t k = 0; k < fx.experts.size(); ++k)
      bundle.tasks.push_back(BundleTask{"k" + std::to_string(k), ScalarSignal(fx.rewards[k]),
                                        sample_trajectories(fx.mdp, fx.experts[k], 2, k), {}, fx.experts[k]});
    for (const auto& e : verify_saturation(bundle, to_signal(fx.c_star, 3, 2))) CHECK(e.saturated);
  }
}

TEST_CASE("check_mixture_independence: distinct pair, exact mixture, fixtures") {
  const std::vector<AggregateOccupancy> two = {agg(vec({0.6, 0.4, 0.0}), 1), agg(vec({0.2, 0.3, 0.5}), 1)};
  for (const auto& e : check_mixture_independence(two)) CHECK_FALSE(e.violated);

  std::vector<AggregateOccupancy> three = two;
  three.push_back(agg(0.5 * (two[0].rho + two[1].rho), 1));
  const auto rep = check_mixture_independence(three);
  CHECK(rep[2].violated);
  CHECK(rep[2].residual < 1e-9);

  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const IdentifiabilityFixture fx = make_identifiability_fixture(3, 2, 5, seed);
    for (const auto& e : check_mixture_independence(fx.occupancies, 1e-6)) CHECK_FALSE(e.violated);
  }
}

TEST_CASE("nnls agrees with support enumeration") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    iclab::RandomStream rng(seed, "nnls");
    MatrixXd A(7, 4);
    VectorXd b(7);
    for (int i = 0; i < 7; ++i) {
      for (int j = 0; j < 4; ++j) A(i, j) = rng.normal();
      b(i) = rng.normal();
    }
    const VectorXd x = nnls(A, b);
    const VectorXd oracle = nnls_brute(A, b);
    CHECK(x.minCoeff() >= 0.0);
    CHECK((A * x - b).norm() == doctest::Approx((A * oracle - b).norm()).epsilon(1e-9));
  }
  // Exact nonnegative solution with a zero coordinate.
  MatrixXd A = MatrixXd::Identity(3, 3);
  CHECK(nnls(A, vec({2, 0, 1})).isApprox(vec({2, 0, 1})));
  CHECK(nnls(A, vec({2, -1, 1})).isApprox(vec({2, 0, 1})));
}

TEST_CASE("AggregateOccupancy validation and relative interior") {
  CHECK_THROWS_AS(agg(vec({0.5, 0.6}), 1).validate(), ArgumentError);
  CHECK_THROWS_AS(agg(vec({1.5, -0.5}), 1).validate(), ArgumentError);
  CHECK_NOTHROW(agg(vec({0.5, 1.5}), 2).validate());

  const Mdp m = testing::random_mdp(3, 2, 4, 1);
  const auto occ = AggregateOccupancy::from(occupancy(m, Policy::uniform(4, 3, 2)));
  CHECK(occ.rho.sum() == doctest::Approx(4.0));
  CHECK(min_reachable_entry(m, occ) > 1e-9);
  const auto det = AggregateOccupancy::from(occupancy(m, Policy::deterministic(std::vector<std::vector<int>>(4, {0, 0, 0}), 2)));
  CHECK(min_reachable_entry(m, det) <= 1e-9);
}
