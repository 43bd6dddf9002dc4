#pragma once

// Identifiability of a constraint from several optimal experts: the null space
// of their occupancy differences, plus the checks that make it meaningful.

#include "iclab/mticl.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace iclab {

/// Per-(s, a) visitation summed over time, flattened as s * A + a. Mass equals the horizon.
struct AggregateOccupancy {
  Eigen::VectorXd rho;
  int horizon = 0;

  static AggregateOccupancy from(const OccupancyMeasure& occ);
  /// Throws ArgumentError on negative entries or mass != horizon (tolerance 1e-8).
  void validate() const;
};

/// Rows rho_i - rho_{i+1} for consecutive experts; needs at least two experts.
Eigen::MatrixXd occupancy_difference_matrix(std::span<const AggregateOccupancy> experts);

/// Every occupancy has the same mass, so constants always lie in the null space.
enum class Gauge {
  /// Null space of the difference matrix as is.
  raw,
  /// Null space within zero-sum vectors, i.e. c* recovered up to scale and an additive constant.
  modulo_constants,
};

struct NullSpaceResult {
  /// Unit-norm, oriented so <c_hat, probe> > 0; meaningful only when null_dim == 1.
  Eigen::VectorXd c_hat;
  int null_dim = 0;
  /// Orthonormal null-space basis (columns).
  Eigen::MatrixXd basis;
  Eigen::VectorXd singular_values;
  bool identifiable() const { return null_dim == 1; }
};

/// SVD null space with rank threshold tol * sigma_max. Throws DegenerateInputError on a zero matrix.
NullSpaceResult null_space_constraint(const Eigen::MatrixXd& diff_matrix, const AggregateOccupancy& unsafe_probe,
                                      double tol = 1e-8, Gauge gauge = Gauge::raw);

/// c_hat rescaled to max-abs 1 as an S x A signal.
ScalarSignal to_signal(const Eigen::VectorXd& c_hat, int num_states, int num_actions);

struct SaturationEntry {
  std::string task_id;
  double expert_reward = 0.0;
  double optimal_reward = 0.0;
  double expert_violation = 0.0;  // J(pi_E, c)
  bool exact = false;             // expert policy known (else demo estimates)
  bool saturated = false;         // optimum - expert > 1e-6
};

std::vector<SaturationEntry> verify_saturation(const TaskBundle& bundle, const ScalarSignal& c);

struct MixtureEntry {
  /// Distance from rho_i to the convex hull of the other experts.
  double residual = 0.0;
  bool violated = false;  // residual < tol
};

/// Convex-combination fit of every expert by the others (nonnegative least squares).
std::vector<MixtureEntry> check_mixture_independence(std::span<const AggregateOccupancy> experts,
                                                     double tol = 1e-6);

/// min |A x - b| subject to x >= 0 (Lawson-Hanson active set).
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, int max_iter = 0);

/// Smallest aggregate entry among (s, a) pairs reachable under the dynamics; > 1e-9 means
/// the occupancy is taken to lie in the relative interior.
double min_reachable_entry(const Mdp& mdp, const AggregateOccupancy& occ);

/// Random dense MDP with |S||A| soft-optimal experts that all saturate a zero-mean c* at delta = 0.
struct IdentifiabilityFixture {
  Mdp mdp;
  Eigen::VectorXd c_star;  // flattened s * A + a, max-abs 1, zero mean
  std::vector<Table> rewards;
  std::vector<Policy> experts;
  std::vector<AggregateOccupancy> occupancies;
  /// Aggregate occupancy of the unconstrained optimum of task 0.
  AggregateOccupancy unsafe_probe;
};

IdentifiabilityFixture make_identifiability_fixture(int num_states, int num_actions, int horizon,
                                                    std::uint64_t seed, double temperature = 0.5);

struct IdentifiabilityReport {
  int null_dim = 0;
  std::optional<double> cosine_to_truth;
  std::vector<SaturationEntry> saturation;
  std::vector<MixtureEntry> mixture_independence;
  double min_relint_entry = 0.0;
};

/// Null space, saturation, independence and relative-interior checks in one report.
IdentifiabilityReport identify_report(const TaskBundle& bundle, std::span<const AggregateOccupancy> experts,
                                      const AggregateOccupancy& unsafe_probe, const ScalarSignal& c_for_saturation,
                                      const std::optional<Eigen::VectorXd>& c_star, double tol, Gauge gauge);

}  // namespace iclab
