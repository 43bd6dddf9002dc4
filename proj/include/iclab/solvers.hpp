#pragma once

#include "iclab/mdp.hpp"

#include <span>
#include <vector>

namespace iclab {

enum class DualMode { classic, pid };
enum class StepSchedule { inv_sqrt, constant };

struct PidGains {
  double kp = 0.25;
  double ki = 0.05;
  double kd = 0.1;
};

struct CrlParams {
  int num_iters = 200;
  double eta0 = 1.0;
  StepSchedule schedule = StepSchedule::inv_sqrt;
  DualMode dual_mode = DualMode::classic;
  PidGains pid;
  double lambda_max = 100.0;

  /// eta_i for the 1-based round i.
  double learning_rate(int i) const;
  void validate() const;
};

struct CrlResult {
  /// Uniform mixture over the N best responses (identical responses merged).
  MixturePolicy mixture;
  Policy last_iterate;
  /// Occupancy of the mixture.
  OccupancyMeasure occupancy;
  /// lambda_1 .. lambda_N, the multipliers each best response was computed under.
  std::vector<double> lambda_trace;
  /// lambda_{N+1}.
  double final_lambda = 0.0;
  double achieved_value = 0.0;
  double achieved_violation = 0.0;
  double delta = 0.0;
};

/// Greedy policy from exact backward induction. Ties go to the lowest action index.
Policy rl_best_response(const Mdp& mdp, const ScalarSignal& signal);
Policy rl_best_response(const Mdp& mdp, const Table& signal);

/// max over policies of J(pi, signal).
double optimal_value(const Mdp& mdp, const Table& signal);

/// Entropy-regularized backward induction; returns softmax(Q_soft / temperature).
Policy soft_rl(const Mdp& mdp, const ScalarSignal& signal, double temperature);
Policy soft_rl(const Mdp& mdp, const Table& signal, double temperature);

/// Lagrangian game: best-responding policy player against a projected dual player.
CrlResult crl(const Mdp& mdp, const ScalarSignal& r, const ScalarSignal& c, double delta,
              const CrlParams& params);
/// Same game on unbounded tables (learned constraints are not clipped for solving).
CrlResult crl(const Mdp& mdp, const Table& r, const Table& c, double delta,
              const CrlParams& params);

/// min over the grid of [max_pi J(pi, r - lambda c) + lambda delta].
double crl_dual_oracle(const Mdp& mdp, const ScalarSignal& r, const ScalarSignal& c,
                       double delta, std::span<const double> lambda_grid);

/// Entropy-regularized constrained optimum: soft_rl(r - lambda c) with lambda >= 0 found by
/// bisection so that J(pi, c) = delta (or lambda = 0 if the constraint is slack).
Policy soft_constrained_policy(const Mdp& mdp, const Table& r, const Table& c, double delta,
                               double temperature, double* lambda_out = nullptr);

}  // namespace iclab
