#pragma once

// The acceptance suite: ten pass/fail checks over the solvers, the learning
// games and the harness, with thresholds kept in one registry.

#include "iclab/harness.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace iclab {

struct AcceptanceThresholds {
  /// Value slack, as a fraction of the horizon.
  double slack_per_step = 0.05;
  double velocity_threshold = 0.75;
  double velocity_tol = 0.1;
  /// Boundary normal of the position truth, (0.5, -1) before normalization.
  double position_dir_x = 0.5;
  double position_dir_y = -1.0;
  double position_cosine = 0.99;
  double maze_f1 = 0.8;
  double identify_cosine = 0.99;
  /// Allowed fraction of coverage repetitions whose worst error exceeds epsilon.
  double coverage_failure_rate = 0.05;
  /// Regret bound factor c in Reg(N) <= c G D sqrt(N).
  double regret_factor = 2.0;
  double noise = 0.1;
};

/// Thresholds of a fixture (every fixture currently shares the defaults).
AcceptanceThresholds fixture_thresholds(const std::string& fixture);

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  /// Empty runs all ten.
  std::vector<int> criteria;
  /// Restricts the fixture-based criteria to one fixture; empty means every fixture.
  std::string fixture;
  std::uint64_t seed = 1;
  /// Scratch space for the determinism check.
  std::filesystem::path work_dir = "acceptance_work";
  /// Called after each criterion finishes.
  std::function<void(const CriterionResult&)> on_result;
};

/// Criteria that exercise a fixture (all ten for an empty name).
std::vector<int> criteria_for_fixture(const std::string& fixture);

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opts);

/// "[PASS] 3 title: detail (1.2 s)".
std::string format_result(const CriterionResult& r);

}  // namespace iclab
