#pragma once

// Gridworld and chain analogs with known ground-truth constraints, expert
// generation and task distributions.

#include "iclab/constraints.hpp"
#include "iclab/solvers.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace iclab {

/// Safe-side margin of every built-in ground truth.
inline constexpr double kSafeMargin = 0.1;

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell&) const = default;
};

struct GridSpec {
  int width = 10;
  int height = 10;
  std::vector<Cell> wall_cells;
  std::vector<Cell> start_cells;
  Cell goal_cell;
  /// 4 or 8 moves, plus "stay" as action 0.
  int moves = 4;
  double slip_prob = 0.0;
  int horizon = 20;

  void validate() const;
  int state_of(Cell c) const { return c.y * width + c.x; }
  Cell cell_of(int s) const { return {s % width, s / width}; }
  bool is_wall(Cell c) const;
};

/// `#` wall, `.` free, `S` start, `G` goal; one line per row, row 0 first (y = 0).
GridSpec parse_maze(const std::string& text, int moves = 4, int horizon = 20, double slip_prob = 0.0);
std::string format_maze(const GridSpec& spec);

struct GroundTruth {
  ScalarSignal c_star;
  std::string description;
  /// Weights realizing c_star in the registered feature map.
  Eigen::VectorXd realizing_weights;
  /// max |c_w - c*| for realizing_weights.
  double realization_gap = 0.0;
};

struct Environment {
  std::string name;
  Mdp mdp;
  ScalarSignal reward;
  GroundTruth truth;
  FeatureMapPtr features;
  /// Ball radius of the default constraint set (contains realizing_weights).
  double w_max = 1.0;
  std::optional<GridSpec> grid;
};

/// Grid dynamics shared by the maze and position environments.
Mdp make_grid_mdp(const GridSpec& spec);
/// Cell displacement of each action.
std::vector<Cell> action_moves(int moves);

/// Permeable-wall maze: c* = 1 on wall cells, -margin elsewhere; reward exp(-dist to goal).
Environment make_maze_env(const GridSpec& spec);
FeatureMapPtr make_cell_onehot_features(int num_states, int num_actions);

struct WallClassification {
  /// predicted[y][x]: cell's constraint value mapped to [0, 1] by (c / max|c| + 1) / 2 exceeds 0.5.
  std::vector<std::vector<int>> predicted;
  /// The mapped values, same layout.
  std::vector<std::vector<double>> mapped;
  int true_pos = 0;
  int false_pos = 0;
  int false_neg = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Thresholds a per-cell constraint (max over actions) against the maze's wall cells.
WallClassification classify_walls(const GridSpec& spec, const Table& constraint);

struct PositionOptions {
  int size = 10;
  double slope = 0.5;
  int horizon = 12;
  int moves = 4;
  /// Reward direction; (1, 0) rewards progress in +x.
  double dir_x = 1.0;
  double dir_y = 0.0;
};
/// Open grid rewarding progress along (dir_x, dir_y); c* = (slope*x - y) / scale, which is
/// positive exactly on the unsafe side; affine (x, y, 1) features realize it.
Environment make_position_env(const PositionOptions& opts);
/// Unit normal of the boundary direction read from the (x, y) part of w.
std::pair<double, double> position_boundary_direction(const Eigen::VectorXd& w);

struct VelocityOptions {
  std::vector<double> speeds = {0.75, 1.0};
  double vmax = 0.75;
  int horizon = 10;
  /// Chain cells per unit of distance.
  int cells_per_unit = 4;
  /// 0 picks a chain long enough that the walls are never reached.
  int num_positions = 0;
};
/// Chain where actions pick a direction and a speed; c* = +1 if speed > vmax else -margin.
Environment make_velocity_env(const VelocityOptions& opts);
/// Budget-normalized speed threshold implied by a learned constraint and its delta.
double velocity_threshold(const VelocityOptions& opts, const Eigen::VectorXd& w, double delta,
                          int horizon);

struct Expert {
  Policy policy;                    // Markov policy with the CRL mixture's occupancy
  double delta = 0.0;
  std::vector<Trajectory> demos;
  std::vector<Trajectory> validation;
};

/// CRL on c* with delta = -margin * T / 2; demos from (1 - noise) pi_E + noise * uniform.
Expert make_expert(const Mdp& mdp, const ScalarSignal& r, const GroundTruth& truth,
                   const CrlParams& params, double noise, int n_demos, std::uint64_t seed,
                   int n_validation = 0);

struct TaskSample {
  std::string id;
  ScalarSignal reward;
  Expert expert;
};

struct TaskFamilyParams {
  int n_demos = 20;
  int n_validation = 20;
  double noise = 0.0;
  CrlParams crl;
  /// Base maze for maze-goals; its goal cell is ignored.
  std::optional<GridSpec> maze;
  PositionOptions position;
  double min_angle = -0.6;
  double max_angle = 0.6;
};

/// Deterministic-given-seed task sampler over one shared environment.
class TaskDistribution {
 public:
  TaskDistribution(std::string family, TaskFamilyParams params, std::uint64_t seed);

  const Environment& environment() const { return env_; }
  /// Task `index` (pure function of seed and index).
  TaskSample task(int index) const;
  TaskSample next() { return task(counter_++); }

 private:
  std::string family_;
  TaskFamilyParams params_;
  std::uint64_t seed_;
  Environment env_;
  std::vector<Cell> goal_pool_;
  int counter_ = 0;
};

TaskDistribution make_task_distribution(const std::string& family, const TaskFamilyParams& params,
                                        std::uint64_t seed);

/// Goal reward of the maze for an arbitrary goal cell.
ScalarSignal maze_reward(const GridSpec& spec, Cell goal);

/// The 10x10 maze used by the maze10 fixture (goal column on the right).
GridSpec maze10_spec();
/// One task per rightmost-column cell of the maze10 layout.
std::vector<Cell> maze10_goals();

struct Fixture {
  std::string name;
  Environment env;
  CrlParams crl;
  int rounds = 10;
  int n_demos = 20;
  int n_validation = 20;
};

std::vector<std::string> fixture_names();
/// Throws ArgumentError for unknown names.
Fixture make_fixture(const std::string& name);

/// Feature-map registry: "position", "velocity", "cell-onehot".
std::vector<std::string> feature_map_ids();
FeatureMapPtr feature_map_for(const std::string& id, const Environment& env);

}  // namespace iclab
