#include "iclab/envs.hpp"

#include "iclab/errors.hpp"
#include "iclab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace iclab {

namespace {

struct Realization {
  Eigen::VectorXd w;
  double gap;
};

// Least-squares weights for c* in the feature map and the resulting max-abs gap.
Realization realize(const FeatureMap& fmap, const ScalarSignal& c_star) {
  const int S = fmap.num_states();
  const int A = fmap.num_actions();
  Eigen::VectorXd target(S * A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) target(s * A + a) = c_star(s, a);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(fmap.matrix());
  Eigen::VectorXd w = cod.solve(target);
  const double gap = (fmap.matrix() * w - target).cwiseAbs().maxCoeff();
  // Snap round-off so exactly realizable truths report a zero gap.
  return {w, gap < 1e-12 ? 0.0 : gap};
}

double margin_or_unsafe(bool unsafe) { return unsafe ? 1.0 : -kSafeMargin; }

}  // namespace

bool GridSpec::is_wall(Cell c) const {
  return std::find(wall_cells.begin(), wall_cells.end(), c) != wall_cells.end();
}

void GridSpec::validate() const {
  if (width < 1 || height < 1) throw ArgumentError("GridSpec: width and height must be positive");
  if (moves != 4 && moves != 8) throw ArgumentError("GridSpec: moves must be 4 or 8");
  if (!(slip_prob >= 0.0 && slip_prob < 0.5)) throw ArgumentError("GridSpec: slip_prob must be in [0, 0.5)");
  if (horizon < 1) throw ArgumentError("GridSpec: horizon must be >= 1");
  auto inside = [&](Cell c) { return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height; };
  if (start_cells.empty()) throw ArgumentError("GridSpec: at least one start cell is required");
  for (Cell c : start_cells) {
    if (!inside(c)) throw ArgumentError("GridSpec: start cell out of bounds");
    if (is_wall(c)) throw ArgumentError("GridSpec: start cell is a wall");
  }
  if (!inside(goal_cell)) throw ArgumentError("GridSpec: goal cell out of bounds");
  if (is_wall(goal_cell)) throw ArgumentError("GridSpec: goal cell is a wall");
  for (Cell c : wall_cells)
    if (!inside(c)) throw ArgumentError("GridSpec: wall cell out of bounds");
}

GridSpec parse_maze(const std::string& text, int moves, int horizon, double slip_prob) {
  GridSpec spec;
  spec.moves = moves;
  spec.horizon = horizon;
  spec.slip_prob = slip_prob;
  std::vector<std::string> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.empty()) throw ArgumentError("parse_maze: empty maze");
  spec.height = static_cast<int>(rows.size());
  spec.width = static_cast<int>(rows.front().size());
  bool has_goal = false;
  for (int y = 0; y < spec.height; ++y) {
    if (static_cast<int>(rows[y].size()) != spec.width)
      throw ArgumentError("parse_maze: line " + std::to_string(y + 1) + " has the wrong width");
    for (int x = 0; x < spec.width; ++x) {
      switch (rows[y][x]) {
        case '#': spec.wall_cells.push_back({x, y}); break;
        case '.': break;
        case 'S': spec.start_cells.push_back({x, y}); break;
        case 'G':
          if (has_goal) throw ArgumentError("parse_maze: more than one goal");
          spec.goal_cell = {x, y};
          has_goal = true;
          break;
        default:
          throw ArgumentError("parse_maze: unexpected character '" + std::string(1, rows[y][x]) +
                              "' on line " + std::to_string(y + 1));
      }
    }
  }
  if (!has_goal) throw ArgumentError("parse_maze: no goal cell");
  spec.validate();
  return spec;
}

std::string format_maze(const GridSpec& spec) {
  std::string out;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Cell c{x, y};
      char ch = '.';
      if (spec.is_wall(c)) ch = '#';
      if (std::find(spec.start_cells.begin(), spec.start_cells.end(), c) != spec.start_cells.end()) ch = 'S';
      if (c == spec.goal_cell) ch = 'G';
      out.push_back(ch);
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<Cell> action_moves(int moves) {
  std::vector<Cell> out = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  if (moves == 8) {
    out.push_back({1, 1});
    out.push_back({1, -1});
    out.push_back({-1, 1});
    out.push_back({-1, -1});
  }
  return out;
}

Mdp make_grid_mdp(const GridSpec& spec) {
  const int S = spec.width * spec.height;
  const std::vector<Cell> deltas = action_moves(spec.moves);
  const int A = static_cast<int>(deltas.size());
  std::vector<double> P(static_cast<std::size_t>(S) * A * S, 0.0);
  for (int s = 0; s < S; ++s) {
    const Cell c = spec.cell_of(s);
    for (int a = 0; a < A; ++a) {
      const Cell n{std::clamp(c.x + deltas[a].x, 0, spec.width - 1),
                   std::clamp(c.y + deltas[a].y, 0, spec.height - 1)};
      const std::size_t row = (static_cast<std::size_t>(s) * A + a) * S;
      P[row + spec.state_of(n)] += 1.0 - spec.slip_prob;
      P[row + s] += spec.slip_prob;
    }
  }
  Eigen::VectorXd init = Eigen::VectorXd::Zero(S);
  for (Cell c : spec.start_cells) init(spec.state_of(c)) += 1.0 / spec.start_cells.size();
  return Mdp(S, A, spec.horizon, std::move(P), std::move(init));
}

FeatureMapPtr make_cell_onehot_features(int num_states, int num_actions) {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_states) * num_actions, num_states);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a) phi(s * num_actions + a, s) = 1.0;
  return std::make_shared<const FeatureMap>("cell-onehot", num_states, num_actions, std::move(phi));
}

WallClassification classify_walls(const GridSpec& spec, const Table& constraint) {
  if (constraint.rows() != static_cast<Eigen::Index>(spec.width) * spec.height)
    throw ShapeError("classify_walls: constraint does not match the grid");
  const double scale = constraint.cwiseAbs().maxCoeff();
  WallClassification out;
  out.predicted.assign(spec.height, std::vector<int>(spec.width, 0));
  out.mapped.assign(spec.height, std::vector<double>(spec.width, 0.5));
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const double v = constraint.row(spec.state_of({x, y})).maxCoeff();
      const double m = scale > 0.0 ? 0.5 * (v / scale + 1.0) : 0.5;
      const bool wall = spec.is_wall({x, y});
      const bool pred = m > 0.5;
      out.mapped[y][x] = m;
      out.predicted[y][x] = pred ? 1 : 0;
      out.true_pos += wall && pred;
      out.false_pos += !wall && pred;
      out.false_neg += wall && !pred;
    }
  const int tp = out.true_pos;
  out.precision = tp + out.false_pos > 0 ? static_cast<double>(tp) / (tp + out.false_pos) : 0.0;
  out.recall = tp + out.false_neg > 0 ? static_cast<double>(tp) / (tp + out.false_neg) : 0.0;
  out.f1 = tp > 0 ? 2.0 * tp / (2.0 * tp + out.false_pos + out.false_neg) : 0.0;
  return out;
}

ScalarSignal maze_reward(const GridSpec& spec, Cell goal) {
  const int S = spec.width * spec.height;
  const int A = static_cast<int>(action_moves(spec.moves).size());
  Table r(S, A);
  for (int s = 0; s < S; ++s) {
    const Cell c = spec.cell_of(s);
    const double d = std::hypot(static_cast<double>(c.x - goal.x), static_cast<double>(c.y - goal.y));
    r.row(s).setConstant(std::exp(-d));
  }
  return ScalarSignal(std::move(r));
}

Environment make_maze_env(const GridSpec& spec) {
  spec.validate();
  Mdp mdp = make_grid_mdp(spec);
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  Table c(S, A);
  for (int s = 0; s < S; ++s) c.row(s).setConstant(margin_or_unsafe(spec.is_wall(spec.cell_of(s))));
  ScalarSignal c_star(std::move(c));
  FeatureMapPtr fmap = make_cell_onehot_features(S, A);
  Realization re = realize(*fmap, c_star);
  const double w_max = std::ceil(re.w.norm() * 10.0) / 10.0;
  GroundTruth truth{c_star, "unit cost on wall cells, -0.1 elsewhere", re.w, re.gap};
  return Environment{"maze", std::move(mdp), maze_reward(spec, spec.goal_cell), std::move(truth),
                     std::move(fmap), w_max, spec};
}

namespace {

double centered(int v, int n) { return n > 1 ? 2.0 * v / (n - 1) - 1.0 : 0.0; }

}  // namespace

Environment make_position_env(const PositionOptions& opts) {
  if (opts.size < 2) throw ArgumentError("make_position_env: size must be >= 2");
  GridSpec spec;
  spec.width = opts.size;
  spec.height = opts.size;
  spec.moves = opts.moves;
  spec.horizon = opts.horizon;
  spec.start_cells = {{0, 0}};
  spec.goal_cell = {opts.size - 1, opts.size - 1};
  spec.validate();
  Mdp mdp = make_grid_mdp(spec);
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  const std::vector<Cell> deltas = action_moves(opts.moves);
  const double dn = std::hypot(opts.dir_x, opts.dir_y);
  if (!(dn > 0.0)) throw ArgumentError("make_position_env: reward direction must be nonzero");
  const double step_max = opts.moves == 8 ? std::sqrt(2.0) : 1.0;

  // Signed distance-like cost: positive exactly where slope*x - y > 0, scaled into [-1, 1].
  double scale = opts.size - 1.0;
  for (int s = 0; s < S; ++s) {
    const Cell cell = spec.cell_of(s);
    scale = std::max(scale, std::abs(opts.slope * cell.x - cell.y));
  }
  Table r(S, A);
  Table c(S, A);
  Eigen::MatrixXd phi(S * A, 3);
  for (int s = 0; s < S; ++s) {
    const Cell cell = spec.cell_of(s);
    for (int a = 0; a < A; ++a) {
      const int nx = std::clamp(cell.x + deltas[a].x, 0, opts.size - 1);
      const int ny = std::clamp(cell.y + deltas[a].y, 0, opts.size - 1);
      r(s, a) = ((nx - cell.x) * opts.dir_x + (ny - cell.y) * opts.dir_y) / (dn * step_max);
      c(s, a) = (opts.slope * cell.x - cell.y) / scale;
      phi.row(s * A + a) << centered(cell.x, opts.size), centered(cell.y, opts.size), 1.0;
    }
  }
  ScalarSignal c_star(std::move(c));
  auto fmap = std::make_shared<const FeatureMap>("position", S, A, std::move(phi));
  Realization re = realize(*fmap, c_star);
  GroundTruth truth{c_star, "(slope*x - y) / scale, positive on the unsafe side", re.w, re.gap};
  return Environment{"position", std::move(mdp), ScalarSignal(std::move(r)), std::move(truth),
                     std::move(fmap), 1.0, spec};
}

std::pair<double, double> position_boundary_direction(const Eigen::VectorXd& w) {
  if (w.size() < 2) throw ShapeError("position_boundary_direction: need at least 2 weights");
  const double n = std::hypot(w(0), w(1));
  if (n == 0.0) return {0.0, 0.0};
  return {w(0) / n, w(1) / n};
}

namespace {

struct VelocityLayout {
  std::vector<double> speeds;
  std::vector<int> cells;
  double vmin = 0.0;
  double vtop = 0.0;
  int num_positions = 0;
};

VelocityLayout velocity_layout(const VelocityOptions& opts) {
  if (opts.speeds.empty()) throw ArgumentError("make_velocity_env: at least one speed is required");
  if (opts.horizon < 1) throw ArgumentError("make_velocity_env: horizon must be >= 1");
  if (opts.cells_per_unit < 1) throw ArgumentError("make_velocity_env: cells_per_unit must be >= 1");
  VelocityLayout lay;
  lay.speeds = opts.speeds;
  for (double v : lay.speeds)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("make_velocity_env: speeds must be nonnegative");
  lay.vmin = *std::min_element(lay.speeds.begin(), lay.speeds.end());
  lay.vtop = *std::max_element(lay.speeds.begin(), lay.speeds.end());
  int max_cells = 0;
  for (double v : lay.speeds) {
    lay.cells.push_back(static_cast<int>(std::lround(v * opts.cells_per_unit)));
    max_cells = std::max(max_cells, lay.cells.back());
  }
  lay.num_positions = opts.num_positions > 0 ? opts.num_positions : 2 * opts.horizon * max_cells + 1;
  return lay;
}

double speed_feature(const VelocityLayout& lay, double v) {
  return lay.vtop > lay.vmin ? 2.0 * (v - lay.vmin) / (lay.vtop - lay.vmin) - 1.0 : 0.0;
}

}  // namespace

Environment make_velocity_env(const VelocityOptions& opts) {
  const VelocityLayout lay = velocity_layout(opts);
  const int S = lay.num_positions;
  const int nv = static_cast<int>(lay.speeds.size());
  const int A = 2 * nv;  // forward speeds, then backward speeds
  const int max_cells = *std::max_element(lay.cells.begin(), lay.cells.end());
  std::vector<double> P(static_cast<std::size_t>(S) * A * S, 0.0);
  Table r(S, A);
  Table c(S, A);
  Eigen::MatrixXd phi(S * A, 2);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const int k = a % nv;
      const int dir = a < nv ? 1 : -1;
      const int next = std::clamp(s + dir * lay.cells[k], 0, S - 1);
      P[(static_cast<std::size_t>(s) * A + a) * S + next] = 1.0;
      r(s, a) = max_cells > 0 ? static_cast<double>(next - s) / max_cells : 0.0;
      c(s, a) = margin_or_unsafe(lay.speeds[k] > opts.vmax);
      phi.row(s * A + a) << speed_feature(lay, lay.speeds[k]), 1.0;
    }
  }
  Eigen::VectorXd init = Eigen::VectorXd::Zero(S);
  init(S / 2) = 1.0;
  Mdp mdp(S, A, opts.horizon, std::move(P), std::move(init));
  ScalarSignal c_star(std::move(c));
  auto fmap = std::make_shared<const FeatureMap>("velocity", S, A, std::move(phi));
  Realization re = realize(*fmap, c_star);
  GroundTruth truth{c_star, "unit cost for speed above vmax, -0.1 otherwise", re.w, re.gap};
  return Environment{"velocity", std::move(mdp), ScalarSignal(std::move(r)), std::move(truth),
                     std::move(fmap), 1.0, std::nullopt};
}

double velocity_threshold(const VelocityOptions& opts, const Eigen::VectorXd& w, double delta,
                          int horizon) {
  const VelocityLayout lay = velocity_layout(opts);
  if (w.size() != 2) throw ShapeError("velocity_threshold: expected 2 weights");
  if (!(w(0) > 0.0) || lay.vtop <= lay.vmin) return std::numeric_limits<double>::quiet_NaN();
  const double feature_bound = (delta / horizon - w(1)) / w(0);
  return lay.vmin + 0.5 * (feature_bound + 1.0) * (lay.vtop - lay.vmin);
}

Expert make_expert(const Mdp& mdp, const ScalarSignal& r, const GroundTruth& truth,
                   const CrlParams& params, double noise, int n_demos, std::uint64_t seed,
                   int n_validation) {
  if (n_demos < 1) throw ArgumentError("make_expert: n_demos must be >= 1");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ArgumentError("make_expert: noise must be in [0, 1]");
  const double delta = -kSafeMargin * mdp.horizon() * 0.5;
  const CrlResult res = crl(mdp, r, truth.c_star, delta, params);
  Policy pi = to_markov(res.occupancy);
  const Policy behaviour = with_action_noise(pi, noise);
  Expert out{std::move(pi), delta, {}, {}};
  out.demos = sample_trajectories(mdp, behaviour, n_demos, derive_seed(seed, "demos"));
  if (n_validation > 0)
    out.validation = sample_trajectories(mdp, behaviour, n_validation, derive_seed(seed, "validation"));
  return out;
}

GridSpec maze10_spec() {
  // A thick permeable block between the starts and the goal column; rows 0 and 9
  // are the only ways around it.
  static const char* kLayout =
      "..........\n"
      "...######.\n"
      "...######.\n"
      "...######.\n"
      "S..######.\n"
      "S..######.\n"
      "...######.\n"
      "...######.\n"
      "...######.\n"
      ".........G\n";
  return parse_maze(kLayout, 4, 20);
}

std::vector<Cell> maze10_goals() {
  const GridSpec spec = maze10_spec();
  std::vector<Cell> goals;
  for (int y = 0; y < spec.height; ++y) goals.push_back({spec.width - 1, y});
  return goals;
}

TaskDistribution::TaskDistribution(std::string family, TaskFamilyParams params, std::uint64_t seed)
    : family_(std::move(family)),
      params_(std::move(params)),
      seed_(seed),
      env_([&]() -> Environment {
        if (family_ == "maze-goals") return make_maze_env(params_.maze ? *params_.maze : maze10_spec());
        if (family_ == "position-slopes") return make_position_env(params_.position);
        throw ArgumentError("make_task_distribution: unknown family '" + family_ + "'");
      }()) {
  if (family_ == "maze-goals") {
    const GridSpec& g = *env_.grid;
    for (int s = 0; s < g.width * g.height; ++s)
      if (!g.is_wall(g.cell_of(s))) goal_pool_.push_back(g.cell_of(s));
  }
}

TaskSample TaskDistribution::task(int index) const {
  RandomStream rng(derive_seed(seed_, static_cast<std::uint64_t>(index)), "task");
  TaskSample out{"", env_.reward, {Policy::uniform(1, 1, 1), 0.0, {}, {}}};
  if (family_ == "maze-goals") {
    const Cell goal = goal_pool_[rng.uniform_int(static_cast<int>(goal_pool_.size()))];
    out.id = "goal_" + std::to_string(goal.x) + "_" + std::to_string(goal.y);
    out.reward = maze_reward(*env_.grid, goal);
  } else {
    const double angle = params_.min_angle + (params_.max_angle - params_.min_angle) * rng.uniform();
    PositionOptions o = params_.position;
    o.dir_x = std::cos(angle);
    o.dir_y = std::sin(angle);
    out.id = "angle_" + std::to_string(index);
    out.reward = make_position_env(o).reward;
  }
  out.expert = make_expert(env_.mdp, out.reward, env_.truth, params_.crl, params_.noise, params_.n_demos,
                           derive_seed(seed_, "expert/" + std::to_string(index)), params_.n_validation);
  return out;
}

TaskDistribution make_task_distribution(const std::string& family, const TaskFamilyParams& params,
                                        std::uint64_t seed) {
  return TaskDistribution(family, params, seed);
}

std::vector<std::string> fixture_names() { return {"maze10", "position", "velocity"}; }

Fixture make_fixture(const std::string& name) {
  CrlParams crl;
  crl.num_iters = 1000;
  if (name == "maze10") {
    // 10 tasks x 15 rounds of CRL; 300 iterations keep a full run well under a minute.
    crl.num_iters = 300;
    return Fixture{name, make_maze_env(maze10_spec()), crl, 15, 20, 20};
  }
  if (name == "position") {
    return Fixture{name, make_position_env(PositionOptions{}), crl, 10, 20, 20};
  }
  if (name == "velocity") {
    return Fixture{name, make_velocity_env(VelocityOptions{}), crl, 10, 20, 20};
  }
  throw ArgumentError("unknown fixture '" + name + "'");
}

std::vector<std::string> feature_map_ids() { return {"position", "velocity", "cell-onehot"}; }

FeatureMapPtr feature_map_for(const std::string& id, const Environment& env) {
  if (id == "cell-onehot") return make_cell_onehot_features(env.mdp.num_states(), env.mdp.num_actions());
  if (id == env.features->id()) return env.features;
  throw ArgumentError("feature map '" + id + "' is not available for environment '" + env.name + "'");
}

}  // namespace iclab
