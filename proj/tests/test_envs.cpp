#include "doctest.h"
#include "helpers.hpp"

#include "iclab/envs.hpp"
#include "iclab/errors.hpp"
#include "iclab/identify.hpp"

#include <cmath>
#include <set>

using namespace iclab;

namespace {

const char* kSmallMaze =
    "S....\n"
    ".###.\n"
    "....G\n";

}  // namespace

TEST_CASE("parse_maze and format_maze round-trip") {
  const GridSpec g = parse_maze(kSmallMaze);
  CHECK(g.width == 5);
  CHECK(g.height == 3);
  CHECK(g.wall_cells.size() == 3);
  CHECK(g.goal_cell == Cell{4, 2});
  CHECK(g.start_cells == std::vector<Cell>{{0, 0}});
  CHECK(format_maze(g) == kSmallMaze);
  CHECK(parse_maze(format_maze(g)).wall_cells == g.wall_cells);
  CHECK_THROWS(parse_maze("S..\n..\n"));
}

TEST_CASE("maze: empty layout has a vacuous constraint and CRL equals RL") {
  const Environment env = make_maze_env(parse_maze("S...\n....\n...G\n", 4, 8));
  CHECK(env.truth.c_star.values().maxCoeff() <= 0.0);
  CrlParams p;
  p.num_iters = 50;
  const auto res = crl(env.mdp, env.reward, env.truth.c_star, -kSafeMargin * 8 * 0.5, p);
  CHECK(res.achieved_value == doctest::Approx(optimal_value(env.mdp, env.reward.values())).epsilon(1e-12));
}

TEST_CASE("maze: the goal cell carries the largest reward") {
  const Environment env = make_maze_env(parse_maze(kSmallMaze));
  const int goal = env.grid->state_of(env.grid->goal_cell);
  const double top = env.reward.values().maxCoeff();
  CHECK(env.reward.values().row(goal).minCoeff() == doctest::Approx(top));
  // Reward falls with euclidean distance to the goal.
  const double near = env.reward(env.grid->state_of({3, 2}), 0), far = env.reward(env.grid->state_of({0, 0}), 0);
  CHECK(top > near);
  CHECK(near > far);
}

TEST_CASE("maze: unit cost for every step spent on a wall cell") {
  const Environment env = make_maze_env(parse_maze(kSmallMaze));
  const GridSpec& g = *env.grid;
  // Walk along row 1 from x = 0 to x = 4: three of the five cells are walls.
  Trajectory tr;
  for (int x = 0; x < 5; ++x) tr.steps.push_back({g.state_of({x, 1}), 0});
  double wall_cost = 0.0;
  int free_steps = 0;
  for (const auto& st : tr.steps) {
    if (g.is_wall(g.cell_of(st.state)))
      wall_cost += env.truth.c_star(st.state, st.action);
    else
      ++free_steps;
  }
  CHECK(wall_cost == doctest::Approx(3.0));
  CHECK(trajectory_total(tr, env.truth.c_star.values()) == doctest::Approx(3.0 - kSafeMargin * free_steps));
}

TEST_CASE("position: boundary is safe, weights encode the slope, zero slope is vacuous") {
  PositionOptions o;
  const Environment env = make_position_env(o);
  const GridSpec& g = *env.grid;
  // (2, 1) lies on 0.5 x - y = 0.
  CHECK(env.truth.c_star(g.state_of({2, 1}), 0) <= 0.0);
  CHECK(env.truth.c_star(g.state_of({4, 1}), 0) > 0.0);
  CHECK(env.truth.c_star(g.state_of({1, 3}), 0) < 0.0);
  const auto [dx, dy] = position_boundary_direction(env.truth.realizing_weights);
  const double n = std::hypot(0.5, 1.0);
  CHECK(std::abs(dx - 0.5 / n) < 1e-9);
  CHECK(std::abs(dy + 1.0 / n) < 1e-9);

  o.slope = 0.0;
  const Environment flat = make_position_env(o);
  CHECK(flat.truth.c_star.values().maxCoeff() <= 0.0);
}

TEST_CASE("velocity: unsafe set, vacuous variant and saturation") {
  VelocityOptions o;
  o.speeds = {0.5, 1.0};
  o.vmax = 0.75;
  const Environment env = make_velocity_env(o);
  const int A = env.mdp.num_actions();
  REQUIRE(A == 4);  // forward 0.5, forward 1.0, backward 0.5, backward 1.0
  for (int s = 0; s < env.mdp.num_states(); ++s) {
    CHECK(env.truth.c_star(s, 0) < 0.0);
    CHECK(env.truth.c_star(s, 1) == 1.0);
    CHECK(env.truth.c_star(s, 2) < 0.0);
    CHECK(env.truth.c_star(s, 3) == 1.0);
  }

  CrlParams p;
  p.num_iters = 1000;
  const Expert e = make_expert(env.mdp, env.reward, env.truth, p, 0.0, 20, 3);
  const Table occ = occupancy(env.mdp, e.policy).aggregate();
  const double T = env.mdp.horizon();
  CHECK(occ.col(0).sum() >= 0.95 * T);
  const Policy greedy = rl_best_response(env.mdp, env.reward);
  CHECK(occupancy(env.mdp, greedy).aggregate().col(1).sum() == doctest::Approx(T));
  CHECK(value(env.mdp, greedy, env.reward) - value(env.mdp, e.policy, env.reward) > 0.0);

  o.vmax = 1.0;
  CHECK(make_velocity_env(o).truth.c_star.values().maxCoeff() <= 0.0);
}

TEST_CASE("make_expert: noise-free demos estimate the expert value, full noise is uniform") {
  const Fixture fx = make_fixture("velocity");
  const Environment& env = fx.env;
  const Expert e = make_expert(env.mdp, env.reward, env.truth, fx.crl, 0.0, 20000, 5);
  double sum = 0.0, sq = 0.0;
  for (const auto& tr : e.demos) {
    const double x = trajectory_total(tr, env.reward.values());
    sum += x;
    sq += x * x;
  }
  const double n = static_cast<double>(e.demos.size());
  const double se = std::sqrt(std::max(sq / n - (sum / n) * (sum / n), 0.0) / n);
  CHECK(std::abs(sum / n - value(env.mdp, e.policy, env.reward)) <= 3 * se + 1e-12);

  const Expert u = make_expert(env.mdp, env.reward, env.truth, fx.crl, 1.0, 4000, 5);
  std::vector<double> counts(env.mdp.num_actions(), 0.0);
  double steps = 0.0;
  for (const auto& tr : u.demos)
    for (const auto& st : tr.steps) counts[st.action] += 1.0, steps += 1.0;
  for (double c : counts) CHECK(std::abs(c / steps - 1.0 / env.mdp.num_actions()) < 0.02);

  CHECK_THROWS_AS(make_expert(env.mdp, env.reward, env.truth, fx.crl, 0.0, 0, 5), ArgumentError);
}

TEST_CASE("fixtures: realizable truth, safe and saturating experts, deterministic construction") {
  for (const auto& name : fixture_names()) {
    CAPTURE(name);
    const Fixture fx = make_fixture(name);
    const Environment& env = fx.env;
    CHECK(env.truth.realization_gap <= 1e-9);
    const Table realized = env.features->evaluate(env.truth.realizing_weights);
    CHECK((realized - env.truth.c_star.values()).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(env.truth.realizing_weights.norm() <= env.w_max + 1e-12);

    const Expert e = make_expert(env.mdp, env.reward, env.truth, fx.crl, 0.0, fx.n_demos, 1);
    const double T = env.mdp.horizon();
    // Exact expert values respect the budget up to the solver tolerance; the demos up to sampling.
    CHECK(value(env.mdp, e.policy, env.truth.c_star) <= e.delta + 0.05 * T);
    CHECK(empirical_value(e.demos, env.truth.c_star) <= 0.05 * T);

    TaskBundle bundle{env.mdp, {BundleTask{"t", env.reward, e.demos, {}, e.policy}}};
    for (const auto& s : verify_saturation(bundle, env.truth.c_star)) CHECK(s.saturated);

    const Fixture again = make_fixture(name);
    CHECK(again.env.mdp.transition_table() == env.mdp.transition_table());
    CHECK(again.env.reward.values() == env.reward.values());
    CHECK(again.env.truth.c_star.values() == env.truth.c_star.values());
  }
  CHECK_THROWS_AS(make_fixture("nope"), ArgumentError);
}

TEST_CASE("task distributions: determinism, maze goal column, safe experts on average") {
  TaskFamilyParams p;
  p.crl.num_iters = 200;
  p.n_demos = 5;
  p.n_validation = 0;
  const TaskDistribution a("position-slopes", p, 4), b("position-slopes", p, 4);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.task(i).reward.values() == b.task(i).reward.values());
    CHECK(a.task(i).expert.demos == b.task(i).expert.demos);
  }

  const auto goals = maze10_goals();
  CHECK(goals.size() == 10);
  CHECK(std::set<Cell>(goals.begin(), goals.end()).size() == 10);
  const GridSpec m = maze10_spec();
  for (const auto& g : goals) {
    CHECK(g.x == m.width - 1);
    CHECK_FALSE(m.is_wall(g));
  }

  const Environment& env = a.environment();
  double total = 0.0;
  for (int i = 0; i < 50; ++i) total += value(env.mdp, a.task(i).expert.policy, env.truth.c_star);
  CHECK(total / 50 <= 0.0);

  CHECK_THROWS_AS(TaskDistribution("unknown", p, 0), ArgumentError);
}

TEST_CASE("classify_walls on a hand grid") {
  const GridSpec g = parse_maze(kSmallMaze);
  const int S = g.width * g.height;
  Table c = Table::Constant(S, 5, -0.5);
  // Mark two of the three walls plus one free cell.
  c.row(g.state_of({1, 1})).setConstant(1.0);
  c.row(g.state_of({2, 1})).setConstant(0.8);
  c.row(g.state_of({0, 2})).setConstant(0.4);
  // A single action above zero is enough for a cell (max over actions).
  c(g.state_of({0, 2}), 3) = 0.6;
  const WallClassification w = classify_walls(g, c);
  CHECK(w.true_pos == 2);
  CHECK(w.false_pos == 1);
  CHECK(w.false_neg == 1);
  CHECK(w.precision == doctest::Approx(2.0 / 3.0));
  CHECK(w.recall == doctest::Approx(2.0 / 3.0));
  CHECK(w.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(w.mapped[1][1] == doctest::Approx(1.0));
  CHECK(w.mapped[0][0] == doctest::Approx(0.25));

  const Environment env = make_maze_env(g);
  CHECK(classify_walls(g, env.truth.c_star.values()).f1 == 1.0);
  CHECK(classify_walls(g, Table::Zero(S, 5)).f1 == 0.0);
}

TEST_CASE("velocity_threshold reads the truth back from the realizing weights") {
  const Fixture fx = make_fixture("velocity");
  VelocityOptions o;
  const int T = fx.env.mdp.horizon();
  // A budget of zero per step puts the boundary where c_w changes sign.
  const double v = velocity_threshold(o, fx.env.truth.realizing_weights, 0.0, T);
  CHECK(v > 0.75);
  CHECK(v < 1.0);
}
