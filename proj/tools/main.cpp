// Command-line front end: every subcommand resolves a RunConfig from
// --config, ICL_* environment variables and flags (in that order).

#include "iclab/acceptance.hpp"
#include "iclab/errors.hpp"
#include "iclab/harness.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

namespace {

using namespace iclab;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitPipeline = 3;
constexpr int kExitAcceptance = 4;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> fixture;
  std::optional<int> tasks;
  std::optional<int> rounds;
  std::optional<double> noise;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run config");
  cmd->add_option("--seed", f.seed, "Root seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--fixture", f.fixture, "Built-in fixture: maze10, position, velocity");
  cmd->add_option("--tasks", f.tasks, "Number of tasks (mticl, gen-expert)");
  cmd->add_option("--rounds", f.rounds, "Game rounds N");
  cmd->add_option("--noise", f.noise, "Expert action noise epsilon");
}

RunConfig resolve(const Flags& f, const std::string& algorithm) {
  RunConfig c = f.config.empty()
                    ? parse_run_config(to_json(RunConfig{}).dump(), "defaults", environment_overrides())
                    : load_run_config(f.config);
  if (!algorithm.empty()) c.algorithm = algorithm;
  if (f.seed) c.seed = *f.seed;
  if (f.fixture) c.fixture = *f.fixture;
  if (f.tasks) c.tasks = *f.tasks;
  if (f.rounds) c.rounds = *f.rounds;
  if (f.noise) c.noise = *f.noise;
  validate(c);
  return c;
}

std::string out_dir(const Flags& f, const std::string& fallback) { return f.out.empty() ? fallback : f.out; }

int report_run(const RunConfig& c, const std::string& dir) {
  const RunResult r = execute(c);
  write_artifacts(r, dir);
  if (!r.ok) {
    std::cerr << "error: " << r.report.value("error", std::string()) << " (see " << dir << "/report.json)\n";
    return kExitPipeline;
  }
  std::cout << "wrote " << dir << " (" << r.files.size() << " files)\n";
  return kExitOk;
}

int cmd_gen_env(const Flags& f, const std::string& maze_file, int horizon) {
  Environment env = [&] {
    if (!maze_file.empty()) {
      Environment e = make_maze_env(parse_maze(read_text(maze_file), 4, horizon > 0 ? horizon : 20));
      e.name = std::filesystem::path(maze_file).stem().string();
      return e;
    }
    return make_fixture(f.fixture.value_or("velocity")).env;
  }();
  const std::filesystem::path dir = out_dir(f, "runs/env");
  write_json(dir / "env.json", to_json(env));
  std::cout << "wrote " << (dir / "env.json").string() << "\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, const std::string& run_dir, const std::string& constraint_file) {
  const std::filesystem::path dir(run_dir);
  RunConfig c = load_run_config(dir / "config.json");
  if (f.seed) c.seed = *f.seed;
  const Problem p = make_problem(c);
  const std::filesystem::path cfile = constraint_file.empty() ? dir / "constraint_final.json" : std::filesystem::path(constraint_file);
  const LinearConstraint con = constraint_from_json(read_json(cfile), p.env.features);
  const CrlProblem prob = normalized_constraint(con);
  const double T = p.env.mdp.horizon();
  Json rows = Json::array();
  std::vector<MetricsRow> metrics;
  int epoch = 0;
  for (const auto& t : p.bundle.tasks) {
    // Budget as in the game: the expert's value for one task, zero for shared constraints.
    const double delta = c.algorithm == "mticl" ? 0.0 : con.value_of(empirical_features(t.demos, *p.env.features));
    const CrlResult res = crl(p.env.mdp, t.reward.values(), prob.constraint, std::clamp(delta / prob.scale, -T, T), p.crl);
    MetricsRow row = eval_policy_vs_truth(p.env.mdp, res.occupancy, t.reward, p.env.truth.c_star, t.demos, con);
    row.epoch = ++epoch;
    rows.push_back(Json{{"task_id", t.id}, {"J_r", row.J_r}, {"J_cstar", row.J_cstar}, {"JE_r", row.JE_r},
                        {"JE_cstar", row.JE_cstar}, {"J_c_learned", *row.J_c_learned}, {"delta", delta}});
    metrics.push_back(std::move(row));
  }
  const std::filesystem::path out = out_dir(f, (dir / "eval").string());
  write_text(out / "metrics.csv", metrics_csv(metrics));
  write_json(out / "eval.json", Json{{"constraint", to_json(con)}, {"tasks", rows}});
  std::cout << "wrote " << out.string() << "\n";
  return kExitOk;
}

int cmd_check(const Flags& f, const std::vector<int>& criteria) {
  AcceptanceOptions o;
  o.fixture = f.fixture.value_or("");
  if (f.seed) o.seed = *f.seed;
  o.criteria = criteria;
  o.work_dir = out_dir(f, "runs/check");
  o.on_result = [](const CriterionResult& r) { std::cout << format_result(r) << std::endl; };
  const auto results = run_acceptance(o);
  int failed = 0;
  for (const auto& r : results) failed += !r.passed;
  std::cout << (results.size() - failed) << "/" << results.size() << " criteria passed\n";
  return failed ? kExitAcceptance : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse constraint learning on tabular MDPs"};
  app.require_subcommand(1);
  Flags flags;

  std::string maze_file;
  int horizon = 0;
  auto* gen_env = app.add_subcommand("gen-env", "Write an environment JSON (fixture or maze layout)");
  add_common(gen_env, flags);
  gen_env->add_option("--maze", maze_file, "Maze layout text file (# wall, S start, G goal)");
  gen_env->add_option("--horizon", horizon, "Horizon for --maze");

  auto* gen_expert = app.add_subcommand("gen-expert", "Write an expert bundle (environment, demos, policies)");
  add_common(gen_expert, flags);

  std::vector<std::pair<std::string, CLI::App*>> pipelines;
  for (const char* name : {"crl", "icl", "mticl", "identify", "baseline-chou"}) {
    auto* cmd = app.add_subcommand(name, std::string("Run the ") + name + " pipeline");
    add_common(cmd, flags);
    pipelines.emplace_back(name, cmd);
  }

  std::string run_dir, constraint_file;
  auto* eval = app.add_subcommand("eval", "Re-solve a run's constraint and evaluate against the truth");
  add_common(eval, flags);
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--constraint", constraint_file, "Constraint JSON (default: the run's final constraint)");

  std::vector<int> criteria;
  auto* check = app.add_subcommand("check", "Run the acceptance criteria (exit 4 on failure)");
  add_common(check, flags);
  check->add_option("--criteria", criteria, "Criterion ids (default: all for the fixture)")->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_env) return cmd_gen_env(flags, maze_file, horizon);
    if (*gen_expert) {
      RunConfig c = resolve(flags, "");
      if (flags.tasks && *flags.tasks > 1) c.algorithm = "mticl";
      if (c.algorithm != "mticl") c.algorithm = "icl";
      const std::string dir = out_dir(flags, "runs/experts");
      write_expert_bundle(c, dir);
      std::cout << "wrote " << dir << "\n";
      return kExitOk;
    }
    for (const auto& [name, cmd] : pipelines)
      if (*cmd) return report_run(resolve(flags, name), out_dir(flags, "runs/" + name));
    if (*eval) return cmd_eval(flags, run_dir, constraint_file);
    if (*check) return cmd_check(flags, criteria);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPipeline;
  }
  return kExitOk;
}
