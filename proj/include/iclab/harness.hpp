#pragma once

// Run configuration, pipelines and artifacts. A run is a pure function of its
// RunConfig: execute() builds every artifact in memory, run() writes them.

#include "iclab/identify.hpp"
#include "iclab/io.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace iclab {

struct IdentifyConfig {
  int states = 3;
  int actions = 2;
  int horizon = 5;
  /// "raw" or "modulo_constants".
  std::string gauge = "modulo_constants";
  double tol = 1e-8;
  double temperature = 0.5;
};

struct RunConfig {
  /// crl, icl, mticl, identify, baseline-chou.
  std::string algorithm = "icl";
  /// Built-in fixture; ignored when env_file or expert_dir is set.
  std::string fixture = "velocity";
  /// Environment JSON written by gen-env.
  std::string env_file;
  /// Bundle directory written by gen-expert (environment plus demos).
  std::string expert_dir;
  std::uint64_t seed = 0;
  /// 0 means the fixture default.
  int rounds = 0;
  /// Number of tasks for mticl.
  int tasks = 10;
  /// Single-task runs on maze10: index into the goal column (-1 keeps the fixture's goal).
  int task_index = -1;
  double noise = 0.0;
  /// 0 means the fixture default.
  int demos = 0;
  int validation_demos = 0;
  /// 0 means the fixture default.
  int crl_iters = 0;
  double crl_eta0 = 1.0;
  std::string crl_schedule = "inv_sqrt";
  std::string crl_dual = "classic";
  double crl_lambda_max = 100.0;
  PidGains crl_pid;
  /// Budget for the crl pipeline; unset picks -margin * T / 2.
  std::optional<double> crl_delta;
  /// ftrl or regression.
  std::string update = "ftrl";
  double alpha = 0.0;
  /// learned_family or own_constraint.
  std::string validation_key = "learned_family";
  double selection_tol = 0.01;
  double anneal_buffer = 0.0;
  /// held_out_tasks or held_out_demos.
  std::string mt_validation = "held_out_tasks";
  double held_out_fraction = 0.2;
  /// Candidate trajectories sampled by baseline-chou.
  int baseline_budget = 400;
  IdentifyConfig identify;
};

/// Config file and override plumbing. Errors are ConfigError with the source line.
Json to_json(const RunConfig& c);
/// `source` names the origin in messages; `text` (when given) is used to locate keys.
RunConfig run_config_from_json(const Json& j, const std::string& source = "config",
                               const std::string& text = "");
RunConfig parse_run_config(const std::string& text, const std::string& source = "config",
                           const std::vector<std::pair<std::string, std::string>>& overrides = {});
/// Reads the file and applies the process's ICL_* overrides.
RunConfig load_run_config(const std::filesystem::path& path);
/// ICL_<KEY> sets a top-level key, ICL_<A>__<B> sets A.B (lower-cased). Values parse as
/// JSON when possible and as strings otherwise.
void apply_overrides(Json& config, const std::vector<std::pair<std::string, std::string>>& env);
/// The process environment's ICL_* variables, sorted by name.
std::vector<std::pair<std::string, std::string>> environment_overrides();
void validate(const RunConfig& c);

/// One metrics CSV row. Optional fields are written as empty cells.
struct MetricsRow {
  int epoch = 0;
  double J_r = 0.0;
  std::optional<double> J_c_learned;
  double J_cstar = 0.0;
  double JE_r = 0.0;
  double JE_cstar = 0.0;
  std::optional<double> regret;
  std::optional<double> avg_regret;
  Eigen::VectorXd constraint_params;
};

inline constexpr const char* kMetricsHeader =
    "epoch,J_r,J_c_learned,J_cstar,JE_r,JE_cstar,regret,avg_regret,constraint_params";
inline constexpr int kMetricsSchemaVersion = 1;

std::string format_number(double v);
std::string metrics_csv(const std::vector<MetricsRow>& rows);

/// Exact learner values against demo estimates of the expert.
MetricsRow eval_policy_vs_truth(const Mdp& mdp, const OccupancyMeasure& occ, const ScalarSignal& r,
                                const ScalarSignal& c_star, std::span<const Trajectory> expert_trajs,
                                const std::optional<LinearConstraint>& c_learned = std::nullopt);
MetricsRow eval_policy_vs_truth(const Mdp& mdp, const MixturePolicy& policy, const ScalarSignal& r,
                                const ScalarSignal& c_star, std::span<const Trajectory> expert_trajs,
                                const std::optional<LinearConstraint>& c_learned = std::nullopt);
MetricsRow eval_policy_vs_truth(const Mdp& mdp, const Policy& policy, const ScalarSignal& r,
                                const ScalarSignal& c_star, std::span<const Trajectory> expert_trajs,
                                const std::optional<LinearConstraint>& c_learned = std::nullopt);

struct BaselineResult {
  LinearConstraint constraint;
  int candidates = 0;
  int sampled = 0;
  std::vector<std::string> warnings;
};

/// Single regression fit of above-expert candidate trajectories (+1) against the demos (-1).
/// Candidates come from soft-RL policies over a temperature ladder.
BaselineResult baseline_chou(const Mdp& mdp, const ScalarSignal& r, std::span<const Trajectory> expert_trajs,
                             FeatureMapPtr fmap, const ConstraintSet& set, int budget, std::uint64_t seed);

/// The environment, tasks and solver settings a config resolves to.
struct Problem {
  Environment env;
  /// Fixture name, or the environment's own name.
  std::string name;
  CrlParams crl;
  int rounds = 10;
  TaskBundle bundle;
};

Problem make_problem(const RunConfig& c);
IclParams icl_params(const RunConfig& c, const Problem& p);

struct RunResult {
  /// Relative path -> file contents.
  std::map<std::string, std::string> files;
  Json report;
  std::vector<MetricsRow> metrics;
  bool ok = true;
};

/// Runs the pipeline in memory. Pipeline failures are caught and recorded in the
/// report (ok = false); ConfigError propagates.
RunResult execute(const RunConfig& c);
/// execute() plus writing every artifact under out_dir. Returns the process exit code
/// (0 success, 3 pipeline error).
int run(const RunConfig& c, const std::filesystem::path& out_dir);
void write_artifacts(const RunResult& r, const std::filesystem::path& out_dir);

/// Expert bundle for a config (gen-expert): env.json, mdp.json, manifest.json, tasks/.
void write_expert_bundle(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace iclab
