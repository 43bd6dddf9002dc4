#include "iclab/harness.hpp"

#include "iclab/errors.hpp"
#include "iclab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <set>

extern char** environ;

namespace iclab {

namespace {

// ---------------------------------------------------------------- config ----

/// Line of every object key in a JSON text, by dotted path.
std::map<std::string, int> key_lines(const std::string& text) {
  std::map<std::string, int> out;
  struct Frame {
    bool object;
    std::string path;
  };
  std::vector<Frame> stack;
  std::string pending;
  int line = 1;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (ch == '\n') {
      ++line;
    } else if (ch == '"') {
      std::string s;
      std::size_t j = i + 1;
      for (; j < text.size() && text[j] != '"'; ++j) {
        if (text[j] == '\\' && j + 1 < text.size()) ++j;
        s += text[j];
      }
      std::size_t k = j + 1;
      while (k < text.size() && (text[k] == ' ' || text[k] == '\t' || text[k] == '\r')) ++k;
      if (k < text.size() && text[k] == ':' && !stack.empty() && stack.back().object) {
        pending = stack.back().path.empty() ? s : stack.back().path + "." + s;
        out.emplace(pending, line);
      }
      i = j;
    } else if (ch == '{' || ch == '[') {
      stack.push_back({ch == '{', ch == '{' ? pending : std::string("[]")});
      pending.clear();
    } else if (ch == '}' || ch == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (ch == ',') {
      pending.clear();
    }
  }
  return out;
}

class Reader {
 public:
  Reader(const Json& root, std::string source, const std::string& text,
         std::map<std::string, std::string> origins)
      : root_(root), source_(std::move(source)), lines_(key_lines(text)), origins_(std::move(origins)) {}

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    throw ConfigError(where(path) + ": key '" + path + "': " + msg);
  }

  std::string where(const std::string& path) const {
    if (auto it = origins_.find(path); it != origins_.end()) return it->second;
    if (auto it = lines_.find(path); it != lines_.end()) return source_ + ":" + std::to_string(it->second);
    return source_;
  }

  const Json* find(const std::string& path) const {
    const Json* node = &root_;
    std::size_t start = 0;
    while (start <= path.size()) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(key)) return nullptr;
      node = &node->at(key);
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    return node;
  }

  void only_keys(const std::string& path, const std::set<std::string>& allowed) const {
    const Json* node = path.empty() ? &root_ : find(path);
    if (!node) return;
    if (!node->is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [key, _] : node->items())
      if (!allowed.count(key)) fail(path.empty() ? key : path + "." + key, "unknown key");
  }

  void get(const std::string& path, int& out) const {
    if (const Json* v = find(path)) {
      if (!v->is_number_integer()) fail(path, "expected an integer");
      const auto x = v->get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) fail(path, "out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const std::string& path, std::uint64_t& out) const {
    if (const Json* v = find(path)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
        fail(path, "expected a nonnegative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& path, double& out) const {
    if (const Json* v = find(path)) {
      if (!v->is_number()) fail(path, "expected a number");
      out = v->get<double>();
      if (!std::isfinite(out)) fail(path, "expected a finite number");
    }
  }
  void get(const std::string& path, std::optional<double>& out) const {
    if (const Json* v = find(path)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      double x = 0.0;
      get(path, x);
      out = x;
    }
  }
  void get(const std::string& path, std::string& out) const {
    if (const Json* v = find(path)) {
      if (!v->is_string()) fail(path, "expected a string");
      out = v->get<std::string>();
    }
  }

 private:
  const Json& root_;
  std::string source_;
  std::map<std::string, int> lines_;
  std::map<std::string, std::string> origins_;
};

/// First violated field rule as (key path, message).
std::optional<std::pair<std::string, std::string>> first_invalid(const RunConfig& c) {
  auto one_of = [](const std::string& v, std::initializer_list<const char*> opts) {
    for (const char* o : opts)
      if (v == o) return true;
    return false;
  };
  auto list = [](std::initializer_list<const char*> opts) {
    std::string s;
    for (const char* o : opts) s += (s.empty() ? "" : ", ") + std::string(o);
    return "must be one of: " + s;
  };
#define ICL_CHECK_ONE_OF(key, value, ...)                              \
  if (!one_of(value, {__VA_ARGS__})) return std::make_pair(std::string(key), list({__VA_ARGS__}));
  ICL_CHECK_ONE_OF("algorithm", c.algorithm, "crl", "icl", "mticl", "identify", "baseline-chou");
  ICL_CHECK_ONE_OF("crl.schedule", c.crl_schedule, "inv_sqrt", "constant");
  ICL_CHECK_ONE_OF("crl.dual", c.crl_dual, "classic", "pid");
  ICL_CHECK_ONE_OF("update", c.update, "ftrl", "regression");
  ICL_CHECK_ONE_OF("validation_key", c.validation_key, "learned_family", "own_constraint");
  ICL_CHECK_ONE_OF("mt_validation", c.mt_validation, "held_out_tasks", "held_out_demos");
  ICL_CHECK_ONE_OF("identify.gauge", c.identify.gauge, "raw", "modulo_constants");
#undef ICL_CHECK_ONE_OF
  if (c.env_file.empty() && c.expert_dir.empty()) {
    const auto names = fixture_names();
    if (std::find(names.begin(), names.end(), c.fixture) == names.end()) {
      std::string s;
      for (const auto& n : names) s += (s.empty() ? "" : ", ") + n;
      return std::make_pair(std::string("fixture"), "unknown fixture (known: " + s + ")");
    }
  }
  auto bad = [](const char* key, const char* msg) { return std::make_pair(std::string(key), std::string(msg)); };
  if (c.rounds < 0) return bad("rounds", "must be >= 0");
  if (c.tasks < 1) return bad("tasks", "must be >= 1");
  if (c.task_index < -1) return bad("task_index", "must be >= -1");
  if (!(c.noise >= 0.0 && c.noise <= 1.0)) return bad("noise", "must lie in [0, 1]");
  if (c.demos < 0) return bad("demos", "must be >= 0");
  if (c.validation_demos < 0) return bad("validation_demos", "must be >= 0");
  if (c.crl_iters < 0) return bad("crl.iters", "must be >= 0");
  if (!(c.crl_eta0 > 0.0)) return bad("crl.eta0", "must be > 0");
  if (!(c.crl_lambda_max > 0.0)) return bad("crl.lambda_max", "must be > 0");
  if (c.alpha < 0.0) return bad("alpha", "must be >= 0 (0 picks the default)");
  if (c.selection_tol < 0.0) return bad("selection_tol", "must be >= 0");
  if (c.anneal_buffer < 0.0) return bad("anneal_buffer", "must be >= 0");
  if (!(c.held_out_fraction > 0.0 && c.held_out_fraction < 1.0)) return bad("held_out_fraction", "must lie in (0, 1)");
  if (c.baseline_budget < 1) return bad("baseline_budget", "must be >= 1");
  if (c.identify.states < 1) return bad("identify.states", "must be >= 1");
  if (c.identify.actions < 2) return bad("identify.actions", "must be >= 2");
  if (c.identify.horizon < 1) return bad("identify.horizon", "must be >= 1");
  if (!(c.identify.tol > 0.0)) return bad("identify.tol", "must be > 0");
  if (!(c.identify.temperature > 0.0)) return bad("identify.temperature", "must be > 0");
  return std::nullopt;
}

RunConfig config_from(const Json& j, const Reader& rd) {
  rd.only_keys("", {"algorithm", "fixture", "env_file", "expert_dir", "seed", "rounds", "tasks", "task_index",
                    "noise", "demos", "validation_demos", "crl", "update", "alpha", "validation_key",
                    "selection_tol", "anneal_buffer", "mt_validation", "held_out_fraction", "baseline_budget",
                    "identify"});
  rd.only_keys("crl", {"iters", "eta0", "schedule", "dual", "lambda_max", "pid", "delta"});
  rd.only_keys("crl.pid", {"kp", "ki", "kd"});
  rd.only_keys("identify", {"states", "actions", "horizon", "gauge", "tol", "temperature"});
  (void)j;
  RunConfig c;
  rd.get("algorithm", c.algorithm);
  rd.get("fixture", c.fixture);
  rd.get("env_file", c.env_file);
  rd.get("expert_dir", c.expert_dir);
  rd.get("seed", c.seed);
  rd.get("rounds", c.rounds);
  rd.get("tasks", c.tasks);
  rd.get("task_index", c.task_index);
  rd.get("noise", c.noise);
  rd.get("demos", c.demos);
  rd.get("validation_demos", c.validation_demos);
  rd.get("crl.iters", c.crl_iters);
  rd.get("crl.eta0", c.crl_eta0);
  rd.get("crl.schedule", c.crl_schedule);
  rd.get("crl.dual", c.crl_dual);
  rd.get("crl.lambda_max", c.crl_lambda_max);
  rd.get("crl.pid.kp", c.crl_pid.kp);
  rd.get("crl.pid.ki", c.crl_pid.ki);
  rd.get("crl.pid.kd", c.crl_pid.kd);
  rd.get("crl.delta", c.crl_delta);
  rd.get("update", c.update);
  rd.get("alpha", c.alpha);
  rd.get("validation_key", c.validation_key);
  rd.get("selection_tol", c.selection_tol);
  rd.get("anneal_buffer", c.anneal_buffer);
  rd.get("mt_validation", c.mt_validation);
  rd.get("held_out_fraction", c.held_out_fraction);
  rd.get("baseline_budget", c.baseline_budget);
  rd.get("identify.states", c.identify.states);
  rd.get("identify.actions", c.identify.actions);
  rd.get("identify.horizon", c.identify.horizon);
  rd.get("identify.gauge", c.identify.gauge);
  rd.get("identify.tol", c.identify.tol);
  rd.get("identify.temperature", c.identify.temperature);
  if (auto bad = first_invalid(c)) rd.fail(bad->first, bad->second);
  return c;
}

std::map<std::string, std::string> apply_overrides_tracked(
    Json& config, const std::vector<std::pair<std::string, std::string>>& env) {
  std::map<std::string, std::string> origins;
  for (const auto& [name, raw] : env) {
    if (name.rfind("ICL_", 0) != 0 || name.size() <= 4) continue;
    std::string rest = name.substr(4);
    std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char ch) { return std::tolower(ch); });
    std::vector<std::string> parts;
    for (std::size_t pos = 0;;) {
      const std::size_t sep = rest.find("__", pos);
      parts.push_back(rest.substr(pos, sep == std::string::npos ? std::string::npos : sep - pos));
      if (sep == std::string::npos) break;
      pos = sep + 2;
    }
    Json value = Json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = raw;
    Json* node = &config;
    std::string path;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].empty()) throw ConfigError("environment " + name + ": empty key segment");
      path += (path.empty() ? "" : ".") + parts[i];
      if (!node->is_object()) throw ConfigError("environment " + name + ": '" + path + "' is not an object");
      if (i + 1 == parts.size()) {
        (*node)[parts[i]] = value;
      } else {
        if (!node->contains(parts[i])) (*node)[parts[i]] = Json::object();
        node = &(*node)[parts[i]];
      }
    }
    origins[path] = "environment " + name;
  }
  return origins;
}

RunConfig parse_with_overrides(const std::string& text, const std::string& source,
                               const std::vector<std::pair<std::string, std::string>>& env) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
    const std::size_t pos = byte > 0 ? byte - 1 : 0;
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
    const std::size_t nl = text.rfind('\n', pos > 0 ? pos - 1 : 0);
    const std::size_t col = nl == std::string::npos || pos == 0 ? pos + 1 : pos - nl;
    std::string msg = e.what();
    if (const auto p = msg.find(": "); p != std::string::npos) msg = msg.substr(p + 2);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
  if (!j.is_object()) throw ConfigError(source + ":1: the config must be a JSON object");
  auto origins = apply_overrides_tracked(j, env);
  return config_from(j, Reader(j, source, text, std::move(origins)));
}

}  // namespace

Json to_json(const RunConfig& c) {
  Json crl{{"iters", c.crl_iters},
           {"eta0", c.crl_eta0},
           {"schedule", c.crl_schedule},
           {"dual", c.crl_dual},
           {"lambda_max", c.crl_lambda_max},
           {"pid", {{"kp", c.crl_pid.kp}, {"ki", c.crl_pid.ki}, {"kd", c.crl_pid.kd}}},
           {"delta", c.crl_delta ? Json(*c.crl_delta) : Json(nullptr)}};
  return Json{{"algorithm", c.algorithm},
              {"fixture", c.fixture},
              {"env_file", c.env_file},
              {"expert_dir", c.expert_dir},
              {"seed", c.seed},
              {"rounds", c.rounds},
              {"tasks", c.tasks},
              {"task_index", c.task_index},
              {"noise", c.noise},
              {"demos", c.demos},
              {"validation_demos", c.validation_demos},
              {"crl", std::move(crl)},
              {"update", c.update},
              {"alpha", c.alpha},
              {"validation_key", c.validation_key},
              {"selection_tol", c.selection_tol},
              {"anneal_buffer", c.anneal_buffer},
              {"mt_validation", c.mt_validation},
              {"held_out_fraction", c.held_out_fraction},
              {"baseline_budget", c.baseline_budget},
              {"identify",
               {{"states", c.identify.states},
                {"actions", c.identify.actions},
                {"horizon", c.identify.horizon},
                {"gauge", c.identify.gauge},
                {"tol", c.identify.tol},
                {"temperature", c.identify.temperature}}}};
}

RunConfig run_config_from_json(const Json& j, const std::string& source, const std::string& text) {
  if (!j.is_object()) throw ConfigError(source + ": the config must be a JSON object");
  return config_from(j, Reader(j, source, text, {}));
}

RunConfig parse_run_config(const std::string& text, const std::string& source,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
  return parse_with_overrides(text, source, overrides);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_with_overrides(text, path.string(), environment_overrides());
}

void apply_overrides(Json& config, const std::vector<std::pair<std::string, std::string>>& env) {
  apply_overrides_tracked(config, env);
}

std::vector<std::pair<std::string, std::string>> environment_overrides() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv(*e);
    const auto eq = kv.find('=');
    if (eq == std::string::npos || kv.rfind("ICL_", 0) != 0) continue;
    out.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void validate(const RunConfig& c) {
  if (auto bad = first_invalid(c)) throw ConfigError("key '" + bad->first + "': " + bad->second);
}

// --------------------------------------------------------------- metrics ----

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    std::string params = "[";
    for (Eigen::Index i = 0; i < r.constraint_params.size(); ++i)
      params += (i ? "," : "") + format_number(r.constraint_params(i));
    params += "]";
    out += std::to_string(r.epoch) + "," + format_number(r.J_r) + "," + opt(r.J_c_learned) + "," +
           format_number(r.J_cstar) + "," + format_number(r.JE_r) + "," + format_number(r.JE_cstar) + "," +
           opt(r.regret) + "," + opt(r.avg_regret) + ",\"" + params + "\"\n";
  }
  return out;
}

MetricsRow eval_policy_vs_truth(const Mdp& mdp, const OccupancyMeasure& occ, const ScalarSignal& r,
                                const ScalarSignal& c_star, std::span<const Trajectory> expert_trajs,
                                const std::optional<LinearConstraint>& c_learned) {
  mdp.check_table(r.values(), "eval reward");
  mdp.check_table(c_star.values(), "eval c_star");
  MetricsRow row;
  row.J_r = inner(occ, r.values());
  row.J_cstar = inner(occ, c_star.values());
  if (!expert_trajs.empty()) {
    row.JE_r = empirical_value(expert_trajs, r);
    row.JE_cstar = empirical_value(expert_trajs, c_star);
  }
  if (c_learned) {
    row.J_c_learned = inner(occ, c_learned->values());
    row.constraint_params = c_learned->weights();
  }
  return row;
}

MetricsRow eval_policy_vs_truth(const Mdp& mdp, const MixturePolicy& policy, const ScalarSignal& r,
                                const ScalarSignal& c_star, std::span<const Trajectory> expert_trajs,
                                const std::optional<LinearConstraint>& c_learned) {
  return eval_policy_vs_truth(mdp, occupancy(mdp, policy), r, c_star, expert_trajs, c_learned);
}

MetricsRow eval_policy_vs_truth(const Mdp& mdp, const Policy& policy, const ScalarSignal& r,
                                const ScalarSignal& c_star, std::span<const Trajectory> expert_trajs,
                                const std::optional<LinearConstraint>& c_learned) {
  return eval_policy_vs_truth(mdp, occupancy(mdp, policy), r, c_star, expert_trajs, c_learned);
}

// -------------------------------------------------------------- problems ----

namespace {

CrlParams crl_params(const RunConfig& c, CrlParams base) {
  if (c.crl_iters > 0) base.num_iters = c.crl_iters;
  base.eta0 = c.crl_eta0;
  base.schedule = c.crl_schedule == "constant" ? StepSchedule::constant : StepSchedule::inv_sqrt;
  base.dual_mode = c.crl_dual == "pid" ? DualMode::pid : DualMode::classic;
  base.lambda_max = c.crl_lambda_max;
  base.pid = c.crl_pid;
  base.validate();
  return base;
}

bool is_fixture(const std::string& name) {
  const auto names = fixture_names();
  return std::find(names.begin(), names.end(), name) != names.end();
}

struct Defaults {
  CrlParams crl;
  int rounds = 10;
  int demos = 20;
  int validation = 20;
};

Defaults defaults_for(const std::string& name) {
  Defaults d;
  d.crl.num_iters = 1000;
  if (is_fixture(name)) {
    const Fixture f = make_fixture(name);
    d = Defaults{f.crl, f.rounds, f.n_demos, f.n_validation};
  }
  return d;
}

BundleTask expert_task(const RunConfig& c, const Environment& env, std::string id, ScalarSignal reward,
                       const CrlParams& crl, int demos, int validation) {
  Expert ex = make_expert(env.mdp, reward, env.truth, crl, c.noise, demos, derive_seed(c.seed, "expert/" + id),
                          validation);
  return BundleTask{std::move(id), std::move(reward), std::move(ex.demos), std::move(ex.validation),
                    std::move(ex.policy)};
}

std::string goal_id(Cell g) { return "goal_" + std::to_string(g.x) + "_" + std::to_string(g.y); }

std::vector<BundleTask> make_tasks(const RunConfig& c, const Environment& env, const std::string& name,
                                   const CrlParams& crl, int demos, int validation) {
  std::vector<BundleTask> tasks;
  if (c.algorithm != "mticl") {
    if (c.task_index < 0) {
      tasks.push_back(expert_task(c, env, "task", env.reward, crl, demos, validation));
      return tasks;
    }
    if (!env.grid) throw ConfigError("key 'task_index': only maze environments have indexed tasks");
    const GridSpec& g = *env.grid;
    const Cell goal{g.width - 1, c.task_index};
    if (c.task_index >= g.height || g.is_wall(goal))
      throw ConfigError("key 'task_index': goal " + goal_id(goal) + " is outside the maze or a wall");
    tasks.push_back(expert_task(c, env, goal_id(goal), maze_reward(g, goal), crl, demos, validation));
    return tasks;
  }
  if (env.grid) {
    // Goals spread over the free cells of the right column (all free cells if that is too few).
    const GridSpec& g = *env.grid;
    std::vector<Cell> pool;
    for (int y = 0; y < g.height; ++y)
      if (!g.is_wall({g.width - 1, y})) pool.push_back({g.width - 1, y});
    if (static_cast<int>(pool.size()) < c.tasks) {
      pool.clear();
      for (int s = 0; s < g.width * g.height; ++s)
        if (!g.is_wall(g.cell_of(s))) pool.push_back(g.cell_of(s));
    }
    if (static_cast<int>(pool.size()) < c.tasks)
      throw ConfigError("key 'tasks': the maze has only " + std::to_string(pool.size()) + " free cells");
    for (int k = 0; k < c.tasks; ++k) {
      const Cell goal = pool[static_cast<std::size_t>(k) * pool.size() / c.tasks];
      tasks.push_back(expert_task(c, env, goal_id(goal), maze_reward(g, goal), crl, demos, validation));
    }
    return tasks;
  }
  if (name == "position") {
    TaskFamilyParams fp;
    fp.n_demos = demos;
    fp.n_validation = validation;
    fp.noise = c.noise;
    fp.crl = crl;
    const TaskDistribution dist("position-slopes", fp, derive_seed(c.seed, "tasks"));
    for (int k = 0; k < c.tasks; ++k) {
      TaskSample s = dist.task(k);
      tasks.push_back(BundleTask{s.id, s.reward, std::move(s.expert.demos), std::move(s.expert.validation),
                                 std::move(s.expert.policy)});
    }
    return tasks;
  }
  if (c.tasks != 1)
    throw ConfigError("key 'tasks': environment '" + name + "' has no task family; use tasks = 1");
  tasks.push_back(expert_task(c, env, "task", env.reward, crl, demos, validation));
  return tasks;
}

}  // namespace

Problem make_problem(const RunConfig& c) {
  validate(c);
  if (!c.expert_dir.empty()) {
    const std::filesystem::path dir(c.expert_dir);
    Environment env = environment_from_json(read_json(dir / "env.json"));
    TaskBundle bundle = load_bundle(dir);
    if (bundle.mdp.num_states() != env.mdp.num_states() || bundle.mdp.num_actions() != env.mdp.num_actions())
      throw ShapeError("expert bundle does not match its environment");
    const Defaults d = defaults_for(env.name);
    const std::string name = env.name;
    return Problem{std::move(env), name, crl_params(c, d.crl), c.rounds > 0 ? c.rounds : d.rounds,
                   std::move(bundle)};
  }
  Environment env = c.env_file.empty() ? make_fixture(c.fixture).env
                                       : environment_from_json(read_json(c.env_file));
  const std::string name = c.env_file.empty() ? c.fixture : env.name;
  const Defaults d = defaults_for(name);
  const CrlParams crl = crl_params(c, d.crl);
  const int demos = c.demos > 0 ? c.demos : d.demos;
  const int validation = c.validation_demos > 0 ? c.validation_demos : d.validation;
  std::vector<BundleTask> tasks;
  if (c.algorithm != "identify") tasks = make_tasks(c, env, name, crl, demos, validation);
  TaskBundle bundle{env.mdp, std::move(tasks)};
  return Problem{std::move(env), name, crl, c.rounds > 0 ? c.rounds : d.rounds, std::move(bundle)};
}

IclParams icl_params(const RunConfig& c, const Problem& p) {
  IclParams ip;
  ip.rounds = p.rounds;
  ip.alpha = c.alpha;
  ip.crl = p.crl;
  ip.update = c.update == "regression" ? ConstraintUpdate::regression : ConstraintUpdate::ftrl;
  ip.anneal_buffer = c.anneal_buffer;
  ip.validation_key = c.validation_key == "own_constraint" ? ValidationKey::own_constraint : ValidationKey::learned_family;
  ip.selection_tol = c.selection_tol;
  return ip;
}

// ------------------------------------------------------------- pipelines ----

namespace {

struct Artifacts {
  std::map<std::string, std::string> files;
  Json report = Json::object();
  std::vector<MetricsRow> metrics;
};

Json row_json(const MetricsRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  return Json{{"epoch", r.epoch},       {"J_r", r.J_r},
              {"J_c_learned", opt(r.J_c_learned)}, {"J_cstar", r.J_cstar},
              {"JE_r", r.JE_r},         {"JE_cstar", r.JE_cstar},
              {"regret", opt(r.regret)}, {"avg_regret", opt(r.avg_regret)},
              {"constraint_params", to_json(r.constraint_params)}};
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rounds/round_%03d.json", epoch);
  return buf;
}

double position_cosine(std::pair<double, double> d) {
  return (0.5 * d.first - d.second) / std::sqrt(1.25);
}

/// Fixture-specific readouts of a sequence of constraints (one per epoch).
void recovery_artifacts(const Problem& p, const std::vector<LinearConstraint>& cs, const std::vector<double>& deltas,
                        int selected, Artifacts& a) {
  Json& rec = a.report["recovery"];
  rec = Json::object();
  const int T = p.env.mdp.horizon();
  if (p.name == "velocity") {
    std::string csv = "epoch,threshold\n";
    for (std::size_t i = 0; i < cs.size(); ++i)
      csv += std::to_string(i + 1) + "," + format_number(velocity_threshold(VelocityOptions{}, cs[i].weights(), deltas[i], T)) + "\n";
    a.files["threshold.csv"] = csv;
    const double th = velocity_threshold(VelocityOptions{}, cs[selected].weights(), deltas[selected], T);
    rec["threshold"] = std::isfinite(th) ? Json(th) : Json(nullptr);
    rec["threshold_target"] = VelocityOptions{}.vmax;
  }
  if (p.env.features->id() == "position") {
    std::string csv = "epoch,dir_x,dir_y,cosine\n";
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const auto d = position_boundary_direction(cs[i].weights());
      csv += std::to_string(i + 1) + "," + format_number(d.first) + "," + format_number(d.second) + "," +
             format_number(position_cosine(d)) + "\n";
    }
    a.files["direction.csv"] = csv;
    const auto d = position_boundary_direction(cs[selected].weights());
    rec["direction"] = {d.first, d.second};
    rec["cosine"] = position_cosine(d);
  }
  if (p.env.grid && p.env.features->id() == "cell-onehot") {
    const GridSpec& g = *p.env.grid;
    std::string csv = "epoch,f1,precision,recall\n";
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const WallClassification w = classify_walls(g, cs[i].values());
      csv += std::to_string(i + 1) + "," + format_number(w.f1) + "," + format_number(w.precision) + "," +
             format_number(w.recall) + "\n";
    }
    a.files["wall_f1.csv"] = csv;
    const WallClassification w = classify_walls(g, cs[selected].values());
    std::string grid, values, truth;
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        grid += (x ? "," : "") + std::to_string(w.predicted[y][x]);
        values += (x ? "," : "") + format_number(w.mapped[y][x]);
        truth += (x ? "," : "") + std::string(g.is_wall({x, y}) ? "1" : "0");
      }
      grid += "\n";
      values += "\n";
      truth += "\n";
    }
    a.files["constraint_grid.csv"] = grid;
    a.files["constraint_values.csv"] = values;
    a.files["wall_truth.csv"] = truth;
    rec["wall_f1"] = w.f1;
    rec["wall_precision"] = w.precision;
    rec["wall_recall"] = w.recall;
  }
}

Json expert_exact(const Problem& p, const std::vector<const BundleTask*>& tasks) {
  double jr = 0.0, jc = 0.0;
  for (const auto* t : tasks) {
    if (!t->expert_policy) return nullptr;
    jr += value(p.env.mdp, *t->expert_policy, t->reward);
    jc += value(p.env.mdp, *t->expert_policy, p.env.truth.c_star);
  }
  const double k = static_cast<double>(tasks.size());
  return Json{{"J_r", jr / k}, {"J_cstar", jc / k}};
}

/// Metrics, per-round files and readouts shared by icl and mticl.
void game_artifacts(const Problem& p, const IclTrace& tr, const std::vector<const BundleTask*>& tasks, Artifacts& a) {
  const Mdp& mdp = p.env.mdp;
  const double K = static_cast<double>(tasks.size());
  std::string regret_csv = "round,loss,regret,avg_regret\n";
  std::string task_csv = "epoch,task_id,J_r,J_c_learned,J_cstar,JE_r,JE_cstar,delta,loss,final_lambda\n";
  std::vector<LinearConstraint> cs;
  std::vector<double> deltas;
  for (std::size_t i = 0; i < tr.rounds.size(); ++i) {
    const IclRound& rd = tr.rounds[i];
    const int epoch = static_cast<int>(i) + 1;
    MetricsRow avg;
    avg.epoch = epoch;
    avg.J_c_learned = 0.0;
    Json round_tasks = Json::array();
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const BundleTask& t = *tasks[k];
      const TaskRound& trk = rd.tasks[k];
      const MetricsRow row = eval_policy_vs_truth(mdp, trk.occupancy, t.reward, p.env.truth.c_star, t.demos, rd.constraint);
      avg.J_r += row.J_r / K;
      *avg.J_c_learned += *row.J_c_learned / K;
      avg.J_cstar += row.J_cstar / K;
      avg.JE_r += row.JE_r / K;
      avg.JE_cstar += row.JE_cstar / K;
      task_csv += std::to_string(epoch) + "," + t.id + "," + format_number(row.J_r) + "," +
                  format_number(*row.J_c_learned) + "," + format_number(row.J_cstar) + "," + format_number(row.JE_r) +
                  "," + format_number(row.JE_cstar) + "," + format_number(trk.delta) + "," + format_number(trk.loss) +
                  "," + format_number(trk.final_lambda) + "\n";
      round_tasks.push_back(Json{{"task_id", t.id}, {"delta", trk.delta}, {"loss", trk.loss},
                                 {"J_r", row.J_r}, {"final_lambda", trk.final_lambda}});
    }
    avg.regret = rd.regret;
    avg.avg_regret = rd.avg_regret;
    avg.constraint_params = rd.constraint.weights();
    a.metrics.push_back(avg);
    regret_csv += std::to_string(epoch) + "," + format_number(rd.loss) + "," + format_number(rd.regret) + "," +
                  format_number(rd.avg_regret) + "\n";
    a.files[epoch_name(epoch)] =
        dump(Json{{"epoch", epoch}, {"constraint", to_json(rd.constraint)}, {"clip_count", rd.clip_count},
                  {"grad", to_json(rd.grad)}, {"loss", rd.loss}, {"regret", rd.regret},
                  {"avg_regret", rd.avg_regret}, {"tasks", std::move(round_tasks)}});
    cs.push_back(rd.constraint);
    deltas.push_back(rd.tasks.front().delta);
  }
  a.files["regret.csv"] = regret_csv;
  a.files["task_metrics.csv"] = task_csv;
  const int sel = tr.selected;
  a.files["constraint_final.json"] = dump(to_json(tr.rounds[sel].constraint));
  a.report["selected_epoch"] = sel + 1;
  a.report["selected"] = row_json(a.metrics[sel]);
  a.report["epsilon_bar"] = tr.rounds.back().avg_regret;
  a.report["alpha"] = tr.alpha;
  a.report["expert_exact"] = expert_exact(p, tasks);
  a.report["warnings"] = tr.warnings;
  recovery_artifacts(p, cs, deltas, sel, a);
}

FeatureMapPtr features(const Problem& p) { return p.env.features; }

void run_icl(const RunConfig& c, const Problem& p, Artifacts& a) {
  const BundleTask& t = p.bundle.tasks.front();
  const ConstraintSet set(features(p)->dim(), p.env.w_max);
  const IclTrace tr = icl(p.env.mdp, t.reward, t.demos, features(p), set, icl_params(c, p),
                          derive_seed(c.seed, "icl"), t.validation_demos);
  game_artifacts(p, tr, {&t}, a);
  a.report["task_ids"] = {t.id};
}

void run_mticl(const RunConfig& c, const Problem& p, Artifacts& a) {
  MtIclParams mp;
  mp.icl = icl_params(c, p);
  mp.validation = c.mt_validation == "held_out_demos" ? MtValidation::held_out_demos : MtValidation::held_out_tasks;
  mp.held_out_fraction = c.held_out_fraction;
  const ConstraintSet set(features(p)->dim(), p.env.w_max);
  const MtIclResult res = mticl(p.bundle, features(p), set, mp, derive_seed(c.seed, "mticl"));
  std::vector<const BundleTask*> train;
  for (const auto& id : res.train_ids)
    for (const auto& t : p.bundle.tasks)
      if (t.id == id) train.push_back(&t);
  game_artifacts(p, res.trace, train, a);
  TaskBundle train_bundle{p.bundle.mdp, {}};
  for (const auto* t : train) train_bundle.tasks.push_back(*t);
  const AssumptionReport ar = check_assumption(train_bundle, features(p), res.trace.set, p.env.truth.c_star,
                                               derive_seed(c.seed, "assumption"));
  a.report["task_ids"] = res.train_ids;
  a.report["held_out_ids"] = res.held_out_ids;
  a.report["assumption"] = Json{{"truth_violation", ar.truth_violation ? Json(*ar.truth_violation) : Json(nullptr)},
                                {"truth_ok", ar.truth_ok ? Json(*ar.truth_ok) : Json(nullptr)},
                                {"restricted_nonempty", ar.restricted_nonempty},
                                {"extreme_points_ok", ar.extreme_points_ok},
                                {"messages", ar.messages}};
}

void run_baseline(const RunConfig& c, const Problem& p, Artifacts& a) {
  const BundleTask& t = p.bundle.tasks.front();
  const Mdp& mdp = p.env.mdp;
  const ConstraintSet set(features(p)->dim(), p.env.w_max);
  const BaselineResult b = baseline_chou(mdp, t.reward, t.demos, features(p), set, c.baseline_budget,
                                         derive_seed(c.seed, "baseline"));
  // Same budget convention as single-task ICL: the expert's empirical value under the fit.
  const CrlProblem prob = normalized_constraint(b.constraint);
  const double delta = b.constraint.value_of(empirical_features(t.demos, *features(p)));
  const double T = mdp.horizon();
  const CrlResult res = crl(mdp, t.reward.values(), prob.constraint, std::clamp(delta / prob.scale, -T, T), p.crl);
  MetricsRow row = eval_policy_vs_truth(mdp, res.occupancy, t.reward, p.env.truth.c_star, t.demos, b.constraint);
  row.epoch = 1;
  a.metrics.push_back(row);
  a.files["constraint_final.json"] = dump(to_json(b.constraint));
  a.report["selected_epoch"] = 1;
  a.report["selected"] = row_json(row);
  a.report["expert_exact"] = expert_exact(p, {&t});
  a.report["candidates"] = b.candidates;
  a.report["sampled"] = b.sampled;
  a.report["warnings"] = b.warnings;
  a.report["task_ids"] = {t.id};
  recovery_artifacts(p, {b.constraint}, {delta}, 0, a);
}

void run_crl(const RunConfig& c, const Problem& p, Artifacts& a) {
  const BundleTask& t = p.bundle.tasks.front();
  const Mdp& mdp = p.env.mdp;
  const ScalarSignal& cs = p.env.truth.c_star;
  const double delta = c.crl_delta ? *c.crl_delta : -kSafeMargin * mdp.horizon() * 0.5;
  const CrlResult res = crl(mdp, t.reward, cs, delta, p.crl);
  // Running mixture of the best responses, one row per iteration.
  std::vector<Table> acc;
  for (std::size_t i = 0; i < res.lambda_trace.size(); ++i) {
    const double lam = res.lambda_trace[i];
    const OccupancyMeasure occ = occupancy(mdp, rl_best_response(mdp, Table(t.reward.values() - lam * cs.values())));
    if (acc.empty()) acc = occ.tables();
    else
      for (int s = 0; s < occ.horizon(); ++s) acc[s] += occ.at(s);
    std::vector<Table> mean = acc;
    for (auto& m : mean) m /= static_cast<double>(i + 1);
    MetricsRow row = eval_policy_vs_truth(mdp, OccupancyMeasure(std::move(mean)), t.reward, cs, t.demos);
    row.epoch = static_cast<int>(i) + 1;
    row.J_c_learned = row.J_cstar;
    row.constraint_params = Eigen::VectorXd::Constant(1, lam);
    a.metrics.push_back(std::move(row));
  }
  std::vector<double> grid(500);
  for (int i = 0; i < 500; ++i) grid[i] = p.crl.lambda_max * i / 499.0;
  const double dual = crl_dual_oracle(mdp, t.reward, cs, delta, grid);
  a.files["crl_result.json"] = dump(to_json(res));
  a.report["delta"] = delta;
  a.report["achieved_value"] = res.achieved_value;
  a.report["achieved_violation"] = res.achieved_violation;
  a.report["final_lambda"] = res.final_lambda;
  a.report["dual_value"] = dual;
  a.report["duality_gap"] = dual - res.achieved_value;
  a.report["mixture_components"] = res.mixture.components().size();
  a.report["selected_epoch"] = static_cast<int>(a.metrics.size());
  a.report["selected"] = row_json(a.metrics.back());
  a.report["task_ids"] = {t.id};
}

void run_identify(const RunConfig& c, const Problem& p, Artifacts& a) {
  const Gauge gauge = c.identify.gauge == "raw" ? Gauge::raw : Gauge::modulo_constants;
  std::optional<IdentifiabilityFixture> fx;
  std::vector<AggregateOccupancy> occs;
  std::optional<AggregateOccupancy> probe;
  std::optional<Eigen::VectorXd> c_star;
  std::optional<TaskBundle> bundle;
  if (!c.expert_dir.empty()) {
    bundle = p.bundle;
    for (const auto& t : bundle->tasks) {
      if (!t.expert_policy) throw ArgumentError("identify: task '" + t.id + "' has no expert policy");
      occs.push_back(AggregateOccupancy::from(occupancy(p.env.mdp, *t.expert_policy)));
    }
    probe = AggregateOccupancy::from(occupancy(p.env.mdp, rl_best_response(p.env.mdp, bundle->tasks.front().reward)));
    const Table& cv = p.env.truth.c_star.values();
    Eigen::VectorXd flat(cv.size());
    for (Eigen::Index s = 0; s < cv.rows(); ++s)
      for (Eigen::Index u = 0; u < cv.cols(); ++u) flat(s * cv.cols() + u) = cv(s, u);
    c_star = flat;
  } else {
    fx = make_identifiability_fixture(c.identify.states, c.identify.actions, c.identify.horizon, c.seed,
                                      c.identify.temperature);
    bundle = TaskBundle{fx->mdp, {}};
    for (std::size_t k = 0; k < fx->experts.size(); ++k) {
      const std::string id = "expert_" + std::to_string(k);
      bundle->tasks.push_back(BundleTask{id, ScalarSignal(fx->rewards[k]),
                                         sample_trajectories(fx->mdp, fx->experts[k], 20, derive_seed(c.seed, id)),
                                         {}, fx->experts[k]});
    }
    occs = fx->occupancies;
    probe = fx->unsafe_probe;
    c_star = fx->c_star;
  }
  const Mdp& mdp = bundle->mdp;
  const ScalarSignal c_signal = to_signal(*c_star, mdp.num_states(), mdp.num_actions());
  const IdentifiabilityReport rep = identify_report(*bundle, occs, *probe, c_signal, c_star, c.identify.tol, gauge);
  const NullSpaceResult ns = null_space_constraint(occupancy_difference_matrix(occs), *probe, c.identify.tol, gauge);
  const ScalarSignal c_hat = to_signal(ns.c_hat, mdp.num_states(), mdp.num_actions());
  for (std::size_t k = 0; k < bundle->tasks.size(); ++k) {
    const BundleTask& t = bundle->tasks[k];
    MetricsRow row = eval_policy_vs_truth(mdp, *t.expert_policy, t.reward, c_signal, t.demos);
    row.epoch = static_cast<int>(k) + 1;
    row.J_c_learned = value(mdp, *t.expert_policy, c_hat);
    row.constraint_params = ns.c_hat;
    a.metrics.push_back(std::move(row));
  }
  Json sat = Json::array();
  for (const auto& s : rep.saturation)
    sat.push_back(Json{{"task_id", s.task_id}, {"expert_reward", s.expert_reward}, {"optimal_reward", s.optimal_reward},
                       {"expert_violation", s.expert_violation}, {"exact", s.exact}, {"saturated", s.saturated}});
  Json mix = Json::array();
  for (const auto& m : rep.mixture_independence) mix.push_back(Json{{"residual", m.residual}, {"violated", m.violated}});
  const Json out{{"gauge", c.identify.gauge},
                 {"null_dim", rep.null_dim},
                 {"cosine_to_truth", rep.cosine_to_truth ? Json(*rep.cosine_to_truth) : Json(nullptr)},
                 {"c_hat", to_json(ns.c_hat)},
                 {"c_star", to_json(*c_star)},
                 {"singular_values", to_json(ns.singular_values)},
                 {"saturation", std::move(sat)},
                 {"mixture_independence", std::move(mix)},
                 {"min_relint_entry", rep.min_relint_entry}};
  a.files["identify.json"] = dump(out);
  a.report["identify"] = out;
  a.report["task_ids"] = bundle->task_ids();
}

}  // namespace

RunResult execute(const RunConfig& c) {
  validate(c);
  Artifacts a;
  a.report["algorithm"] = c.algorithm;
  a.report["seed"] = c.seed;
  a.report["metrics_schema"] = kMetricsSchemaVersion;
  bool ok = true;
  try {
    const Problem p = make_problem(c);
    a.report["environment"] = p.name;
    a.report["horizon"] = p.env.mdp.horizon();
    a.report["rounds"] = p.rounds;
    if (c.algorithm == "icl") run_icl(c, p, a);
    else if (c.algorithm == "mticl") run_mticl(c, p, a);
    else if (c.algorithm == "baseline-chou") run_baseline(c, p, a);
    else if (c.algorithm == "crl") run_crl(c, p, a);
    else run_identify(c, p, a);
    a.report["status"] = "ok";
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    ok = false;
    a.report["status"] = "error";
    a.report["error"] = e.what();
  }
  a.files["config.json"] = dump(to_json(c));
  a.files["metrics.csv"] = metrics_csv(a.metrics);
  a.files["report.json"] = dump(a.report);
  return RunResult{std::move(a.files), std::move(a.report), std::move(a.metrics), ok};
}

void write_artifacts(const RunResult& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& [name, content] : r.files) write_text(out_dir / name, content);
}

int run(const RunConfig& c, const std::filesystem::path& out_dir) {
  const RunResult r = execute(c);
  write_artifacts(r, out_dir);
  return r.ok ? 0 : 3;
}

void write_expert_bundle(const RunConfig& c, const std::filesystem::path& dir) {
  const Problem p = make_problem(c);
  if (p.bundle.tasks.empty()) throw ConfigError("key 'algorithm': identify runs build their own experts");
  save_bundle(p.bundle, dir);
  write_json(dir / "env.json", to_json(p.env));
  write_json(dir / "config.json", to_json(c));
}

}  // namespace iclab
