#include "iclab/io.hpp"

#include "iclab/errors.hpp"

#include <fstream>
#include <sstream>

namespace iclab {

namespace {

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ArgumentError(std::string("JSON: missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

Json to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw ArgumentError("JSON: expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Json to_json(const Table& t) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Table table_from_json(const Json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ArgumentError("JSON: expected a nested array");
  Table t(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j[0].size()) throw ShapeError("JSON: ragged table");
    for (std::size_t c = 0; c < j[r].size(); ++c)
      t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return t;
}

Json to_json(const Mdp& mdp) {
  Json trans = Json::array();
  for (int s = 0; s < mdp.num_states(); ++s)
    for (int a = 0; a < mdp.num_actions(); ++a)
      for (const auto& succ : mdp.successors(s, a)) trans.push_back(Json::array({s, a, succ.state, succ.prob}));
  return Json{{"num_states", mdp.num_states()},
              {"num_actions", mdp.num_actions()},
              {"horizon", mdp.horizon()},
              {"initial_dist", to_json(mdp.initial_dist())},
              {"transitions", std::move(trans)}};
}

Mdp mdp_from_json(const Json& j) {
  const int S = field(j, "num_states").get<int>();
  const int A = field(j, "num_actions").get<int>();
  const int T = field(j, "horizon").get<int>();
  if (S < 1 || A < 1) throw ShapeError("JSON mdp: empty state or action space");
  std::vector<double> P(static_cast<std::size_t>(S) * A * S, 0.0);
  for (const auto& e : field(j, "transitions")) {
    const int s = e.at(0).get<int>(), a = e.at(1).get<int>(), n = e.at(2).get<int>();
    if (s < 0 || s >= S || a < 0 || a >= A || n < 0 || n >= S) throw ShapeError("JSON mdp: transition out of range");
    P[(static_cast<std::size_t>(s) * A + a) * S + n] = e.at(3).get<double>();
  }
  return Mdp(S, A, T, std::move(P), vector_from_json(field(j, "initial_dist")));
}

Json to_json(const Policy& p) {
  Json steps = Json::array();
  for (const auto& t : p.tables()) steps.push_back(to_json(t));
  return Json{{"steps", std::move(steps)}};
}

Policy policy_from_json(const Json& j) {
  std::vector<Table> tables;
  for (const auto& t : field(j, "steps")) tables.push_back(table_from_json(t));
  return Policy(std::move(tables));
}

Json to_json(const MixturePolicy& p) {
  Json comps = Json::array();
  for (const auto& c : p.components()) comps.push_back(to_json(c));
  return Json{{"components", std::move(comps)}, {"weights", p.weights()}};
}

MixturePolicy mixture_from_json(const Json& j) {
  std::vector<Policy> comps;
  for (const auto& c : field(j, "components")) comps.push_back(policy_from_json(c));
  return MixturePolicy(std::move(comps), field(j, "weights").get<std::vector<double>>());
}

Json to_json(const Trajectory& t) {
  Json out = Json::array();
  for (const auto& st : t.steps) out.push_back(Json::array({st.state, st.action}));
  return out;
}

Trajectory trajectory_from_json(const Json& j) {
  Trajectory t;
  for (const auto& st : j) t.steps.push_back({st.at(0).get<int>(), st.at(1).get<int>()});
  return t;
}

Json to_json(std::span<const Trajectory> ts) {
  Json out = Json::array();
  for (const auto& t : ts) out.push_back(to_json(t));
  return out;
}

std::vector<Trajectory> trajectories_from_json(const Json& j) {
  if (!j.is_array()) throw ArgumentError("JSON: expected an array of trajectories");
  std::vector<Trajectory> out;
  for (const auto& t : j) out.push_back(trajectory_from_json(t));
  return out;
}

Json to_json(const CrlResult& r) {
  return Json{{"mixture", to_json(r.mixture)},
              {"last_iterate", to_json(r.last_iterate)},
              {"lambda_trace", r.lambda_trace},
              {"final_lambda", r.final_lambda},
              {"achieved_value", r.achieved_value},
              {"achieved_violation", r.achieved_violation},
              {"delta", r.delta}};
}

CrlResult crl_result_from_json(const Json& j, const Mdp& mdp) {
  MixturePolicy mix = mixture_from_json(field(j, "mixture"));
  Policy last = policy_from_json(field(j, "last_iterate"));
  OccupancyMeasure occ = occupancy(mdp, mix);
  return CrlResult{std::move(mix),
                   std::move(last),
                   std::move(occ),
                   field(j, "lambda_trace").get<std::vector<double>>(),
                   field(j, "final_lambda").get<double>(),
                   field(j, "achieved_value").get<double>(),
                   field(j, "achieved_violation").get<double>(),
                   field(j, "delta").get<double>()};
}

Json to_json(const LinearConstraint& c) {
  return Json{{"feature_map", c.feature_map().id()}, {"weights", to_json(c.weights())}, {"w_max", c.w_max()}};
}

LinearConstraint constraint_from_json(const Json& j, FeatureMapPtr fmap) {
  if (!fmap) throw ArgumentError("constraint_from_json: null feature map");
  const std::string id = field(j, "feature_map").get<std::string>();
  if (id != fmap->id())
    throw ArgumentError("constraint_from_json: constraint uses feature map '" + id + "', got '" + fmap->id() + "'");
  return LinearConstraint(std::move(fmap), vector_from_json(field(j, "weights")), field(j, "w_max").get<double>());
}

Json to_json(const GridSpec& g) {
  auto cells = [](const std::vector<Cell>& cs) {
    Json out = Json::array();
    for (const auto& c : cs) out.push_back(Json::array({c.x, c.y}));
    return out;
  };
  return Json{{"width", g.width},
              {"height", g.height},
              {"wall_cells", cells(g.wall_cells)},
              {"start_cells", cells(g.start_cells)},
              {"goal_cell", Json::array({g.goal_cell.x, g.goal_cell.y})},
              {"moves", g.moves},
              {"slip_prob", g.slip_prob},
              {"horizon", g.horizon}};
}

GridSpec grid_from_json(const Json& j) {
  auto cells = [](const Json& arr) {
    std::vector<Cell> out;
    for (const auto& c : arr) out.push_back({c.at(0).get<int>(), c.at(1).get<int>()});
    return out;
  };
  GridSpec g;
  g.width = field(j, "width").get<int>();
  g.height = field(j, "height").get<int>();
  g.wall_cells = cells(field(j, "wall_cells"));
  g.start_cells = cells(field(j, "start_cells"));
  const Json& goal = field(j, "goal_cell");
  g.goal_cell = {goal.at(0).get<int>(), goal.at(1).get<int>()};
  g.moves = j.value("moves", 4);
  g.slip_prob = j.value("slip_prob", 0.0);
  g.horizon = j.value("horizon", 20);
  g.validate();
  return g;
}

Json to_json(const FeatureMap& f) {
  return Json{{"id", f.id()},
              {"num_states", f.num_states()},
              {"num_actions", f.num_actions()},
              {"phi", to_json(Table(f.matrix()))}};
}

FeatureMapPtr feature_map_from_json(const Json& j) {
  return std::make_shared<const FeatureMap>(field(j, "id").get<std::string>(), field(j, "num_states").get<int>(),
                                            field(j, "num_actions").get<int>(), table_from_json(field(j, "phi")));
}

Json to_json(const Environment& env) {
  Json out{{"name", env.name},
           {"mdp", to_json(env.mdp)},
           {"reward", to_json(env.reward.values())},
           {"truth",
            {{"c_star", to_json(env.truth.c_star.values())},
             {"description", env.truth.description},
             {"realizing_weights", to_json(env.truth.realizing_weights)},
             {"realization_gap", env.truth.realization_gap}}},
           {"features", to_json(*env.features)},
           {"w_max", env.w_max}};
  if (env.grid) out["grid"] = to_json(*env.grid);
  return out;
}

Environment environment_from_json(const Json& j) {
  const Json& truth = field(j, "truth");
  GroundTruth gt{ScalarSignal(table_from_json(field(truth, "c_star"))), truth.value("description", ""),
                 vector_from_json(field(truth, "realizing_weights")), truth.value("realization_gap", 0.0)};
  Environment env{field(j, "name").get<std::string>(),
                  mdp_from_json(field(j, "mdp")),
                  ScalarSignal(table_from_json(field(j, "reward"))),
                  std::move(gt),
                  feature_map_from_json(field(j, "features")),
                  field(j, "w_max").get<double>(),
                  std::nullopt};
  if (j.contains("grid")) env.grid = grid_from_json(j.at("grid"));
  env.mdp.check_table(env.reward.values(), "environment reward");
  env.mdp.check_table(env.truth.c_star.values(), "environment c_star");
  if (env.features->num_states() != env.mdp.num_states() || env.features->num_actions() != env.mdp.num_actions())
    throw ShapeError("environment: features do not match the MDP");
  return env;
}

void save_bundle(const TaskBundle& bundle, const std::filesystem::path& dir) {
  bundle.validate();
  std::filesystem::create_directories(dir / "tasks");
  write_json(dir / "mdp.json", to_json(bundle.mdp));
  Json manifest{{"task_ids", bundle.task_ids()}};
  write_json(dir / "manifest.json", manifest);
  for (const auto& t : bundle.tasks) {
    const auto tdir = dir / "tasks" / t.id;
    std::filesystem::create_directories(tdir);
    write_json(tdir / "reward.json", to_json(t.reward.values()));
    write_json(tdir / "demos.json", to_json(std::span<const Trajectory>(t.demos)));
    if (!t.validation_demos.empty())
      write_json(tdir / "validation_demos.json", to_json(std::span<const Trajectory>(t.validation_demos)));
    if (t.expert_policy) write_json(tdir / "expert_policy.json", to_json(*t.expert_policy));
  }
}

TaskBundle load_bundle(const std::filesystem::path& dir) {
  TaskBundle bundle{mdp_from_json(read_json(dir / "mdp.json")), {}};
  const Json manifest = read_json(dir / "manifest.json");
  for (const auto& id : field(manifest, "task_ids")) {
    BundleTask t{id.get<std::string>(), ScalarSignal::zeros(1, 1), {}, {}, std::nullopt};
    const auto tdir = dir / "tasks" / t.id;
    t.reward = ScalarSignal(table_from_json(read_json(tdir / "reward.json")));
    t.demos = trajectories_from_json(read_json(tdir / "demos.json"));
    if (std::filesystem::exists(tdir / "validation_demos.json"))
      t.validation_demos = trajectories_from_json(read_json(tdir / "validation_demos.json"));
    if (std::filesystem::exists(tdir / "expert_policy.json"))
      t.expert_policy = policy_from_json(read_json(tdir / "expert_policy.json"));
    bundle.tasks.push_back(std::move(t));
  }
  bundle.validate();
  return bundle;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

Json read_json(const std::filesystem::path& path) { return Json::parse(read_text(path)); }

}  // namespace iclab
