#pragma once

// JSON persistence for the domain types. Numbers round-trip exactly
// (shortest representation), and keys are emitted in sorted order, so equal
// objects serialize to equal bytes.

#include "iclab/envs.hpp"
#include "iclab/mticl.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace iclab {

using Json = nlohmann::json;

Json to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j);
/// Row-major nested arrays.
Json to_json(const Table& t);
Table table_from_json(const Json& j);

Json to_json(const Mdp& mdp);
Mdp mdp_from_json(const Json& j);

Json to_json(const Policy& p);
Policy policy_from_json(const Json& j);
Json to_json(const MixturePolicy& p);
MixturePolicy mixture_from_json(const Json& j);

/// [[s, a], ...] per trajectory.
Json to_json(const Trajectory& t);
Trajectory trajectory_from_json(const Json& j);
Json to_json(std::span<const Trajectory> ts);
std::vector<Trajectory> trajectories_from_json(const Json& j);

Json to_json(const CrlResult& r);
/// The occupancy is not stored; it is recomputed from the mixture.
CrlResult crl_result_from_json(const Json& j, const Mdp& mdp);

/// {feature_map, weights, w_max}; the feature map itself is resolved by the caller.
Json to_json(const LinearConstraint& c);
LinearConstraint constraint_from_json(const Json& j, FeatureMapPtr fmap);

Json to_json(const GridSpec& g);
GridSpec grid_from_json(const Json& j);

/// {id, num_states, num_actions, phi}; phi has one row per (s, a).
Json to_json(const FeatureMap& f);
FeatureMapPtr feature_map_from_json(const Json& j);

/// Self-contained environment: dynamics, reward, ground truth, features and optional grid.
Json to_json(const Environment& env);
Environment environment_from_json(const Json& j);

/// Directory with mdp.json, manifest.json and tasks/<id>/{reward,demos}.json.
void save_bundle(const TaskBundle& bundle, const std::filesystem::path& dir);
TaskBundle load_bundle(const std::filesystem::path& dir);

void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace iclab
