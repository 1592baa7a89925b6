#include "prodopt/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prodopt/errors.hpp"

namespace prodopt {
namespace {

using nlohmann::json;

void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("unknown config key \"" + item.key() + "\" in " + where);
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_range(const json& obj, const char* key, CouplingRange& out) {
  if (!obj.contains(key)) return;
  const json& r = obj.at(key);
  expect_keys(r, key, {"center", "half_width"});
  read(r, "center", out.center);
  read(r, "half_width", out.half_width);
}

ModelKind parse_kind(const std::string& name) {
  if (name == "xy") return ModelKind::XY;
  if (name == "tfim") return ModelKind::TFIM;
  if (name == "custom") return ModelKind::Custom;
  throw ConfigError("unknown model kind \"" + name + "\"");
}

std::string kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::XY:
      return "xy";
    case ModelKind::TFIM:
      return "tfim";
    case ModelKind::Custom:
      return "custom";
  }
  return "custom";
}

ExperimentConfig parse(const json& root) {
  expect_keys(root, "the top level",
              {"kind", "model", "terms", "normalize_terms", "layers", "grid",
               "orders", "k_list", "repeat_k_max", "thresholds", "maxtime_step",
               "maxtime_reference_steps", "optimizer", "output_dir", "workers",
               "seed"});
  ExperimentConfig config;
  if (root.contains("kind")) config.kind = parse_kind(root.at("kind").get<std::string>());

  if (root.contains("model")) {
    const json& m = root.at("model");
    expect_keys(m, "\"model\"",
                {"full_graph", "n_full", "nx", "ny", "periodic", "j_y", "j_z",
                 "field", "seed", "normalize"});
    read(m, "full_graph", config.model.full_graph);
    read(m, "n_full", config.model.n_full);
    read(m, "nx", config.model.lattice.nx);
    read(m, "ny", config.model.lattice.ny);
    read(m, "periodic", config.model.lattice.periodic);
    read_range(m, "j_y", config.model.j_y);
    read_range(m, "j_z", config.model.j_z);
    read_range(m, "field", config.model.field);
    read(m, "seed", config.model.seed);
    read(m, "normalize", config.model.normalize);
  }

  if (root.contains("terms")) {
    for (const json& entry : root.at("terms")) {
      if (!entry.is_array() || entry.size() != 2)
        throw ConfigError("each custom term must be a [label, coefficient] pair");
      config.custom_terms.emplace_back(entry.at(0).get<std::string>(),
                                       entry.at(1).get<double>());
    }
  }
  read(root, "normalize_terms", config.custom_normalize);
  read(root, "layers", config.layers);

  if (root.contains("grid")) {
    const json& g = root.at("grid");
    expect_keys(g, "\"grid\"", {"min", "max", "count", "spacing", "points"});
    read(g, "min", config.grid.min);
    read(g, "max", config.grid.max);
    read(g, "count", config.grid.count);
    if (g.contains("spacing")) {
      const std::string spacing = g.at("spacing").get<std::string>();
      if (spacing != "linear" && spacing != "log")
        throw ConfigError("grid spacing must be \"linear\" or \"log\"");
      config.grid.log_spacing = spacing == "log";
    }
    read(g, "points", config.grid.points);
  }

  read(root, "orders", config.orders);
  read(root, "k_list", config.k_list);
  read(root, "repeat_k_max", config.repeat_k_max);
  read(root, "thresholds", config.thresholds);
  read(root, "maxtime_step", config.maxtime_step);
  read(root, "maxtime_reference_steps", config.maxtime_reference_steps);

  const bool model_seed_set = root.contains("model") && root.at("model").contains("seed");
  bool optimizer_seed_set = false;
  if (root.contains("optimizer")) {
    const json& o = root.at("optimizer");
    expect_keys(o, "\"optimizer\"",
                {"max_iterations", "gradient_tolerance", "restarts",
                 "perturbation_scale", "box_factor", "memory", "seed"});
    read(o, "max_iterations", config.optimizer.max_iterations);
    read(o, "gradient_tolerance", config.optimizer.gradient_tolerance);
    read(o, "restarts", config.optimizer.restarts);
    read(o, "perturbation_scale", config.optimizer.perturbation_scale);
    read(o, "box_factor", config.optimizer.box_factor);
    read(o, "memory", config.optimizer.memory);
    read(o, "seed", config.optimizer.seed);
    optimizer_seed_set = o.contains("seed");
  }

  read(root, "output_dir", config.output_dir);
  read(root, "workers", config.workers);
  if (root.contains("seed")) {
    const std::uint64_t seed = root.at("seed").get<std::uint64_t>();
    if (!model_seed_set) config.model.seed = seed;
    if (!optimizer_seed_set) config.optimizer.seed = seed;
  }
  return config;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  try {
    return parse(root);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config value: ") + e.what());
  }
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_json(buffer.str());
}

std::string config_to_json(const ExperimentConfig& config) {
  json root;
  root["kind"] = kind_name(config.kind);
  root["model"] = {
      {"full_graph", config.model.full_graph},
      {"n_full", config.model.n_full},
      {"nx", config.model.lattice.nx},
      {"ny", config.model.lattice.ny},
      {"periodic", config.model.lattice.periodic},
      {"j_y", {{"center", config.model.j_y.center},
               {"half_width", config.model.j_y.half_width}}},
      {"j_z", {{"center", config.model.j_z.center},
               {"half_width", config.model.j_z.half_width}}},
      {"field", {{"center", config.model.field.center},
                 {"half_width", config.model.field.half_width}}},
      {"seed", config.model.seed},
      {"normalize", config.model.normalize},
  };
  if (!config.custom_terms.empty()) {
    json terms = json::array();
    for (const auto& [label, coeff] : config.custom_terms)
      terms.push_back(json::array({label, coeff}));
    root["terms"] = std::move(terms);
    root["normalize_terms"] = config.custom_normalize;
  }
  root["layers"] = config.layers;
  if (config.grid.points.empty())
    root["grid"] = {{"min", config.grid.min},
                    {"max", config.grid.max},
                    {"count", config.grid.count},
                    {"spacing", config.grid.log_spacing ? "log" : "linear"}};
  else
    root["grid"] = {{"points", config.grid.points}};
  root["orders"] = config.orders;
  root["k_list"] = config.k_list;
  root["repeat_k_max"] = config.repeat_k_max;
  root["thresholds"] = config.thresholds;
  root["maxtime_step"] = config.maxtime_step;
  root["maxtime_reference_steps"] = config.maxtime_reference_steps;
  root["optimizer"] = {
      {"max_iterations", config.optimizer.max_iterations},
      {"gradient_tolerance", config.optimizer.gradient_tolerance},
      {"restarts", config.optimizer.restarts},
      {"perturbation_scale", config.optimizer.perturbation_scale},
      {"box_factor", config.optimizer.box_factor},
      {"memory", config.optimizer.memory},
      {"seed", config.optimizer.seed},
  };
  root["output_dir"] = config.output_dir;
  root["workers"] = config.workers;
  return root.dump(2);
}

}  // namespace prodopt
