#pragma once

// Run configuration: a line-oriented `key = value` file. '#' starts a
// comment, unknown keys are rejected, absent keys keep their defaults.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cognn/cognn.hpp"
#include "cognn/error.hpp"

namespace cognn {

enum class TaskName { root_neighbors, cycles };
enum class ModelKind { cognn, baseline_sum, baseline_mean, baseline_gcn };

inline const char* to_string(TaskName t) { return t == TaskName::root_neighbors ? "root-neighbors" : "cycles"; }

inline const char* to_string(ModelKind m) {
  switch (m) {
    case ModelKind::cognn: return "cognn";
    case ModelKind::baseline_sum: return "baseline-sum";
    case ModelKind::baseline_mean: return "baseline-mean";
    case ModelKind::baseline_gcn: return "baseline-gcn";
  }
  return "?";
}

struct RunConfig {
  TaskName task = TaskName::root_neighbors;
  ModelKind model = ModelKind::cognn;
  std::size_t env_layers = 1;
  std::size_t env_dim = 32;
  Aggregation env_agg = Aggregation::mean;
  std::size_t action_layers = 1;
  std::size_t action_dim = 16;
  Aggregation action_agg = Aggregation::sum;
  Activation activation = Activation::relu;
  double dropout = 0.0;
  double lr = 1e-3;
  std::size_t epochs = 10000;
  std::size_t batch_size = 0;  // 0 = full batch
  TemperatureMode temperature = TemperatureMode::learned;
  double tau0 = 0.1;
  double tau = 1.0;
  std::uint64_t seed = 0;
  Pooling pooling = Pooling::sum;
  std::size_t eval_seeds = 10;
  std::size_t eval_every = 1;

  void validate() const {
    if (env_dim == 0 || action_dim == 0) throw ConfigError("dims must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (tau0 < 0.0) throw ConfigError("tau0 must be non-negative");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (eval_seeds == 0) throw ConfigError("eval_seeds must be >= 1");
    if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
  }

  /// Model architecture for a dataset with the given input and output widths.
  ModelConfig model_config(std::size_t in_dim, std::size_t out_dim) const {
    ModelConfig m;
    m.task = task == TaskName::root_neighbors ? TaskKind::node_regression : TaskKind::graph_classification;
    m.family = model == ModelKind::cognn ? ModelFamily::cognn : ModelFamily::baseline;
    m.in_dim = in_dim;
    m.out_dim = out_dim;
    m.env_layers = env_layers;
    m.env_dim = env_dim;
    m.env_agg = model == ModelKind::baseline_sum    ? Aggregation::sum
                : model == ModelKind::baseline_mean ? Aggregation::mean
                : model == ModelKind::baseline_gcn  ? Aggregation::gcn
                                                    : env_agg;
    m.action_layers = action_layers;
    m.action_dim = action_dim;
    m.action_agg = action_agg;
    m.act = activation;
    m.dropout = dropout;
    m.temperature = temperature;
    m.tau0 = tau0;
    m.tau = tau;
    m.pooling = pooling;
    return m;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

inline std::string format_double(double x) {
  std::ostringstream ss;
  ss.precision(17);
  ss << x;
  return ss.str();
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field size_field(const char* key, T RunConfig::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

inline Field double_field(const char* key, double RunConfig::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { c.*member = parse_number<double>(key, v); },
          [=](const RunConfig& c) { return format_double(c.*member); }};
}

template <class E, class Parse>
Field enum_field(const char* key, E RunConfig::*member, Parse parse) {
  return {key,
          [=](RunConfig& c, const std::string& v) {
            try {
              c.*member = parse(v);
            } catch (const Error&) {
              throw ConfigError("invalid value '" + v + "' for " + key);
            }
          },
          [=](const RunConfig& c) { return std::string(to_string(c.*member)); }};
}

inline TaskName task_from_string(const std::string& s) {
  if (s == "root-neighbors") return TaskName::root_neighbors;
  if (s == "cycles") return TaskName::cycles;
  throw ConfigError("unknown task " + s);
}

inline ModelKind model_kind_from_string(const std::string& s) {
  for (auto m : {ModelKind::cognn, ModelKind::baseline_sum, ModelKind::baseline_mean, ModelKind::baseline_gcn}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown model " + s);
}

inline TemperatureMode temperature_from_string(const std::string& s) {
  if (s == "learned") return TemperatureMode::learned;
  if (s == "fixed") return TemperatureMode::fixed;
  throw ConfigError("unknown temperature mode " + s);
}

inline const std::vector<Field>& config_fields() {
  static const std::vector<Field> fields = {
      enum_field("task", &RunConfig::task, task_from_string),
      enum_field("model", &RunConfig::model, model_kind_from_string),
      size_field("env_layers", &RunConfig::env_layers),
      size_field("env_dim", &RunConfig::env_dim),
      enum_field("env_agg", &RunConfig::env_agg, aggregation_from_string),
      size_field("action_layers", &RunConfig::action_layers),
      size_field("action_dim", &RunConfig::action_dim),
      enum_field("action_agg", &RunConfig::action_agg, aggregation_from_string),
      enum_field("activation", &RunConfig::activation, activation_from_string),
      double_field("dropout", &RunConfig::dropout),
      double_field("lr", &RunConfig::lr),
      size_field("epochs", &RunConfig::epochs),
      size_field("batch_size", &RunConfig::batch_size),
      enum_field("temperature", &RunConfig::temperature, temperature_from_string),
      double_field("tau0", &RunConfig::tau0),
      double_field("tau", &RunConfig::tau),
      size_field("seed", &RunConfig::seed),
      enum_field("pooling", &RunConfig::pooling, pooling_from_string),
      size_field("eval_seeds", &RunConfig::eval_seeds),
      size_field("eval_every", &RunConfig::eval_every),
  };
  return fields;
}

}  // namespace detail

/// Parses config text. Errors carry the offending 1-based line.
inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError("expected 'key = value'", lineno);
    const auto& fields = detail::config_fields();
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.key; });
    if (it == fields.end()) throw ParseError("unknown key '" + key + "'", lineno);
    if (!seen.insert(key).second) throw ParseError("duplicate key '" + key + "'", lineno);
    try {
      it->set(cfg, value);
    } catch (const Error& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  return cfg;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

/// Every key with its effective value; parses back to the same config.
inline std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace cognn
