#pragma once

// Cooperative message passing: a shared action network picks one of
// {Standard, Listen, Broadcast, Isolate} per node and layer, the actions
// induce a directed edge set, and an environment layer updates node states
// over it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cognn/actions.hpp"
#include "cognn/graph.hpp"
#include "cognn/layers.hpp"
#include "cognn/ops.hpp"
#include "cognn/random.hpp"

namespace cognn {

enum class TaskKind { node_regression, graph_classification };
enum class ModelFamily { cognn, baseline };
enum class TemperatureMode { learned, fixed };

inline const char* to_string(TaskKind t) {
  return t == TaskKind::node_regression ? "node-regression" : "graph-classification";
}
inline const char* to_string(ModelFamily f) { return f == ModelFamily::cognn ? "cognn" : "baseline"; }
inline const char* to_string(TemperatureMode m) { return m == TemperatureMode::learned ? "learned" : "fixed"; }

struct ModelConfig {
  TaskKind task = TaskKind::node_regression;
  ModelFamily family = ModelFamily::cognn;
  std::size_t in_dim = 5;
  std::size_t out_dim = 5;
  std::size_t env_layers = 1;
  std::size_t env_dim = 32;
  Aggregation env_agg = Aggregation::mean;
  std::size_t action_layers = 1;
  std::size_t action_dim = 16;
  Aggregation action_agg = Aggregation::sum;
  Activation act = Activation::relu;
  double dropout = 0.0;
  TemperatureMode temperature = TemperatureMode::learned;
  double tau0 = 0.1;
  double tau = 1.0;
  Pooling pooling = Pooling::sum;

  void validate() const {
    if (in_dim == 0 || out_dim == 0 || env_dim == 0 || action_dim == 0) {
      throw ConfigError("model: dimensions must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
    if (tau0 < 0.0) throw ConfigError("model: tau0 must be non-negative");
    if (!(tau > 0.0)) throw ConfigError("model: fixed temperature must be positive");
  }
};

/// pi: GNN layers on the full topology followed by a linear map to 4 logits.
struct ActionNetwork {
  std::vector<GnnLayerParams> layers;
  LinearParams head;

  std::size_t hidden_dim() const { return head.weight.rows(); }
};

/// 1 / tau(h) = softplus(omega^T h) + tau0.
struct TemperatureHead {
  Tensor omega;  // hidden_dim x 1, no bias
  double tau0 = 0.1;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct CoGnnModel {
  ModelConfig config;
  MlpParams encoder;
  std::vector<GnnLayerParams> env;
  ActionNetwork action;
  TemperatureHead temperature;
  MlpParams decoder;

  bool has_action_network() const { return config.family == ModelFamily::cognn; }
  bool learns_temperature() const {
    return has_action_network() && config.temperature == TemperatureMode::learned;
  }

  static CoGnnModel init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    CoGnnModel m;
    m.config = cfg;
    Rng enc = rng.split("encoder"), envr = rng.split("env"), act = rng.split("action"),
        dec = rng.split("decoder");
    const std::size_t enc_dims[] = {cfg.in_dim, cfg.env_dim};
    m.encoder = MlpParams::init(enc_dims, cfg.act, enc);
    for (std::size_t l = 0; l < cfg.env_layers; ++l) {
      m.env.push_back(GnnLayerParams::init(cfg.env_dim, cfg.env_dim, cfg.act, cfg.env_agg, envr));
    }
    if (m.has_action_network()) {
      std::size_t d = cfg.env_dim;
      for (std::size_t l = 0; l < cfg.action_layers; ++l) {
        m.action.layers.push_back(GnnLayerParams::init(d, cfg.action_dim, cfg.act, cfg.action_agg, act));
        d = cfg.action_dim;
      }
      m.action.head = LinearParams::init(d, kNumActions, act);
      m.temperature.tau0 = cfg.tau0;
      if (cfg.temperature == TemperatureMode::learned) m.temperature.omega = glorot_uniform_init(d, 1, act);
    }
    const std::size_t dec_dims[] = {cfg.env_dim, cfg.out_dim};
    m.decoder = MlpParams::init(dec_dims, cfg.act, dec);
    return m;
  }

  /// Every trainable tensor with a stable dotted name, in a fixed order.
  std::vector<NamedTensor> named_parameters() const {
    std::vector<NamedTensor> out;
    auto add_linear = [&](const std::string& prefix, const LinearParams& p) {
      out.push_back({prefix + ".weight", p.weight});
      if (p.has_bias()) out.push_back({prefix + ".bias", p.bias});
    };
    auto add_gnn = [&](const std::string& prefix, const GnnLayerParams& p) {
      out.push_back({prefix + ".w_self", p.w_self});
      out.push_back({prefix + ".w_neigh", p.w_neigh});
      out.push_back({prefix + ".bias", p.bias});
    };
    for (std::size_t i = 0; i < encoder.layers.size(); ++i) add_linear("encoder." + std::to_string(i), encoder.layers[i]);
    for (std::size_t i = 0; i < env.size(); ++i) add_gnn("env." + std::to_string(i), env[i]);
    if (has_action_network()) {
      for (std::size_t i = 0; i < action.layers.size(); ++i) add_gnn("action." + std::to_string(i), action.layers[i]);
      add_linear("action.head", action.head);
      if (learns_temperature()) out.push_back({"temperature.omega", temperature.omega});
    }
    for (std::size_t i = 0; i < decoder.layers.size(); ++i) add_linear("decoder." + std::to_string(i), decoder.layers[i]);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& np : named_parameters()) out.push_back(np.tensor);
    return out;
  }

  /// Parameters of the action network and temperature head only.
  std::vector<Tensor> action_parameters() const {
    std::vector<Tensor> out;
    for (auto& np : named_parameters()) {
      if (np.name.rfind("action.", 0) == 0 || np.name.rfind("temperature.", 0) == 0) out.push_back(np.tensor);
    }
    return out;
  }

  /// Deep copy of all parameter values (the copy is independent of this model).
  CoGnnModel clone() const {
    CoGnnModel m = *this;
    auto copy = [](Tensor& t) { t = Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), true); };
    for (auto& l : m.encoder.layers) { copy(l.weight); if (l.has_bias()) copy(l.bias); }
    for (auto& l : m.env) { copy(l.w_self); copy(l.w_neigh); copy(l.bias); }
    for (auto& l : m.action.layers) { copy(l.w_self); copy(l.w_neigh); copy(l.bias); }
    if (m.has_action_network()) {
      copy(m.action.head.weight);
      if (m.action.head.has_bias()) copy(m.action.head.bias);
      if (m.learns_temperature()) copy(m.temperature.omega);
    }
    for (auto& l : m.decoder.layers) { copy(l.weight); if (l.has_bias()) copy(l.bias); }
    return m;
  }

  /// Overwrites parameter values from another model of identical architecture.
  void load_values_from(const CoGnnModel& other) {
    auto dst = named_parameters();
    auto src = other.named_parameters();
    if (dst.size() != src.size()) throw SizeError("load_values_from: parameter count differs");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].tensor.shape() != src[i].tensor.shape()) throw SizeError("load_values_from: shape differs for " + dst[i].name);
      auto v = dst[i].tensor.mutable_values();
      std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(), v.begin());
    }
  }
};

struct ActionNetOutput {
  Tensor logits;  // n x 4
  Tensor hidden;  // n x hidden_dim, input to the temperature head
};

/// Runs pi over the full undirected topology of g (every edge open).
inline ActionNetOutput action_logits(const ActionNetwork& pi, const Graph& g, const Tensor& h) {
  Tensor x = h;
  for (const auto& layer : pi.layers) x = mpnn_layer_forward(layer, x, g);
  if (x.cols() != pi.head.weight.rows()) throw SizeError("action_logits: head input dim mismatch");
  return {linear_forward(pi.head, x), x};
}

inline constexpr double kMinInverseTemperature = 1e-6;

/// Counts nodes whose inverse temperature hit the floor.
struct TemperatureStats {
  std::size_t floored = 0;
};

/// Per-node 1/tau = softplus(omega^T h) + tau0 as an n x 1 tensor, floored at
/// 1e-6 so tau stays finite when tau0 = 0.
inline Tensor learned_inverse_temperature(const TemperatureHead& head, const Tensor& hidden,
                                          TemperatureStats* stats = nullptr) {
  if (head.omega.rows() != hidden.cols() || head.omega.cols() != 1) {
    throw SizeError("learned_inverse_temperature: omega " + shape_str(head.omega.shape()) +
                    " does not match hidden width " + std::to_string(hidden.cols()));
  }
  Tensor inv = add_scalar(softplus(matmul(hidden, head.omega)), head.tau0);
  std::size_t floored = 0;
  for (double v : inv.values()) floored += (v < kMinInverseTemperature);
  if (stats) stats->floored += floored;
  if (floored == 0) return inv;
  return detail::unary(
      inv, [](double v) { return std::max(v, kMinInverseTemperature); },
      [](double v, double) { return v < kMinInverseTemperature ? 0.0 : 1.0; });
}

/// Per-node temperature tau_v = 1 / (softplus(omega^T h_v) + tau0).
inline std::vector<double> temperatures(const Tensor& inverse_temperature) {
  std::vector<double> tau(inverse_temperature.numel());
  for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = 1.0 / inverse_temperature[i];
  return tau;
}

inline constexpr double kGumbelClamp = 1e-12;

/// n x 4 i.i.d. Gumbel(0, 1) draws, g = -log(-log u) with u clamped to
/// [1e-12, 1 - 1e-12].
inline std::vector<double> draw_gumbel_noise(std::size_t n, Rng& rng) {
  std::vector<double> g(n * kNumActions);
  for (auto& x : g) {
    const double u = std::clamp(rng.uniform(), kGumbelClamp, 1.0 - kGumbelClamp);
    x = -std::log(-std::log(u));
  }
  return g;
}

/// Where per-layer Gumbel noise comes from: a generator, or a fixed table
/// indexed by layer (used to replay or permute draws exactly).
class GumbelSource {
 public:
  explicit GumbelSource(Rng rng) : rng_(rng) {}

  static GumbelSource from_table(std::vector<std::vector<double>> per_layer) {
    GumbelSource s(Rng(0));
    s.table_ = std::move(per_layer);
    return s;
  }

  std::vector<double> draw(std::size_t layer, std::size_t n) {
    if (!table_) return draw_gumbel_noise(n, rng_);
    if (layer >= table_->size() || (*table_)[layer].size() != n * kNumActions) {
      throw SizeError("GumbelSource: noise table does not cover layer " + std::to_string(layer));
    }
    return (*table_)[layer];
  }

 private:
  Rng rng_;
  std::optional<std::vector<std::vector<double>>> table_;
};

enum class SampleMode {
  straight_through,  // forward one-hot, backward through the relaxation
  soft               // forward and backward through the relaxation
};

/// Straight-through Gumbel-softmax draw per node.
///
/// Forward: a_v = argmax_a(log p_v(a) + g_v(a)), emitted as an exact one-hot.
/// Backward: gradient of softmax((log p_v + g_v) / tau_v).
/// `inverse_temperature` is n x 1 (or a single value for all nodes).
inline ActionField gumbel_st_sample(const Tensor& logits, const Tensor& inverse_temperature,
                                    const std::vector<double>& noise,
                                    SampleMode mode = SampleMode::straight_through) {
  const std::size_t n = logits.rows();
  if (logits.cols() != kNumActions) throw SizeError("gumbel_st_sample: logits must have 4 columns");
  if (noise.size() != n * kNumActions) throw SizeError("gumbel_st_sample: noise size mismatch");
  if (inverse_temperature.numel() != n && inverse_temperature.numel() != 1) {
    throw SizeError("gumbel_st_sample: need one temperature per node");
  }
  for (double it : inverse_temperature.values()) {
    if (!(it > 0.0)) throw ParameterError("gumbel_st_sample: temperature must be positive");
  }
  Tensor logp = log_softmax(logits, 1);
  Tensor g = Tensor::from({n, kNumActions}, noise);
  Tensor inv = inverse_temperature.numel() == 1 && n != 1 ? inverse_temperature.reshape({1, 1})
                                                          : inverse_temperature.reshape({n, 1});
  Tensor soft = softmax(mul(add(logp, g), inv), 1);

  ActionField field;
  field.actions.resize(n);
  std::vector<double> hard(n * kNumActions, 0.0);
  const auto lp = logp.values();
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t best = 0;
    double best_score = lp[v * kNumActions] + noise[v * kNumActions];
    for (std::size_t a = 1; a < kNumActions; ++a) {
      const double s = lp[v * kNumActions + a] + noise[v * kNumActions + a];
      if (s > best_score) {
        best_score = s;
        best = a;
      }
    }
    hard[v * kNumActions + best] = 1.0;
    field.actions[v] = static_cast<Action>(best);
  }
  field.probs = softmax(logits, 1);
  field.vectors = mode == SampleMode::soft ? soft : straight_through(soft, std::move(hard));
  field.temperature.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    field.temperature[v] = 1.0 / inverse_temperature[inverse_temperature.numel() == 1 ? 0 : v];
  }
  return field;
}

inline ActionField gumbel_st_sample(const Tensor& logits, const Tensor& inverse_temperature, Rng& rng,
                                    SampleMode mode = SampleMode::straight_through) {
  return gumbel_st_sample(logits, inverse_temperature, draw_gumbel_noise(logits.rows(), rng), mode);
}

/// Actions per layer, one entry per node.
using ActionSchedule = std::vector<std::vector<Action>>;

struct ForwardOptions {
  bool training = false;
  SampleMode sample_mode = SampleMode::straight_through;
  const ActionSchedule* forced = nullptr;  // bypasses sampling when set
  Rng* dropout_rng = nullptr;              // required when training with dropout > 0
  TemperatureStats* temperature_stats = nullptr;
};

struct LayerOutput {
  Tensor h;
  ActionField actions;
  DirectedEdgeSet edges;
};

/// Inverse temperature fed to the sampler for the current layer.
inline Tensor inverse_temperature(const CoGnnModel& model, const Tensor& hidden, TemperatureStats* stats) {
  if (model.learns_temperature()) return learned_inverse_temperature(model.temperature, hidden, stats);
  return Tensor::filled({hidden.rows(), 1}, 1.0 / model.config.tau);
}

/// One cooperative layer: actions from pi on g, gates from the actions, then
/// environment layer `layer` over the gated edges.
inline LayerOutput cognn_layer_forward(const CoGnnModel& model, std::size_t layer, const Graph& g,
                                       const Tensor& h, GumbelSource& noise, const ForwardOptions& opts = {}) {
  if (layer >= model.env.size()) throw ConfigError("cognn_layer_forward: layer index out of range");
  LayerOutput out;
  if (opts.forced) {
    const auto& acts = (*opts.forced)[layer];
    if (acts.size() != g.num_nodes()) throw ValidationError("action schedule: wrong node count at layer " + std::to_string(layer));
    out.actions = ActionField::fixed(acts);
  } else if (!model.has_action_network()) {
    out.actions = ActionField::uniform(g.num_nodes(), Action::standard);
  } else {
    ActionNetOutput a = action_logits(model.action, g, h);
    Tensor inv = inverse_temperature(model, a.hidden, opts.temperature_stats);
    out.actions = gumbel_st_sample(a.logits, inv, noise.draw(layer, g.num_nodes()), opts.sample_mode);
  }
  if (!model.has_action_network() && !opts.forced) {
    out.edges = full_edge_set(g);
    out.h = mpnn_layer_forward(model.env[layer], h, g);
  } else {
    out.edges = induce_directed(g, out.actions);
    out.h = gnn_layer_forward(model.env[layer], h, out.edges);
  }
  if (opts.training && model.config.dropout > 0.0) {
    if (!opts.dropout_rng) throw ContractError("dropout requires an rng");
    out.h = dropout(out.h, model.config.dropout, *opts.dropout_rng, true);
  }
  return out;
}

inline void check_schedule(const ActionSchedule& schedule, std::size_t layers, std::size_t nodes) {
  if (schedule.size() != layers) {
    throw ValidationError("action schedule has " + std::to_string(schedule.size()) + " layers, model has " +
                          std::to_string(layers));
  }
  for (std::size_t l = 0; l < schedule.size(); ++l) {
    if (schedule[l].size() != nodes) {
      throw ValidationError("action schedule layer " + std::to_string(l) + " has " +
                            std::to_string(schedule[l].size()) + " actions for " + std::to_string(nodes) + " nodes");
    }
  }
}

struct ModelOutput {
  Tensor prediction;                  // node-regression: graphs x out; classification: graphs x classes
  Tensor node_states;                 // final h^(L)
  std::vector<ActionField> actions;   // per layer
  std::vector<DirectedEdgeSet> edges; // per layer, referencing the batch graph
};

/// Encoder, L cooperative layers, then the task head. Node-regression reads
/// node 0 of each graph; graph-classification pools then decodes.
inline ModelOutput cognn_model_forward(const CoGnnModel& model, const GraphBatch& batch, GumbelSource& noise,
                                       const ForwardOptions& opts = {}) {
  const Graph& g = batch.graph;
  if (g.feature_dim() != model.config.in_dim) {
    throw ConfigError("model expects " + std::to_string(model.config.in_dim) + " input features, dataset has " +
                      std::to_string(g.feature_dim()));
  }
  if (opts.forced) check_schedule(*opts.forced, model.env.size(), g.num_nodes());
  ModelOutput out;
  Tensor h = mlp_forward(model.encoder, g.features());
  for (std::size_t l = 0; l < model.env.size(); ++l) {
    LayerOutput lo = cognn_layer_forward(model, l, g, h, noise, opts);
    h = lo.h;
    out.actions.push_back(std::move(lo.actions));
    out.edges.push_back(std::move(lo.edges));
  }
  out.node_states = h;
  if (model.config.task == TaskKind::node_regression) {
    std::vector<std::size_t> roots(batch.node_offsets.begin(), batch.node_offsets.end() - 1);
    out.prediction = mlp_forward(model.decoder, index_rows(h, std::move(roots)));
  } else {
    out.prediction = mlp_forward(model.decoder, pool(model.config.pooling, h, batch.graph_index));
  }
  return out;
}

/// Encoder followed by the environment layers under a given action
/// schedule; returns the final node states.
inline Tensor cognn_forward_with_fixed_actions(const CoGnnModel& model, const Graph& g,
                                               const ActionSchedule& schedule) {
  check_schedule(schedule, model.env.size(), g.num_nodes());
  ForwardOptions opts;
  opts.forced = &schedule;
  GumbelSource unused(Rng(0));
  Tensor h = mlp_forward(model.encoder, g.features());
  for (std::size_t l = 0; l < model.env.size(); ++l) h = cognn_layer_forward(model, l, g, h, unused, opts).h;
  return h;
}

}  // namespace cognn
