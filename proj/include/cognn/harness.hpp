#pragma once

// Training, evaluation metrics and instrumentation.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cognn/cognn.hpp"
#include "cognn/config.hpp"
#include "cognn/datagen.hpp"
#include "cognn/error.hpp"
#include "cognn/optim.hpp"

namespace cognn {

/// Evaluation seeds are fixed and independent of the training seed.
inline constexpr std::uint64_t kEvalSeedBase = 0x5eed0fe7a1ULL;

inline Rng eval_rng(std::size_t seed_index) { return Rng(kEvalSeedBase).split("eval", seed_index); }

struct MetricEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;  // standard error of the mean over seeds
  std::vector<double> per_seed;
};

inline MetricEstimate summarize(std::vector<double> xs) {
  MetricEstimate m;
  m.per_seed = std::move(xs);
  const double n = static_cast<double>(m.per_seed.size());
  m.mean = std::accumulate(m.per_seed.begin(), m.per_seed.end(), 0.0) / n;
  if (m.per_seed.size() > 1) {
    double ss = 0;
    for (double x : m.per_seed) ss += (x - m.mean) * (x - m.mean);
    m.stderr_ = std::sqrt(ss / (n - 1) / n);
  }
  return m;
}

// ------------------------------------------------------------------- batching

struct LabeledBatch {
  GraphBatch batch;
  Tensor targets;                  // regression: graphs x out
  std::vector<std::size_t> labels; // classification
};

inline LabeledBatch make_labeled_batch(const std::vector<Sample>& samples, std::span<const std::size_t> index) {
  std::vector<const Graph*> gs;
  gs.reserve(index.size());
  for (auto i : index) gs.push_back(&samples[i].graph);
  LabeledBatch lb{make_batch(gs), {}, {}};
  if (index.empty()) return lb;
  if (samples[index[0]].is_regression()) {
    const std::size_t d = samples[index[0]].target.size();
    std::vector<double> t;
    t.reserve(index.size() * d);
    for (auto i : index) {
      if (samples[i].target.size() != d) throw ValidationError("targets differ in length");
      t.insert(t.end(), samples[i].target.begin(), samples[i].target.end());
    }
    lb.targets = Tensor::from({index.size(), d}, std::move(t));
  } else {
    for (auto i : index) lb.labels.push_back(*samples[i].label);
  }
  return lb;
}

inline LabeledBatch make_labeled_batch(const std::vector<Sample>& samples) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return make_labeled_batch(samples, all);
}

inline void check_task(const ModelConfig& cfg, const std::vector<Sample>& samples) {
  if (samples.empty()) throw ValidationError("empty sample set");
  const bool regression = cfg.task == TaskKind::node_regression;
  if (regression != samples.front().is_regression()) {
    throw ConfigError(std::string("model task ") + to_string(cfg.task) + " does not match the dataset");
  }
}

// -------------------------------------------------------------------- metrics

/// Predictions for a batch with hard-sampled actions under a given noise seed.
inline Tensor predict(const CoGnnModel& model, const GraphBatch& batch, Rng noise_rng) {
  NoGradGuard ng;
  GumbelSource noise(noise_rng);
  return cognn_model_forward(model, batch, noise).prediction;
}

inline double mae_of(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) throw SizeError("mae: prediction and target shapes differ");
  double s = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) s += std::fabs(pred[i] - target[i]);
  return s / static_cast<double>(pred.numel());
}

inline double accuracy_of(const Tensor& logits, const std::vector<std::size_t>& labels) {
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    correct += best == labels[r];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Seeds actually needed: a model without actions is deterministic.
inline std::size_t effective_seeds(const CoGnnModel& model, std::size_t seeds) {
  return model.has_action_network() ? seeds : 1;
}

inline MetricEstimate evaluate_batch(const CoGnnModel& model, const LabeledBatch& lb, std::size_t seeds) {
  std::vector<double> xs;
  const std::size_t s_eff = effective_seeds(model, seeds);
  for (std::size_t s = 0; s < s_eff; ++s) {
    Tensor p = predict(model, lb.batch, eval_rng(s));
    xs.push_back(model.config.task == TaskKind::node_regression ? mae_of(p, lb.targets) : accuracy_of(p, lb.labels));
  }
  xs.resize(seeds, xs.front());
  return summarize(std::move(xs));
}

/// Mean over samples and target coordinates of |prediction - target|, at the
/// root node, averaged over evaluation seeds.
inline MetricEstimate evaluate_mae(const CoGnnModel& model, const std::vector<Sample>& samples, std::size_t seeds = 10) {
  if (model.config.task != TaskKind::node_regression) throw ConfigError("evaluate_mae needs a regression model");
  check_task(model.config, samples);
  return evaluate_batch(model, make_labeled_batch(samples), seeds);
}

inline MetricEstimate evaluate_accuracy(const CoGnnModel& model, const std::vector<Sample>& samples,
                                        std::size_t seeds = 10) {
  if (model.config.task != TaskKind::graph_classification) throw ConfigError("evaluate_accuracy needs a classifier");
  check_task(model.config, samples);
  return evaluate_batch(model, make_labeled_batch(samples), seeds);
}

/// MAE of predicting the zero vector for every sample.
inline double zero_predictor_mae(const std::vector<Sample>& samples) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& smp : samples) {
    for (double t : smp.target) s += std::fabs(t);
    n += smp.target.size();
  }
  return s / static_cast<double>(n);
}

/// Per layer, the fraction of the 2|E| directed edges whose gate is open,
/// averaged over seeds.
inline std::vector<double> edge_retention_ratio(const CoGnnModel& model, const GraphBatch& batch, std::size_t seeds = 10,
                                                const ActionSchedule* forced = nullptr) {
  std::vector<double> ratio(model.env.size(), 0.0);
  const double possible = 2.0 * static_cast<double>(batch.graph.num_edges());
  if (possible == 0) return ratio;
  NoGradGuard ng;
  for (std::size_t s = 0; s < seeds; ++s) {
    GumbelSource noise(eval_rng(s));
    ForwardOptions opts;
    opts.forced = forced;
    ModelOutput out = cognn_model_forward(model, batch, noise, opts);
    for (std::size_t l = 0; l < ratio.size(); ++l) ratio[l] += static_cast<double>(out.edges[l].num_kept()) / possible;
  }
  for (auto& r : ratio) r /= static_cast<double>(seeds);
  return ratio;
}

/// Over directed edges neighbor -> root: correct iff kept exactly when the
/// neighbor has degree 6. Returns a percentage averaged over seeds.
inline double action_edge_accuracy(const CoGnnModel& model, const std::vector<Sample>& samples, std::size_t seeds = 10,
                                   const ActionSchedule* forced = nullptr) {
  if (model.env.size() != 1) throw ConfigError("action_edge_accuracy needs a single-layer model");
  check_task(model.config, samples);
  LabeledBatch lb = make_labeled_batch(samples);
  const Graph& g = lb.batch.graph;
  std::size_t correct = 0, total = 0;
  NoGradGuard ng;
  for (std::size_t s = 0; s < seeds; ++s) {
    GumbelSource noise(eval_rng(s));
    ForwardOptions opts;
    opts.forced = forced;
    ModelOutput out = cognn_model_forward(model, lb.batch, noise, opts);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::size_t root = lb.batch.node_offsets[i];
      for (std::size_t u : g.neighbors(root)) {
        const bool kept = out.edges[0].weight(u, root) == 1.0;
        correct += kept == (g.degree(u) == 6);
        ++total;
      }
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

/// Policy that keeps exactly the degree-6 edges into each root.
inline ActionSchedule oracle_root_neighbors_schedule(const GraphBatch& batch) {
  const Graph& g = batch.graph;
  std::vector<Action> acts(g.num_nodes(), Action::isolate);
  for (std::size_t i = 0; i + 1 < batch.node_offsets.size(); ++i) {
    const std::size_t root = batch.node_offsets[i];
    acts[root] = Action::listen;
    for (std::size_t u : g.neighbors(root)) acts[u] = g.degree(u) == 6 ? Action::broadcast : Action::isolate;
  }
  return {acts};
}

// ------------------------------------------------------------------ training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_metric, test_metric;
  std::vector<double> ratios;  // per layer, on the validation split
  double seconds = 0.0;        // wall-clock, not part of the CSV
};

struct MetricsLog {
  std::vector<EpochRecord> epochs;

  void write_csv(const std::filesystem::path& path, std::size_t layers) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,train_loss,val_metric,test_metric";
    for (std::size_t l = 0; l < layers; ++l) out << ",ratio_layer_" << l;
    out << "\n";
    out.precision(17);
    for (const auto& e : epochs) {
      out << e.epoch << "," << e.train_loss << ",";
      if (e.val_metric) out << *e.val_metric;
      out << ",";
      if (e.test_metric) out << *e.test_metric;
      for (std::size_t l = 0; l < layers; ++l) {
        out << ",";
        if (l < e.ratios.size()) out << e.ratios[l];
      }
      out << "\n";
    }
    if (!out) throw IoError("write failed for " + path.string());
  }
};

struct TrainResult {
  CoGnnModel model;  // parameters at the best validation epoch
  MetricsLog log;
  std::size_t best_epoch = 0;
  double best_val = 0.0;
  std::size_t floored_temperatures = 0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_eval;  // called after each evaluated epoch
};

inline bool better(TaskKind task, double candidate, double incumbent) {
  return task == TaskKind::node_regression ? candidate < incumbent : candidate > incumbent;
}

inline Tensor task_loss(const ModelConfig& cfg, const Tensor& prediction, const LabeledBatch& lb) {
  return cfg.task == TaskKind::node_regression ? l1_loss(prediction, lb.targets) : cross_entropy(prediction, lb.labels);
}

/// Adam training with model selection on the validation metric. Determined
/// entirely by (config, dataset, seed).
inline TrainResult train(const RunConfig& run, const Dataset& data, const TrainHooks& hooks = {}) {
  run.validate();
  if (data.train.empty() || data.valid.empty()) throw ValidationError("train and valid splits must be non-empty");
  const bool regression = data.is_regression();
  if (regression != (run.task == TaskName::root_neighbors)) {
    throw ConfigError(std::string("task ") + to_string(run.task) + " does not match the dataset");
  }
  const std::size_t in_dim = data.train.front().graph.feature_dim();
  const std::size_t out_dim = regression ? data.train.front().target.size() : 2;
  const ModelConfig mcfg = run.model_config(in_dim, out_dim);

  Rng root(run.seed);
  Rng init = root.split("model");
  TrainResult res{CoGnnModel::init(mcfg, init), {}, 0, 0.0, 0};
  CoGnnModel& model = res.model;
  std::vector<Tensor> params = model.parameters();
  AdamState adam;
  adam.options.lr = run.lr;

  const std::size_t n = data.train.size();
  const std::size_t bs = run.batch_size == 0 ? n : std::min(run.batch_size, n);
  std::optional<LabeledBatch> full;
  if (bs == n) full = make_labeled_batch(data.train);
  const LabeledBatch valid = make_labeled_batch(data.valid);
  const std::optional<LabeledBatch> test =
      data.test.empty() ? std::nullopt : std::optional<LabeledBatch>(make_labeled_batch(data.test));

  std::optional<CoGnnModel> best;
  TemperatureStats tstats;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!full) {
      Rng shuffle = root.split("shuffle", epoch);
      for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
      }
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs, ++step) {
      std::optional<LabeledBatch> part;
      if (!full) part = make_labeled_batch(data.train, std::span(order).subspan(start, std::min(bs, n - start)));
      const LabeledBatch& lb = full ? *full : *part;
      GumbelSource noise(root.split("gumbel", step));
      Rng drop = root.split("dropout", step);
      ForwardOptions opts;
      opts.training = true;
      opts.dropout_rng = &drop;
      opts.temperature_stats = &tstats;
      Tensor loss = task_loss(mcfg, cognn_model_forward(model, lb.batch, noise, opts).prediction, lb);
      const double lv = loss.item();
      if (!std::isfinite(lv)) throw DivergenceError("non-finite training loss", epoch);
      Gradients grads = backward(loss);
      adam_step(params, grads, adam);
      loss_sum += lv;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    const bool eval_now = (epoch + 1) % run.eval_every == 0 || epoch + 1 == run.epochs;
    if (eval_now) {
      rec.val_metric = evaluate_batch(model, valid, run.eval_seeds).mean;
      if (test) rec.test_metric = evaluate_batch(model, *test, run.eval_seeds).mean;
      rec.ratios = edge_retention_ratio(model, valid.batch, 1);
      if (!best || better(mcfg.task, *rec.val_metric, res.best_val)) {
        best = model.clone();
        res.best_val = *rec.val_metric;
        res.best_epoch = epoch;
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(rec);
    if (eval_now && hooks.on_eval) hooks.on_eval(rec);
  }
  if (best) model = std::move(*best);
  res.floored_temperatures = tstats.floored;
  return res;
}

// -------------------------------------------------------------------- traces

struct TraceRow {
  std::size_t layer, node;
  Action action;
  std::array<double, kNumActions> p;
  double tau;
};

struct Trace {
  std::vector<TraceRow> rows;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> kept;  // per layer
};

/// Actions, probabilities, temperatures and kept edges of one forward pass.
/// Forced schedules report probability 1 on the forced action and tau = 0.
inline Trace record_trace(const CoGnnModel& model, const Graph& g, Rng noise_rng,
                          const ActionSchedule* forced = nullptr) {
  NoGradGuard ng;
  GumbelSource noise(noise_rng);
  ForwardOptions opts;
  opts.forced = forced;
  GraphBatch batch = make_batch(g);
  ModelOutput out = cognn_model_forward(model, batch, noise, opts);
  Trace t;
  for (std::size_t l = 0; l < out.actions.size(); ++l) {
    const ActionField& f = out.actions[l];
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      TraceRow r{l, v, f.actions[v], {}, f.temperature.empty() ? 0.0 : f.temperature[v]};
      for (std::size_t a = 0; a < kNumActions; ++a) r.p[a] = f.probs.at(v, a);
      t.rows.push_back(r);
    }
    t.kept.push_back(out.edges[l].kept_edges());
  }
  return t;
}

inline std::filesystem::path trace_edges_path(const std::filesystem::path& csv) {
  auto p = csv;
  p += ".edges.csv";
  return p;
}

/// Writes `path` (layer,node,action,p_S,p_L,p_B,p_I,tau) and
/// `path.edges.csv` (layer,source,target).
inline void write_trace(const Trace& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "layer,node,action,p_S,p_L,p_B,p_I,tau\n";
  for (const auto& r : t.rows) {
    out << r.layer << "," << r.node << "," << action_letter(r.action);
    for (double p : r.p) out << "," << p;
    out << "," << r.tau << "\n";
  }
  std::ofstream edges(trace_edges_path(path), std::ios::trunc);
  if (!edges) throw IoError("cannot write " + trace_edges_path(path).string());
  edges << "layer,source,target\n";
  for (std::size_t l = 0; l < t.kept.size(); ++l) {
    for (auto [u, v] : t.kept[l]) edges << l << "," << u << "," << v << "\n";
  }
  if (!out || !edges) throw IoError("write failed for trace " + path.string());
}

// ---------------------------------------------------------------------- cost

/// Cost units of one cooperative layer:
/// L_pi d_pi (|E| d_pi + |V|) + d_eta (|E| d_eta + |V|).
struct CostEstimate {
  double action = 0.0;
  double environment = 0.0;
  double total() const { return action + environment; }
};

inline CostEstimate layer_cost_estimate(const ModelConfig& cfg, std::size_t nodes, std::size_t edges) {
  const double V = static_cast<double>(nodes), E = static_cast<double>(edges);
  const double dp = static_cast<double>(cfg.action_dim), de = static_cast<double>(cfg.env_dim);
  CostEstimate c;
  if (cfg.family == ModelFamily::cognn) c.action = static_cast<double>(cfg.action_layers) * dp * (E * dp + V);
  c.environment = de * (E * de + V);
  return c;
}

/// Median wall-clock seconds of one cooperative layer on g (state width env_dim).
inline double measure_layer_seconds(const CoGnnModel& model, const Graph& g, std::size_t reps = 5) {
  if (model.env.empty()) throw ConfigError("measure_layer_seconds needs at least one layer");
  NoGradGuard ng;
  Rng rng(1);
  std::vector<double> h(g.num_nodes() * model.config.env_dim);
  for (auto& x : h) x = rng.uniform(-1, 1);
  Tensor state = Tensor::from({g.num_nodes(), model.config.env_dim}, std::move(h));
  GumbelSource noise(Rng(2));
  std::vector<double> times;
  for (std::size_t r = 0; r < reps + 1; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    LayerOutput out = cognn_layer_forward(model, 0, g, state, noise);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out.h.numel() == 0) throw ContractError("empty layer output");
    if (r > 0) times.push_back(s);  // first run warms caches
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

struct LinearFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError("fit_line needs >= 2 paired points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

/// Random graph with exactly `edges` distinct undirected edges on edges / 4
/// nodes (at least 8), features of width `dim`.
inline Graph random_graph_with_edges(std::size_t edges, std::size_t dim, Rng& rng) {
  const std::size_t n = std::max<std::size_t>(8, edges / 4);
  const std::size_t max_edges = n * (n - 1) / 2;
  if (edges > max_edges) throw ValidationError("too many edges for the node count");
  std::set<std::pair<std::size_t, std::size_t>> seen;
  EdgeList e;
  e.reserve(edges);
  while (e.size() < edges) {
    auto u = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    auto v = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    if (seen.insert({u, v}).second) e.emplace_back(u, v);
  }
  std::vector<double> x(n * dim);
  for (auto& v : x) v = rng.uniform(-1, 1);
  return Graph(n, std::move(e), Tensor::from({n, dim}, std::move(x)));
}

struct BenchPoint {
  std::size_t nodes, edges;
  CostEstimate predicted;
  double seconds;
};

struct BenchReport {
  std::vector<BenchPoint> points;
  LinearFit time_vs_edges;
};

inline BenchReport run_bench(const ModelConfig& cfg, const std::vector<std::size_t>& edge_counts, std::uint64_t seed = 0,
                             std::size_t reps = 5) {
  Rng rng(seed);
  Rng init = rng.split("model");
  CoGnnModel model = CoGnnModel::init(cfg, init);
  BenchReport rep;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < edge_counts.size(); ++i) {
    Rng grng = rng.split("graph", i);
    Graph g = random_graph_with_edges(edge_counts[i], cfg.env_dim, grng);
    const double s = measure_layer_seconds(model, g, reps);
    rep.points.push_back({g.num_nodes(), g.num_edges(), layer_cost_estimate(cfg, g.num_nodes(), g.num_edges()), s});
    xs.push_back(static_cast<double>(g.num_edges()));
    ys.push_back(s);
  }
  if (xs.size() >= 2) rep.time_vs_edges = fit_line(xs, ys);
  return rep;
}

}  // namespace cognn
