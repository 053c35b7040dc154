#pragma once

// Synthetic datasets: RootNeighbors trees and Cycles pairs, the 1-WL
// color-refinement oracle, and line-oriented JSON dataset files.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cognn/error.hpp"
#include "cognn/graph.hpp"
#include "cognn/random.hpp"

namespace cognn {

enum class Split { train, valid, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "' (expected train, valid or test)");
}

inline constexpr Split kAllSplits[] = {Split::train, Split::valid, Split::test};

/// One graph of either task. Regression samples carry `target`; classification
/// samples carry `label` and the cycle length `k`.
struct Sample {
  Graph graph;
  Split split = Split::train;
  std::vector<double> target;
  std::optional<std::size_t> label;
  std::size_t k = 0;

  bool is_regression() const { return !label.has_value(); }
};

/// All three splits of one task.
struct Dataset {
  std::vector<Sample> train, valid, test;

  std::vector<Sample>& split(Split s) { return s == Split::train ? train : s == Split::valid ? valid : test; }
  const std::vector<Sample>& split(Split s) const {
    return s == Split::train ? train : s == Split::valid ? valid : test;
  }
  bool is_regression() const { return !train.empty() && train.front().is_regression(); }
};

// ---------------------------------------------------------------- RootNeighbors

inline constexpr std::size_t kRootNeighborsDim = 5;
inline constexpr std::size_t kTreesPerSplit = 1000;
inline constexpr double kFeatureBound = 2.0;

struct TreeShape {
  std::int64_t level1_lo, level1_hi;  // level-1 count, inclusive
  std::int64_t deg6_lo, deg6_hi;      // degree-6 count, inclusive
};

inline TreeShape tree_shape(Split s) {
  if (s == Split::train) return {3, 10, 1, 3};
  return {5, 12, 3, 5};
}

/// Mean feature over root (node 0) neighbors of degree exactly 6.
inline std::vector<double> root_neighbors_target(const Graph& g) {
  if (g.num_nodes() == 0) throw ValidationError("root_neighbors_target: empty graph");
  const std::size_t d = g.feature_dim();
  std::vector<double> sum(d, 0.0);
  std::size_t count = 0;
  for (std::size_t u : g.neighbors(0)) {
    if (g.degree(u) != 6) continue;
    ++count;
    for (std::size_t j = 0; j < d; ++j) sum[j] += g.features().at(u, j);
  }
  if (count == 0) throw ValidationError("root_neighbors_target: root has no degree-6 neighbor");
  for (auto& x : sum) x /= static_cast<double>(count);
  return sum;
}

/// One depth-2 tree. Node order: root, level-1 nodes, then each level-1
/// node's children in turn. The first k6 level-1 nodes get 5 children.
inline Graph sample_tree(const TreeShape& shape, Rng& rng) {
  const auto m = static_cast<std::size_t>(rng.uniform_int(shape.level1_lo, shape.level1_hi));
  const auto k6 = static_cast<std::size_t>(rng.uniform_int(shape.deg6_lo, shape.deg6_hi));
  EdgeList edges;
  std::size_t next = 1 + m;
  for (std::size_t i = 1; i <= m; ++i) {
    edges.emplace_back(0, i);
    const std::size_t children = i <= k6 ? 5 : static_cast<std::size_t>(rng.uniform_int(2, 3)) - 1;
    for (std::size_t c = 0; c < children; ++c) edges.emplace_back(i, next++);
  }
  std::vector<double> x(next * kRootNeighborsDim);
  for (auto& v : x) v = rng.uniform(-kFeatureBound, kFeatureBound);
  return Graph(next, std::move(edges), Tensor::from({next, kRootNeighborsDim}, std::move(x)));
}

inline Dataset generate_root_neighbors(std::uint64_t seed, std::size_t per_split = kTreesPerSplit) {
  Dataset ds;
  Rng root(seed);
  for (Split s : kAllSplits) {
    Rng rng = root.split(std::string("root-neighbors/") + to_string(s));
    auto& out = ds.split(s);
    out.reserve(per_split);
    for (std::size_t i = 0; i < per_split; ++i) {
      Sample smp{sample_tree(tree_shape(s), rng), s, {}, std::nullopt, 0};
      smp.target = root_neighbors_target(smp.graph);
      out.push_back(std::move(smp));
    }
  }
  return ds;
}

// ----------------------------------------------------------------------- Cycles

inline constexpr std::size_t kCycleMinK = 6;
inline constexpr std::size_t kCycleMaxK = 12;

inline Split cycle_split(std::size_t k) { return k <= 7 ? Split::train : k <= 9 ? Split::valid : Split::test; }

inline void add_cycle(EdgeList& e, std::size_t first, std::size_t len) {
  for (std::size_t i = 0; i < len; ++i) e.emplace_back(first + i, first + (i + 1) % len);
}

/// Pairs (k-cycle, label 1) and ((k-3)-cycle + triangle, label 0) for k = 6..12,
/// all features the constant 1.
inline Dataset generate_cycles() {
  Dataset ds;
  for (std::size_t k = kCycleMinK; k <= kCycleMaxK; ++k) {
    EdgeList single, split;
    add_cycle(single, 0, k);
    add_cycle(split, 0, k - 3);
    add_cycle(split, k - 3, 3);
    auto& out = ds.split(cycle_split(k));
    out.push_back({Graph(k, single, Tensor::filled({k, 1}, 1.0)), cycle_split(k), {}, 1, k});
    out.push_back({Graph(k, split, Tensor::filled({k, 1}, 1.0)), cycle_split(k), {}, 0, k});
  }
  return ds;
}

// ------------------------------------------------------------------------- 1-WL

using ColorHistogram = std::map<std::uint64_t, std::size_t>;

/// Color refinement from uniform colors. Colors are hashes of (own color,
/// sorted neighbor colors), so histograms compare across graphs. The
/// partition is stable after at most n rounds; running exactly n rounds
/// compares graphs of equal size at the same depth.
inline ColorHistogram wl1_colors(const Graph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::uint64_t> color(n, 1), next(n);
  std::vector<std::uint64_t> nb;
  for (std::size_t round = 0; round < std::max<std::size_t>(n, 1); ++round) {
    for (std::size_t v = 0; v < n; ++v) {
      nb.clear();
      for (std::size_t u : g.neighbors(v)) nb.push_back(color[u]);
      std::sort(nb.begin(), nb.end());
      std::uint64_t h = Rng::mix(color[v] ^ 0x9e3779b97f4a7c15ULL);
      for (std::uint64_t c : nb) h = Rng::mix(h ^ c);
      next[v] = Rng::mix(h ^ nb.size());
    }
    color.swap(next);
  }
  ColorHistogram hist;
  for (auto c : color) ++hist[c];
  return hist;
}

inline bool wl1_indistinguishable(const Graph& a, const Graph& b) {
  return a.num_nodes() == b.num_nodes() && wl1_colors(a) == wl1_colors(b);
}

// ------------------------------------------------------------------------- I/O

inline nlohmann::json sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["split"] = to_string(s.split);
  j["num_nodes"] = s.graph.num_nodes();
  auto edges = nlohmann::json::array();
  for (auto [u, v] : s.graph.edges()) edges.push_back({u, v});
  j["edges"] = std::move(edges);
  auto feats = nlohmann::json::array();
  const Tensor& x = s.graph.features();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < x.cols(); ++c) row.push_back(x.at(r, c));
    feats.push_back(std::move(row));
  }
  j["features"] = std::move(feats);
  if (s.label) {
    j["label"] = *s.label;
    j["k"] = s.k;
  } else {
    j["target"] = s.target;
  }
  return j;
}

inline Sample sample_from_json(const nlohmann::json& j) {
  const auto n = j.at("num_nodes").get<std::size_t>();
  EdgeList edges;
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw ValidationError("edge must be a pair");
    edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
  }
  const auto& rows = j.at("features");
  if (!rows.is_array() || rows.size() != n) throw ValidationError("features must have one row per node");
  const std::size_t d = n == 0 ? 0 : rows[0].size();
  std::vector<double> x;
  x.reserve(n * d);
  for (const auto& row : rows) {
    if (row.size() != d) throw ValidationError("feature rows differ in length");
    for (const auto& v : row) x.push_back(v.get<double>());
  }
  Sample s{Graph(n, std::move(edges), Tensor::from({n, d}, std::move(x))), split_from_string(j.at("split").get<std::string>()),
           {}, std::nullopt, 0};
  if (j.contains("label")) {
    s.label = j.at("label").get<std::size_t>();
    s.k = j.value("k", std::size_t{0});
  } else {
    s.target = j.at("target").get<std::vector<double>>();
  }
  return s;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), lineno);
    } catch (const ValidationError& e) {
      throw ParseError(path.string() + ": " + e.what(), lineno);
    }
  }
  return out;
}

inline const char* kRootNeighborsPrefix = "root_neighbors_";
inline const char* kCyclesFile = "cycles.jsonl";

inline std::filesystem::path root_neighbors_file(const std::filesystem::path& dir, Split s) {
  return dir / (std::string(kRootNeighborsPrefix) + to_string(s) + ".jsonl");
}

/// Writes a dataset directory: three RootNeighbors files or one Cycles file.
inline std::vector<std::filesystem::path> save_dataset_dir(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  if (ds.is_regression()) {
    for (Split s : kAllSplits) {
      written.push_back(root_neighbors_file(dir, s));
      save_dataset(written.back(), ds.split(s));
    }
  } else {
    std::vector<Sample> all;
    for (Split s : kAllSplits) all.insert(all.end(), ds.split(s).begin(), ds.split(s).end());
    written.push_back(dir / kCyclesFile);
    save_dataset(written.back(), all);
  }
  return written;
}

/// Reads whichever dataset a directory holds.
inline Dataset load_dataset_dir(const std::filesystem::path& dir) {
  Dataset ds;
  if (std::filesystem::exists(root_neighbors_file(dir, Split::train))) {
    for (Split s : kAllSplits) ds.split(s) = load_dataset(root_neighbors_file(dir, s));
    return ds;
  }
  if (std::filesystem::exists(dir / kCyclesFile)) {
    for (auto& s : load_dataset(dir / kCyclesFile)) ds.split(s.split).push_back(std::move(s));
    return ds;
  }
  throw IoError("no dataset files in " + dir.string());
}

}  // namespace cognn
