#pragma once

// Undirected attributed graphs, action-induced directed edge sets and the
// gated neighborhood aggregation they drive.
//
// Directed edges are addressed by "slots" of the in-neighbor CSR: slot s in
// [offsets[v], offsets[v+1]) is the edge sources[s] -> v. Neighbor lists are
// sorted, so slot order is the canonical aggregation order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cognn/actions.hpp"
#include "cognn/error.hpp"
#include "cognn/ops.hpp"
#include "cognn/tensor.hpp"

namespace cognn {

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

enum class Aggregation { sum, mean, gcn };

inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::sum: return "sum";
    case Aggregation::mean: return "mean";
    case Aggregation::gcn: return "gcn";
  }
  return "?";
}

inline Aggregation aggregation_from_string(const std::string& s) {
  if (s == "sum") return Aggregation::sum;
  if (s == "mean") return Aggregation::mean;
  if (s == "gcn") return Aggregation::gcn;
  throw ConfigError("unknown aggregation '" + s + "'");
}

class Graph {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  Graph() : Graph(0, {}, Tensor::zeros({0, 0})) {}

  /// Validates and canonicalizes: duplicate or reversed pairs collapse to one
  /// undirected edge. Self-loops, out-of-range endpoints and a feature matrix
  /// whose row count differs from num_nodes are rejected.
  Graph(std::size_t num_nodes, const EdgeList& edges, Tensor features)
      : num_nodes_(num_nodes), features_(std::move(features)) {
    if (features_.rank() != 2 || features_.shape()[0] != num_nodes) {
      throw ValidationError("graph: feature matrix " + shape_str(features_.shape()) +
                            " does not have " + std::to_string(num_nodes) + " rows");
    }
    edges_.reserve(edges.size());
    for (auto [u, v] : edges) {
      if (u >= num_nodes || v >= num_nodes) {
        throw ValidationError("graph: edge (" + std::to_string(u) + "," + std::to_string(v) +
                              ") has an endpoint outside [0," + std::to_string(num_nodes) + ")");
      }
      if (u == v) throw ValidationError("graph: self-loop at node " + std::to_string(u));
      edges_.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

    offsets_.assign(num_nodes + 1, 0);
    for (auto [u, v] : edges_) {
      ++offsets_[u + 1];
      ++offsets_[v + 1];
    }
    for (std::size_t i = 0; i < num_nodes; ++i) offsets_[i + 1] += offsets_[i];
    sources_.resize(offsets_[num_nodes]);
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (auto [u, v] : edges_) {
      sources_[fill[u]++] = v;
      sources_[fill[v]++] = u;
    }
    for (std::size_t v = 0; v < num_nodes; ++v) {
      std::sort(sources_.begin() + static_cast<std::ptrdiff_t>(offsets_[v]),
                sources_.begin() + static_cast<std::ptrdiff_t>(offsets_[v + 1]));
    }
  }

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_directed() const noexcept { return sources_.size(); }
  std::size_t feature_dim() const noexcept { return features_.cols(); }

  /// Unique pairs (u, v) with u < v, sorted.
  const EdgeList& edges() const noexcept { return edges_; }
  const Tensor& features() const noexcept { return features_; }

  std::span<const std::size_t> neighbors(std::size_t v) const {
    return {sources_.data() + offsets_[v], offsets_[v + 1] - offsets_[v]};
  }
  std::size_t degree(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }

  const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }
  const std::vector<std::size_t>& sources() const noexcept { return sources_; }

  /// Slot of directed edge u -> v, or npos when {u, v} is not an edge.
  std::size_t slot(std::size_t u, std::size_t v) const {
    const auto nb = neighbors(v);
    auto it = std::lower_bound(nb.begin(), nb.end(), u);
    if (it == nb.end() || *it != u) return npos;
    return offsets_[v] + static_cast<std::size_t>(it - nb.begin());
  }

  /// Destination node of every slot.
  std::vector<std::size_t> slot_targets() const {
    std::vector<std::size_t> dst(num_directed());
    for (std::size_t v = 0; v < num_nodes_; ++v) {
      for (std::size_t s = offsets_[v]; s < offsets_[v + 1]; ++s) dst[s] = v;
    }
    return dst;
  }

  Graph with_features(Tensor features) const { return Graph(num_nodes_, edges_, std::move(features)); }

  /// Relabels old node i as perm[i]; feature rows move with their nodes.
  Graph permuted(std::span<const std::size_t> perm) const {
    if (perm.size() != num_nodes_) throw ValidationError("permuted: permutation size mismatch");
    EdgeList e;
    e.reserve(edges_.size());
    for (auto [u, v] : edges_) e.emplace_back(perm[u], perm[v]);
    const std::size_t d = feature_dim();
    std::vector<double> x(num_nodes_ * d);
    for (std::size_t i = 0; i < num_nodes_; ++i) {
      for (std::size_t j = 0; j < d; ++j) x[perm[i] * d + j] = features_.at(i, j);
    }
    return Graph(num_nodes_, e, Tensor::from({num_nodes_, d}, std::move(x)));
  }

 private:
  std::size_t num_nodes_ = 0;
  EdgeList edges_;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> sources_;
  Tensor features_;
};

inline std::vector<std::size_t> degrees(const Graph& g) {
  std::vector<std::size_t> d(g.num_nodes());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) d[v] = g.degree(v);
  return d;
}

/// Disjoint union of several graphs with bookkeeping to map back.
struct GraphBatch {
  Graph graph;
  std::vector<std::size_t> node_offsets;  // size num_graphs + 1
  std::vector<std::size_t> graph_index;   // per node

  std::size_t num_graphs() const noexcept { return node_offsets.size() - 1; }
};

inline GraphBatch make_batch(std::span<const Graph* const> graphs) {
  if (graphs.empty()) throw ValidationError("make_batch: no graphs");
  const std::size_t d = graphs.front()->feature_dim();
  GraphBatch b;
  b.node_offsets.push_back(0);
  EdgeList edges;
  std::vector<double> x;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    if (g.feature_dim() != d) throw SizeError("make_batch: feature dimensions differ");
    const std::size_t off = b.node_offsets.back();
    for (auto [u, v] : g.edges()) edges.emplace_back(u + off, v + off);
    const auto xv = g.features().values();
    x.insert(x.end(), xv.begin(), xv.end());
    b.graph_index.insert(b.graph_index.end(), g.num_nodes(), gi);
    b.node_offsets.push_back(off + g.num_nodes());
  }
  const std::size_t n = b.node_offsets.back();
  b.graph = Graph(n, edges, Tensor::from({n, d}, std::move(x)));
  return b;
}

inline GraphBatch make_batch(const Graph& g) {
  const Graph* one[] = {&g};
  return make_batch(one);
}

/// Gate weight w(u -> v) per slot of a graph, for one layer.
///
/// Forward values are exactly 0 or 1 when the gates were induced from hard
/// (one-hot) action vectors; gradients reach the vectors behind them.
struct DirectedEdgeSet {
  const Graph* graph = nullptr;  // must outlive the edge set
  Tensor gates;                  // [num_directed]

  std::size_t size() const noexcept { return gates.numel(); }

  double weight(std::size_t u, std::size_t v) const {
    const std::size_t s = graph->slot(u, v);
    if (s == Graph::npos) throw ValidationError("weight: (u,v) is not an edge");
    return gates[s];
  }

  std::size_t num_kept() const {
    std::size_t k = 0;
    for (double w : gates.values()) k += (w == 1.0);
    return k;
  }

  /// Directed pairs (u, v) whose forward gate value is exactly 1, in slot order.
  EdgeList kept_edges() const {
    EdgeList out;
    const auto& off = graph->offsets();
    const auto& src = graph->sources();
    for (std::size_t v = 0; v < graph->num_nodes(); ++v) {
      for (std::size_t s = off[v]; s < off[v + 1]; ++s) {
        if (gates[s] == 1.0) out.emplace_back(src[s], v);
      }
    }
    return out;
  }
};

/// Every directed edge open: plain message passing over g.
inline DirectedEdgeSet full_edge_set(const Graph& g) {
  return {&g, Tensor::filled({g.num_directed()}, 1.0)};
}

/// Gate law w(u -> v) = (y_u[S] + y_u[B]) * (y_v[S] + y_v[L]).
inline DirectedEdgeSet induce_directed(const Graph& g, const Tensor& action_vectors) {
  if (action_vectors.rank() != 2 || action_vectors.rows() != g.num_nodes() ||
      action_vectors.cols() != kNumActions) {
    throw ValidationError("induce_directed: expected " + std::to_string(g.num_nodes()) +
                          "x4 action vectors, got " + shape_str(action_vectors.shape()));
  }
  constexpr std::size_t S = 0, L = 1, B = 2;
  const auto y = action_vectors.values();
  const auto& off = g.offsets();
  const auto& src = g.sources();
  const std::size_t n = g.num_nodes();
  std::vector<double> out_gate(n), in_gate(n);
  for (std::size_t v = 0; v < n; ++v) {
    out_gate[v] = y[v * 4 + S] + y[v * 4 + B];
    in_gate[v] = y[v * 4 + S] + y[v * 4 + L];
  }
  std::vector<double> w(g.num_directed());
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t s = off[v]; s < off[v + 1]; ++s) w[s] = out_gate[src[s]] * in_gate[v];
  }
  const Graph* gp = &g;
  Tensor gates = detail::make_op(
      {g.num_directed()}, std::move(w), {action_vectors},
      [gp, out_gate = std::move(out_gate), in_gate = std::move(in_gate)](detail::Node& self) {
        auto& dy = self.parents[0]->grad_buffer();
        const auto& off = gp->offsets();
        const auto& src = gp->sources();
        for (std::size_t v = 0; v < gp->num_nodes(); ++v) {
          for (std::size_t s = off[v]; s < off[v + 1]; ++s) {
            const double gs = self.grad[s];
            if (gs == 0.0) continue;
            const std::size_t u = src[s];
            dy[u * 4 + S] += gs * in_gate[v];
            dy[u * 4 + B] += gs * in_gate[v];
            dy[v * 4 + S] += gs * out_gate[u];
            dy[v * 4 + L] += gs * out_gate[u];
          }
        }
      });
  return {&g, std::move(gates)};
}

inline DirectedEdgeSet induce_directed(const Graph& g, const ActionField& actions) {
  if (actions.num_nodes() != g.num_nodes()) {
    throw ValidationError("induce_directed: " + std::to_string(actions.num_nodes()) +
                          " actions for " + std::to_string(g.num_nodes()) + " nodes");
  }
  return induce_directed(g, actions.vectors);
}

/// m_v = combination of h_u over slots u -> v weighted by the gates.
///
///   sum:  sum_u w(u->v) h_u
///   mean: the sum divided by sum_u w(u->v); zero vector when that is 0
///   gcn:  sum_u w(u->v) h_u / sqrt((din(v)+1)(dout(u)+1)), with gate degrees
///         taken from forward values and held constant
///
/// For mean with an empty neighborhood the gradient w.r.t. a closed gate is
/// taken as h_u, the message that opening it alone would deliver.
inline Tensor gated_aggregate(Aggregation mode, const DirectedEdgeSet& edges, const Tensor& h) {
  const Graph& g = *edges.graph;
  const std::size_t n = g.num_nodes();
  if (h.rank() != 2 || h.rows() != n) {
    throw SizeError("gated_aggregate: expected " + std::to_string(n) + " rows, got " +
                    shape_str(h.shape()));
  }
  if (edges.size() != g.num_directed()) throw SizeError("gated_aggregate: gate count mismatch");
  const std::size_t d = h.cols();
  const auto& off = g.offsets();
  const auto& src = g.sources();
  const auto w = edges.gates.values();
  const auto hv = h.values();

  // Per-slot coefficient c_s and per-node normalizer; m_v = sum_s c_s w_s h_u / z_v.
  std::vector<double> coef;
  std::vector<double> denom(n, 1.0);
  if (mode == Aggregation::gcn) {
    std::vector<double> din(n, 0.0), dout(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t s = off[v]; s < off[v + 1]; ++s) {
        din[v] += w[s];
        dout[src[s]] += w[s];
      }
    }
    coef.resize(g.num_directed());
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t s = off[v]; s < off[v + 1]; ++s) {
        coef[s] = 1.0 / std::sqrt((din[v] + 1.0) * (dout[src[s]] + 1.0));
      }
    }
  } else if (mode == Aggregation::mean) {
    for (std::size_t v = 0; v < n; ++v) {
      double total = 0.0;
      for (std::size_t s = off[v]; s < off[v + 1]; ++s) total += w[s];
      denom[v] = total;
    }
  }

  std::vector<double> out(n * d, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    double* mv = out.data() + v * d;
    for (std::size_t s = off[v]; s < off[v + 1]; ++s) {
      const double ws = coef.empty() ? w[s] : w[s] * coef[s];
      if (ws == 0.0) continue;
      const double* hu = hv.data() + src[s] * d;
      for (std::size_t j = 0; j < d; ++j) mv[j] += ws * hu[j];
    }
    if (mode == Aggregation::mean) {
      if (denom[v] != 0.0) {
        for (std::size_t j = 0; j < d; ++j) mv[j] /= denom[v];
      } else {
        std::fill(mv, mv + d, 0.0);
      }
    }
  }

  const Graph* gp = &g;
  return detail::make_op(
      {n, d}, std::move(out), {edges.gates, h},
      [gp, mode, d, coef = std::move(coef), denom = std::move(denom)](detail::Node& self) {
        detail::Node& pw = *self.parents[0];
        detail::Node& ph = *self.parents[1];
        const auto& off = gp->offsets();
        const auto& src = gp->sources();
        std::vector<double>* dw = pw.tracked ? &pw.grad_buffer() : nullptr;
        std::vector<double>* dh = ph.tracked ? &ph.grad_buffer() : nullptr;
        for (std::size_t v = 0; v < gp->num_nodes(); ++v) {
          const double* gm = self.grad.data() + v * d;
          const double* mv = self.value.data() + v * d;
          const bool empty_mean = mode == Aggregation::mean && denom[v] == 0.0;
          const double z = (mode == Aggregation::mean && !empty_mean) ? denom[v] : 1.0;
          for (std::size_t s = off[v]; s < off[v + 1]; ++s) {
            const double* hu = ph.value.data() + src[s] * d;
            const double c = coef.empty() ? 1.0 : coef[s];
            if (dw) {
              double acc = 0.0;
              if (mode == Aggregation::mean && !empty_mean) {
                for (std::size_t j = 0; j < d; ++j) acc += gm[j] * (hu[j] - mv[j]);
              } else {
                for (std::size_t j = 0; j < d; ++j) acc += gm[j] * hu[j];
              }
              (*dw)[s] += acc * c / z;
            }
            if (dh && !empty_mean) {
              const double k = pw.value[s] * c / z;
              if (k != 0.0) {
                double* du = dh->data() + src[s] * d;
                for (std::size_t j = 0; j < d; ++j) du[j] += k * gm[j];
              }
            }
          }
        }
      });
}

/// Ungated neighborhood aggregation over the undirected graph: the reference
/// plain-MPNN path, written independently of gated_aggregate.
inline Tensor neighbor_aggregate(Aggregation mode, const Graph& g, const Tensor& h) {
  const std::size_t n = g.num_nodes();
  if (h.rank() != 2 || h.rows() != n) {
    throw SizeError("neighbor_aggregate: expected " + std::to_string(n) + " rows, got " +
                    shape_str(h.shape()));
  }
  const std::size_t d = h.cols();
  const auto hv = h.values();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    const auto nb = g.neighbors(v);
    double* mv = out.data() + v * d;
    for (std::size_t u : nb) {
      const double c =
          mode == Aggregation::gcn
              ? 1.0 / std::sqrt((static_cast<double>(nb.size()) + 1.0) * (static_cast<double>(g.degree(u)) + 1.0))
              : 1.0;
      for (std::size_t j = 0; j < d; ++j) mv[j] += c * hv[u * d + j];
    }
    if (mode == Aggregation::mean && !nb.empty()) {
      const double deg = static_cast<double>(nb.size());
      for (std::size_t j = 0; j < d; ++j) mv[j] /= deg;
    }
  }
  const Graph* gp = &g;
  return detail::make_op({n, d}, std::move(out), {h}, [gp, mode, d](detail::Node& self) {
    auto& dh = self.parents[0]->grad_buffer();
    for (std::size_t v = 0; v < gp->num_nodes(); ++v) {
      const auto nb = gp->neighbors(v);
      for (std::size_t u : nb) {
        double c = 1.0;
        if (mode == Aggregation::mean) c = 1.0 / static_cast<double>(nb.size());
        if (mode == Aggregation::gcn) {
          c = 1.0 / std::sqrt((static_cast<double>(nb.size()) + 1.0) *
                              (static_cast<double>(gp->degree(u)) + 1.0));
        }
        for (std::size_t j = 0; j < d; ++j) dh[u * d + j] += c * self.grad[v * d + j];
      }
    }
  });
}

}  // namespace cognn
