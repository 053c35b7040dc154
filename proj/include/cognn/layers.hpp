#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cognn/graph.hpp"
#include "cognn/ops.hpp"
#include "cognn/optim.hpp"
#include "cognn/random.hpp"

namespace cognn {

/// Basic message-passing layer sigma(H W_s + agg(H) W_n + b).
struct GnnLayerParams {
  Tensor w_self;   // d_in x d_out
  Tensor w_neigh;  // d_in x d_out
  Tensor bias;     // d_out
  Activation act = Activation::relu;
  Aggregation agg = Aggregation::sum;

  std::size_t in_dim() const { return w_self.rows(); }
  std::size_t out_dim() const { return w_self.cols(); }

  static GnnLayerParams init(std::size_t in, std::size_t out, Activation act, Aggregation agg,
                             Rng& rng) {
    GnnLayerParams p;
    p.w_self = glorot_uniform_init(in, out, rng);
    p.w_neigh = glorot_uniform_init(in, out, rng);
    p.bias = Tensor::zeros({out}, true);
    p.act = act;
    p.agg = agg;
    return p;
  }

  void validate() const {
    if (w_self.shape() != w_neigh.shape()) throw SizeError("gnn layer: W_s and W_n shapes differ");
    if (bias.numel() != out_dim()) throw SizeError("gnn layer: bias length differs from output dim");
  }
};

namespace detail {

inline void check_layer_input(const GnnLayerParams& p, const Tensor& h) {
  p.validate();
  if (h.cols() != p.in_dim()) {
    throw SizeError("gnn layer: input has " + std::to_string(h.cols()) + " columns, layer expects " +
                    std::to_string(p.in_dim()));
  }
}

inline Tensor combine(const GnnLayerParams& p, const Tensor& h, const Tensor& m) {
  return activation(p.act, add(add(matmul(h, p.w_self), matmul(m, p.w_neigh)), p.bias));
}

}  // namespace detail

/// One layer over gated directed edges.
inline Tensor gnn_layer_forward(const GnnLayerParams& p, const Tensor& h, const DirectedEdgeSet& edges) {
  detail::check_layer_input(p, h);
  return detail::combine(p, h, gated_aggregate(p.agg, edges, h));
}

/// One layer of plain message passing over every undirected edge of g.
inline Tensor mpnn_layer_forward(const GnnLayerParams& p, const Tensor& h, const Graph& g) {
  detail::check_layer_input(p, h);
  return detail::combine(p, h, neighbor_aggregate(p.agg, g, h));
}

struct LinearParams {
  Tensor weight;  // d_in x d_out
  Tensor bias;    // d_out

  static LinearParams init(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    LinearParams p;
    p.weight = glorot_uniform_init(in, out, rng);
    if (with_bias) p.bias = Tensor::zeros({out}, true);
    return p;
  }

  bool has_bias() const { return bias.numel() > 0; }
};

inline Tensor linear_forward(const LinearParams& p, const Tensor& x) {
  Tensor y = matmul(x, p.weight);
  return p.has_bias() ? add(y, p.bias) : y;
}

/// Affine layers with `act` between them; the last layer is linear.
struct MlpParams {
  std::vector<LinearParams> layers;
  Activation act = Activation::relu;

  /// dims = {d_in, hidden..., d_out}.
  static MlpParams init(std::span<const std::size_t> dims, Activation act, Rng& rng) {
    if (dims.size() < 2) throw ConfigError("mlp: need at least input and output dims");
    MlpParams p;
    p.act = act;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) p.layers.push_back(LinearParams::init(dims[i], dims[i + 1], rng));
    return p;
  }

  std::size_t in_dim() const { return layers.front().weight.rows(); }
  std::size_t out_dim() const { return layers.back().weight.cols(); }
};

inline Tensor mlp_forward(const MlpParams& p, const Tensor& x) {
  if (p.layers.empty()) return x;
  Tensor h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& layer = p.layers[i];
    if (h.cols() != layer.weight.rows()) {
      throw SizeError("mlp: layer " + std::to_string(i) + " expects " +
                      std::to_string(layer.weight.rows()) + " inputs, got " + std::to_string(h.cols()));
    }
    if (i > 0 && layer.weight.rows() != p.layers[i - 1].weight.cols()) {
      throw SizeError("mlp: layer dims do not chain");
    }
    h = linear_forward(layer, h);
    if (i + 1 < p.layers.size()) h = activation(p.act, h);
  }
  return h;
}

enum class Pooling { sum, mean };

inline Pooling pooling_from_string(const std::string& s) {
  if (s == "sum") return Pooling::sum;
  if (s == "mean") return Pooling::mean;
  throw ConfigError("unknown pooling '" + s + "'");
}

inline const char* to_string(Pooling p) { return p == Pooling::sum ? "sum" : "mean"; }

/// Per-graph reduction of node rows; graph_index must be sorted and
/// contiguous from 0.
inline Tensor pool(Pooling mode, const Tensor& h, std::span<const std::size_t> graph_index) {
  if (h.rank() != 2 || graph_index.size() != h.rows()) {
    throw SizeError("pool: " + std::to_string(graph_index.size()) + " graph ids for " +
                    shape_str(h.shape()));
  }
  std::size_t num_graphs = 0;
  for (std::size_t i = 0; i < graph_index.size(); ++i) {
    const std::size_t gi = graph_index[i];
    if (gi != num_graphs && gi + 1 != num_graphs) {
      throw SizeError("pool: graph ids must be sorted and contiguous");
    }
    if (gi == num_graphs) ++num_graphs;
  }
  const std::size_t d = h.cols();
  std::vector<double> counts(num_graphs, 0.0);
  for (std::size_t gi : graph_index) counts[gi] += 1.0;
  std::vector<double> out(num_graphs * d, 0.0);
  const auto hv = h.values();
  for (std::size_t i = 0; i < graph_index.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out[graph_index[i] * d + j] += hv[i * d + j];
  }
  if (mode == Pooling::mean) {
    for (std::size_t gi = 0; gi < num_graphs; ++gi) {
      for (std::size_t j = 0; j < d; ++j) out[gi * d + j] /= counts[gi];
    }
  }
  std::vector<std::size_t> ids(graph_index.begin(), graph_index.end());
  return detail::make_op({num_graphs, d}, std::move(out), {h},
                         [mode, d, ids = std::move(ids), counts = std::move(counts)](detail::Node& self) {
                           auto& g = self.parents[0]->grad_buffer();
                           for (std::size_t i = 0; i < ids.size(); ++i) {
                             const double c = mode == Pooling::mean ? 1.0 / counts[ids[i]] : 1.0;
                             for (std::size_t j = 0; j < d; ++j) g[i * d + j] += c * self.grad[ids[i] * d + j];
                           }
                         });
}

}  // namespace cognn
