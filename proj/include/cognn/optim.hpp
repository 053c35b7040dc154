#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cognn/random.hpp"
#include "cognn/tensor.hpp"

namespace cognn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for a fixed, ordered parameter list.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

/// One bias-corrected Adam update applied in place to `params`.
/// Accumulators are sized on the first call and must keep matching shapes.
inline void adam_step(std::span<Tensor> params, const Gradients& grads, AdamState& state) {
  if (state.step == 0 && state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw SizeError("adam_step: optimizer tracks " + std::to_string(state.m.size()) +
                    " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel()) {
      throw SizeError("adam_step: accumulator shape mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads.view(params[i]);
    if (g.empty()) continue;  // unreached: zero gradient
    auto w = params[i].mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

/// fan_in x fan_out matrix with entries uniform in +-sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform_init(std::size_t fan_in, std::size_t fan_out, Rng& rng,
                                  bool tracked = true) {
  if (fan_in == 0 || fan_out == 0) throw ParameterError("glorot_uniform_init: fans must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& x : w) x = rng.uniform(-bound, bound);
  return Tensor::from({fan_in, fan_out}, std::move(w), tracked);
}

}  // namespace cognn
