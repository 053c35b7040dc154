#pragma once

// Differentiable tensor ops. Matrix-shaped ops view a tensor as
// rows() x cols(), so rank-1 tensors act as a single row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cognn/random.hpp"
#include "cognn/tensor.hpp"

namespace cognn {

enum class Activation { identity, relu, gelu, softplus, tanh };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::softplus: return "softplus";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity" || s == "none") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  if (s == "softplus") return Activation::softplus;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() > 2) {
    throw SizeError(std::string(op) + ": expected rank <= 2, got " + shape_str(t.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B[k x n]^T, via an explicit transpose of B so the
// inner loop is a contiguous axpy.
inline void gemm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
                    std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_nn(a, bt.data(), c, m, n, k);
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ra, ca, rb, cb;
  Shape shape;
};

inline Broadcast broadcast_shapes(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) {
    return {a.rows(), a.cols(), a.rows(), a.cols(), b.rows(), b.cols(), a.shape()};
  }
  require_matrix(a, op);
  require_matrix(b, op);
  Broadcast bc{std::max(a.rows(), b.rows()), std::max(a.cols(), b.cols()),
               a.rows(), a.cols(), b.rows(), b.cols(), {}};
  auto ok = [](std::size_t d, std::size_t out) { return d == out || d == 1; };
  if (!ok(bc.ra, bc.rows) || !ok(bc.rb, bc.rows) || !ok(bc.ca, bc.cols) || !ok(bc.cb, bc.cols)) {
    throw SizeError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                    shape_str(b.shape()));
  }
  if (a.rows() == bc.rows && a.cols() == bc.cols) {
    bc.shape = a.shape();
  } else if (b.rows() == bc.rows && b.cols() == bc.cols) {
    bc.shape = b.shape();
  } else {
    bc.shape = {bc.rows, bc.cols};
  }
  return bc;
}

enum class Binary { add, sub, mul };

inline Tensor binary(Binary kind, const Tensor& a, const Tensor& b, const char* name) {
  const Broadcast bc = broadcast_shapes(a, b, name);
  std::vector<double> out(bc.rows * bc.cols);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < bc.rows; ++i) {
    const std::size_t ia = (bc.ra == 1 ? 0 : i) * bc.ca;
    const std::size_t ib = (bc.rb == 1 ? 0 : i) * bc.cb;
    for (std::size_t j = 0; j < bc.cols; ++j) {
      const double x = av[ia + (bc.ca == 1 ? 0 : j)];
      const double y = bv[ib + (bc.cb == 1 ? 0 : j)];
      double r = 0.0;
      switch (kind) {
        case Binary::add: r = x + y; break;
        case Binary::sub: r = x - y; break;
        case Binary::mul: r = x * y; break;
      }
      out[i * bc.cols + j] = r;
    }
  }
  return make_op(bc.shape, std::move(out), {a, b}, [kind, bc](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const bool ga = pa.tracked, gb = pb.tracked;
    std::vector<double>* da = ga ? &pa.grad_buffer() : nullptr;
    std::vector<double>* db = gb ? &pb.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < bc.rows; ++i) {
      const std::size_t ia = (bc.ra == 1 ? 0 : i) * bc.ca;
      const std::size_t ib = (bc.rb == 1 ? 0 : i) * bc.cb;
      for (std::size_t j = 0; j < bc.cols; ++j) {
        const std::size_t xa = ia + (bc.ca == 1 ? 0 : j);
        const std::size_t xb = ib + (bc.cb == 1 ? 0 : j);
        const double g = self.grad[i * bc.cols + j];
        switch (kind) {
          case Binary::add:
            if (ga) (*da)[xa] += g;
            if (gb) (*db)[xb] += g;
            break;
          case Binary::sub:
            if (ga) (*da)[xa] += g;
            if (gb) (*db)[xb] -= g;
            break;
          case Binary::mul:
            if (ga) (*da)[xa] += g * pb.value[xb];
            if (gb) (*db)[xb] += g * pa.value[xa];
            break;
        }
      }
    }
  });
}

template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_op(x.shape(), std::move(out), {x}, [df](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

inline double softplus_value(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Axis decomposition of a tensor shape: outer x len x inner.
struct AxisView {
  std::size_t outer, len, inner;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw SizeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  }
  AxisView v{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace detail

inline Tensor tensor_from(Shape shape, std::vector<double> values, bool tracked = false) {
  return Tensor::from(std::move(shape), std::move(values), tracked);
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw SizeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                    shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return detail::make_op({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    if (pa.tracked) detail::gemm_nt(self.grad.data(), pb.value.data(), pa.grad_buffer().data(), m, n, k);
    if (pb.tracked) detail::gemm_tn(pa.value.data(), self.grad.data(), pb.grad_buffer().data(), m, k, n);
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::Binary::add, a, b, "add");
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::Binary::sub, a, b, "sub");
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(detail::Binary::mul, a, b, "mul");
}

inline Tensor scale(const Tensor& x, double s) {
  return detail::unary(
      x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Exact GELU, x * Phi(x).
inline Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

/// log(1 + exp(x)); returns x itself above 30.
inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x, detail::softplus_value,
      [](double v, double) { return v > 30.0 ? 1.0 : detail::sigmoid(v); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// 1 / x.
inline Tensor reciprocal(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

inline Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::identity: return x;
    case Activation::relu: return relu(x);
    case Activation::gelu: return gelu(x);
    case Activation::softplus: return softplus(x);
    case Activation::tanh: return tanh(x);
  }
  return x;
}

/// Softmax along axis, shifted by the per-slice maximum.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto av = detail::axis_view(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < av.outer; ++o) {
    for (std::size_t in = 0; in < av.inner; ++in) {
      const std::size_t base = o * av.len * av.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < av.len; ++k) mx = std::max(mx, xv[base + k * av.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < av.len; ++k) {
        const double e = std::exp(xv[base + k * av.inner] - mx);
        out[base + k * av.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < av.len; ++k) out[base + k * av.inner] /= total;
    }
  }
  return detail::make_op(x.shape(), std::move(out), {x}, [av](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < av.outer; ++o) {
      for (std::size_t in = 0; in < av.inner; ++in) {
        const std::size_t base = o * av.len * av.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < av.len; ++k) {
          const std::size_t i = base + k * av.inner;
          dot += self.grad[i] * self.value[i];
        }
        for (std::size_t k = 0; k < av.len; ++k) {
          const std::size_t i = base + k * av.inner;
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto av = detail::axis_view(x.shape(), axis);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < av.outer; ++o) {
    for (std::size_t in = 0; in < av.inner; ++in) {
      const std::size_t base = o * av.len * av.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < av.len; ++k) mx = std::max(mx, xv[base + k * av.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < av.len; ++k) total += std::exp(xv[base + k * av.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t k = 0; k < av.len; ++k) out[base + k * av.inner] = xv[base + k * av.inner] - lse;
    }
  }
  return detail::make_op(x.shape(), std::move(out), {x}, [av](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < av.outer; ++o) {
      for (std::size_t in = 0; in < av.inner; ++in) {
        const std::size_t base = o * av.len * av.inner + in;
        double total = 0.0;
        for (std::size_t k = 0; k < av.len; ++k) total += self.grad[base + k * av.inner];
        for (std::size_t k = 0; k < av.len; ++k) {
          const std::size_t i = base + k * av.inner;
          g[i] += self.grad[i] - std::exp(self.value[i]) * total;
        }
      }
    }
  });
}

/// Inverted dropout. Identity when not training or when rate is 0.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

inline Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  double total = 0.0;
  for (double v : xv) total += v;
  return detail::make_op({1}, {total}, {x}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw SizeError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// Row gather: out[i, :] = x[index[i], :].
inline Tensor index_rows(const Tensor& x, std::vector<std::size_t> index) {
  detail::require_matrix(x, "index_rows");
  const std::size_t c = x.cols();
  const auto xv = x.values();
  std::vector<double> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows()) throw SizeError("index_rows: row index out of range");
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(index[i] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  const std::size_t n = index.size();
  return detail::make_op({n, c}, std::move(out), {x}, [index = std::move(index), c](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) g[index[i] * c + j] += self.grad[i * c + j];
    }
  });
}

/// out[i] = x[i, column[i]].
inline Tensor select_per_row(const Tensor& x, std::vector<std::size_t> column) {
  detail::require_matrix(x, "select_per_row");
  if (column.size() != x.rows()) throw SizeError("select_per_row: one column index per row required");
  const std::size_t c = x.cols();
  std::vector<double> out(column.size());
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (column[i] >= c) throw SizeError("select_per_row: column out of range");
    out[i] = x.values()[i * c + column[i]];
  }
  const std::size_t n = column.size();
  return detail::make_op({n}, std::move(out), {x}, [column = std::move(column), c](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < column.size(); ++i) g[i * c + column[i]] += self.grad[i];
  });
}

/// Forward value is `hard`; the backward pass treats the op as the identity
/// on `soft`.
inline Tensor straight_through(const Tensor& soft, std::vector<double> hard) {
  if (hard.size() != soft.numel()) throw SizeError("straight_through: value count mismatch");
  return detail::make_op(soft.shape(), std::move(hard), {soft}, [](detail::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Mean absolute error over every entry.
inline Tensor l1_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) {
    throw SizeError("l1_loss: " + shape_str(prediction.shape()) + " vs " + shape_str(target.shape()));
  }
  return mean(abs(sub(prediction, target)));
}

/// Mean negative log-likelihood of integer labels under row-wise softmax.
inline Tensor cross_entropy(const Tensor& logits, std::vector<std::size_t> labels) {
  return scale(mean(select_per_row(log_softmax(logits, logits.rank() - 1), std::move(labels))), -1.0);
}

}  // namespace cognn
