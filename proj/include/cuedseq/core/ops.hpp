#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cuedseq/core/tensor.hpp"

namespace cuedseq {

namespace detail {

/// Wraps a freshly computed value as an op result. If a tape is active and any
/// input needs a gradient, the result joins the tape with `bw` as its
/// backward rule.
template <class Backward>
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   Backward&& bw) {
  Tensor out(std::move(value), std::move(shape));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool need = false;
  for (const auto& t : inputs) need = need || t.requires_grad();
  if (!need) return out;
  out.node().requires_grad = true;
  out.node().backward = std::forward<Backward>(bw);
  tape->push(out.node_ptr());
  return out;
}

template <class Backward>
Tensor make_result_n(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                     Backward&& bw) {
  Tensor out(std::move(value), std::move(shape));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool need = false;
  for (const auto& t : inputs) need = need || t.requires_grad();
  if (!need) return out;
  out.node().requires_grad = true;
  out.node().backward = std::forward<Backward>(bw);
  tape->push(out.node_ptr());
  return out;
}

/// Gradient buffer of `t` if it participates in differentiation, else null.
inline double* grad_of(const Tensor& t) {
  return t.requires_grad() ? t.node().grad_buffer().data() : nullptr;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
}

inline void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                                shape_str(a.shape()));
  }
}

template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx_from_xy) {
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(a.shape(), std::move(y), {a}, [a, dfdx_from_xy](const Node& self) {
    if (double* ga = grad_of(a)) {
      const auto x = a.data();
      for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * dfdx_from_xy(x[i], self.value[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(y), {a, b}, [a, b](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(y), {a, b}, [a, b](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(y), {a, b}, [a, b](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * b[i];
    if (double* gb = detail::grad_of(b))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * a[i];
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

/// relu'(0) is taken as 0.
inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        // split by sign so exp never overflows
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

enum class ElementwiseOp { add, mul, relu, sigmoid, tanh, scale };

/// Dispatches by kind. Binary kinds use both tensors; `scale` uses `factor`.
inline Tensor elementwise(ElementwiseOp kind, const Tensor& a, const Tensor* b = nullptr, double factor = 1.0) {
  auto second = [&]() -> const Tensor& {
    if (b == nullptr) throw std::invalid_argument("elementwise: binary op needs two operands");
    return *b;
  };
  switch (kind) {
    case ElementwiseOp::add: return add(a, second());
    case ElementwiseOp::mul: return mul(a, second());
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::sigmoid: return sigmoid(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::scale: return scale(a, factor);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result({}, {s}, {a}, [a](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> y(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(y), {a}, [a](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = a[i * n + j];
  return detail::make_result({n, m}, std::move(y), {a}, [a, m, n](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

/// Rows [start, start+len) of a 2-D tensor.
inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len) {
  detail::require_rank(a, 2, "slice_rows");
  const std::size_t n = a.dim(1);
  if (len == 0 || start + len > a.dim(0)) throw std::invalid_argument("slice_rows: range out of bounds");
  std::vector<double> y(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                        a.data().begin() + static_cast<std::ptrdiff_t>((start + len) * n));
  return detail::make_result({len, n}, std::move(y), {a}, [a, start, n](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[start * n + i] += self.grad[i];
  });
}

/// Columns [start, start+len) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len) {
  detail::require_rank(a, 2, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (len == 0 || start + len > n) throw std::invalid_argument("slice_cols: range out of bounds");
  std::vector<double> y(m * len);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < len; ++j) y[i * len + j] = a[i * n + start + j];
  return detail::make_result({m, len}, std::move(y), {a}, [a, start, m, n, len](const detail::Node& self) {
    if (double* ga = detail::grad_of(a))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j) ga[i * n + start + j] += self.grad[i * len + j];
  });
}

/// Concatenates 2-D tensors with equal row counts along the columns.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t m = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw std::invalid_argument("concat_cols: row count mismatch");
    n += p.dim(1);
  }
  std::vector<double> y(m * n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) y[i * n + off + j] = p[i * w + j];
    off += w;
  }
  return detail::make_result_n({m, n}, std::move(y), parts, [parts, m, n](const detail::Node& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      if (double* gp = detail::grad_of(p))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += self.grad[i * n + off + j];
      off += w;
    }
  });
}

/// Stacks tensors holding n values each into an [m, n] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  const std::size_t n = rows.front().numel();
  std::vector<double> y;
  y.reserve(rows.size() * n);
  for (const auto& r : rows) {
    if (r.numel() != n) throw std::invalid_argument("stack_rows: row length mismatch");
    y.insert(y.end(), r.data().begin(), r.data().end());
  }
  return detail::make_result_n({rows.size(), n}, std::move(y), rows, [rows, n](const detail::Node& self) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (double* g = detail::grad_of(rows[r]))
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  std::vector<double> y(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* yr = y.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* br = B + p * n;
      for (std::size_t j = 0; j < n; ++j) yr[j] += aip * br[j];
    }
  }
  return detail::make_result({m, n}, std::move(y), {a, b}, [a, b, m, k, n](const detail::Node& self) {
    const double* G = self.grad.data();
    if (double* ga = detail::grad_of(a)) {
      // dA = G Bᵀ
      const double* B = b.data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* gr = G + i * n;
          const double* br = B + p * n;
          for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
          ga[i * k + p] += s;
        }
    }
    if (double* gb = detail::grad_of(b)) {
      // dB = Aᵀ G
      const double* A = a.data().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          const double* gr = G + i * n;
          double* gbr = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbr[j] += aip * gr[j];
        }
    }
  });
}

/// x[m, n] + bias[n], bias broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 2, "add_row");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) throw std::invalid_argument("add_row: bias length does not match columns");
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] + bias[j];
  return detail::make_result({m, n}, std::move(y), {x, bias}, [x, bias, m, n](const detail::Node& self) {
    if (double* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < m * n; ++i) gx[i] += self.grad[i];
    if (double* gb = detail::grad_of(bias))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
  });
}

/// x·W + b for x[m, k], W[k, n], b[n].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_row(matmul(x, w), b); }

// ---------------------------------------------------------------------------
// Row-wise normalizers and losses

/// Numerically stable row softmax (per-row max subtracted).
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data().data() + i * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[i * n + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= z;
  }
  return detail::make_result({m, n}, std::move(y), {x}, [x, m, n](const detail::Node& self) {
    if (double* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
      }
  });
}

inline Tensor log_softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "log_softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data().data() + i * n;
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xr[j] - lse;
  }
  return detail::make_result({m, n}, std::move(y), {x}, [x, m, n](const detail::Node& self) {
    if (double* gx = detail::grad_of(x))
      for (std::size_t i = 0; i < m; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += self.grad[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * gs;
      }
  });
}

/// Mean over rows of −log softmax(logits)[row, target[row]].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  detail::require_rank(logits, 2, "cross_entropy");
  const std::size_t m = logits.dim(0), k = logits.dim(1);
  if (targets.size() != m) throw std::invalid_argument("cross_entropy: one target per row required");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= k)
      throw std::invalid_argument("cross_entropy: target " + std::to_string(t) + " outside [0," +
                                  std::to_string(k) + ")");
  std::vector<double> probs(m * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = logits.data().data() + i * k;
    const double mx = *std::max_element(xr, xr + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(xr[j] - lse);
    loss += lse - xr[targets[i]];
  }
  loss /= static_cast<double>(m);
  return detail::make_result({}, {loss}, {logits},
                             [logits, targets, probs = std::move(probs), m, k](const detail::Node& self) {
                               if (double* g = detail::grad_of(logits)) {
                                 const double s = self.grad[0] / static_cast<double>(m);
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < k; ++j)
                                     g[i * k + j] += s * (probs[i * k + j] - (static_cast<int>(j) == targets[i]));
                               }
                             });
}

/// Scales every row to unit Euclidean norm. Zero rows are rejected.
inline Tensor normalize_rows(const Tensor& x) {
  detail::require_rank(x, 2, "normalize_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> y(m * n), norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += x[i * n + j] * x[i * n + j];
    if (!(s > 0.0)) throw std::invalid_argument("normalize_rows: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] / norms[i];
  }
  return detail::make_result({m, n}, std::move(y), {x},
                             [x, norms = std::move(norms), m, n](const detail::Node& self) {
                               if (double* gx = detail::grad_of(x))
                                 for (std::size_t i = 0; i < m; ++i) {
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < n; ++j)
                                     dot += self.grad[i * n + j] * self.value[i * n + j];
                                   for (std::size_t j = 0; j < n; ++j)
                                     gx[i * n + j] += (self.grad[i * n + j] - self.value[i * n + j] * dot) / norms[i];
                                 }
                             });
}

/// Per-row layer normalization with learnable gain and shift of length n.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.numel() != n || shift.numel() != n) throw std::invalid_argument("layer_norm_rows: parameter length");
  std::vector<double> y(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xr[j] - mu) * inv_std[i];
      y[i * n + j] = xhat[i * n + j] * gain[j] + shift[j];
    }
  }
  return detail::make_result(
      {m, n}, std::move(y), {x, gain, shift},
      [x, gain, shift, xhat = std::move(xhat), inv_std = std::move(inv_std), m, n](const detail::Node& self) {
        const double* G = self.grad.data();
        if (double* gg = detail::grad_of(gain))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += G[i * n + j] * xhat[i * n + j];
        if (double* gs = detail::grad_of(shift))
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gs[j] += G[i * n + j];
        if (double* gx = detail::grad_of(x)) {
          const double dn = static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = G[i * n + j] * gain[j];
              mean_g += gh;
              mean_gx += gh * xhat[i * n + j];
            }
            mean_g /= dn;
            mean_gx /= dn;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = G[i * n + j] * gain[j];
              gx[i * n + j] += inv_std[i] * (gh - mean_g - xhat[i * n + j] * mean_gx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Image ops

namespace detail {

struct ConvGeometry {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, ho, wo;

  // Output columns ox for which input column ox*stride + kx - pad is inside [0, w).
  std::pair<std::size_t, std::size_t> valid_cols(std::size_t kx) const {
    return valid_range(kx, w, wo);
  }
  std::pair<std::size_t, std::size_t> valid_rows(std::size_t ky) const {
    return valid_range(ky, h, ho);
  }

 private:
  std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t extent, std::size_t out) const {
    // o*stride + k - pad >= 0  and  o*stride + k - pad <= extent - 1
    const long long s = static_cast<long long>(stride);
    const long long off = static_cast<long long>(k) - static_cast<long long>(pad);
    long long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long long hi = (static_cast<long long>(extent) - 1 - off);
    hi = hi < 0 ? -1 : hi / s;
    hi = std::min<long long>(hi, static_cast<long long>(out) - 1);
    if (hi < lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
  }
};

}  // namespace detail

/// 2-D cross-correlation: input [Cin,H,W], kernels [Cout,Cin,kh,kw], zero
/// padding, no bias. Output [Cout, H', W'] with H' = (H+2p-kh)/stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding) {
  detail::require_rank(input, 3, "conv2d input");
  detail::require_rank(kernels, 4, "conv2d kernels");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  detail::ConvGeometry g{};
  g.cin = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.cout = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  g.stride = stride;
  g.pad = padding;
  if (kernels.dim(1) != g.cin) throw std::invalid_argument("conv2d: kernel input channels do not match input");
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + shape_str(kernels.shape()) + " larger than padded input " +
                                shape_str(input.shape()));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;

  std::vector<double> y(g.cout * g.ho * g.wo, 0.0);
  const double* X = input.data().data();
  const double* K = kernels.data().data();
  for (std::size_t co = 0; co < g.cout; ++co) {
    double* yc = y.data() + co * g.ho * g.wo;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      const double* xc = X + ci * g.h * g.w;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto [oy0, oy1] = g.valid_rows(ky);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double kv = K[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
          if (kv == 0.0) continue;
          const auto [ox0, ox1] = g.valid_cols(kx);
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const double* xr = xc + (oy * stride + ky - padding) * g.w + kx - padding;
            double* yr = yc + oy * g.wo;
            if (stride == 1) {
              for (std::size_t ox = ox0; ox < ox1; ++ox) yr[ox] += kv * xr[ox];
            } else {
              for (std::size_t ox = ox0; ox < ox1; ++ox) yr[ox] += kv * xr[ox * stride];
            }
          }
        }
      }
    }
  }
  return detail::make_result({g.cout, g.ho, g.wo}, std::move(y), {input, kernels},
                             [input, kernels, g](const detail::Node& self) {
                               const double* G = self.grad.data();
                               double* gx = detail::grad_of(input);
                               double* gk = detail::grad_of(kernels);
                               const double* X = input.data().data();
                               const double* K = kernels.data().data();
                               for (std::size_t co = 0; co < g.cout; ++co) {
                                 const double* gc = G + co * g.ho * g.wo;
                                 for (std::size_t ci = 0; ci < g.cin; ++ci) {
                                   const double* xc = X + ci * g.h * g.w;
                                   for (std::size_t ky = 0; ky < g.kh; ++ky) {
                                     const auto [oy0, oy1] = g.valid_rows(ky);
                                     for (std::size_t kx = 0; kx < g.kw; ++kx) {
                                       const std::size_t kidx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                                       const auto [ox0, ox1] = g.valid_cols(kx);
                                       const double kv = K[kidx];
                                       double acc = 0.0;
                                       for (std::size_t oy = oy0; oy < oy1; ++oy) {
                                         const std::size_t base = (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
                                         const double* gr = gc + oy * g.wo;
                                         for (std::size_t ox = ox0; ox < ox1; ++ox) {
                                           const std::size_t xi = base + ox * g.stride;
                                           acc += gr[ox] * xc[xi];
                                           if (gx) gx[ci * g.h * g.w + xi] += gr[ox] * kv;
                                         }
                                       }
                                       if (gk) gk[kidx] += acc;
                                     }
                                   }
                                 }
                               }
                             });
}

/// y[c,:,:] = x[c,:,:] * scale[c] + shift[c] for x [C,H,W].
inline Tensor channel_affine(const Tensor& x, const Tensor& scale_c, const Tensor& shift_c) {
  detail::require_rank(x, 3, "channel_affine");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (scale_c.numel() != c || shift_c.numel() != c) throw std::invalid_argument("channel_affine: parameter length");
  std::vector<double> y(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) y[ch * hw + i] = x[ch * hw + i] * scale_c[ch] + shift_c[ch];
  return detail::make_result(x.shape(), std::move(y), {x, scale_c, shift_c},
                             [x, scale_c, shift_c, c, hw](const detail::Node& self) {
                               double* gx = detail::grad_of(x);
                               double* gs = detail::grad_of(scale_c);
                               double* gb = detail::grad_of(shift_c);
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                 double as = 0.0, ab = 0.0;
                                 for (std::size_t i = 0; i < hw; ++i) {
                                   const double gv = self.grad[ch * hw + i];
                                   if (gx) gx[ch * hw + i] += gv * scale_c[ch];
                                   as += gv * x[ch * hw + i];
                                   ab += gv;
                                 }
                                 if (gs) gs[ch] += as;
                                 if (gb) gb[ch] += ab;
                               }
                             });
}

/// [C,H,W] -> [C], mean over the spatial positions.
inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_rank(x, 3, "global_avg_pool");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  std::vector<double> y(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) y[ch] += x[ch * hw + i];
    y[ch] /= static_cast<double>(hw);
  }
  return detail::make_result({c}, std::move(y), {x}, [x, c, hw](const detail::Node& self) {
    if (double* gx = detail::grad_of(x))
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) gx[ch * hw + i] += self.grad[ch] / static_cast<double>(hw);
  });
}

}  // namespace cuedseq
