// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "svrecon/autodiff.hpp"

// Differentiable operators. Each op computes its value eagerly, records it on
// the tape of its operands and registers the matching backward rule.
// Shapes must match exactly; the only broadcast is a scalar factor (scale) and
// the bias row of linear().

namespace svrecon::ops {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using MatMap = Eigen::Map<RowMatrix>;

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

inline void require_rank2(const Var& a, const char* op) {
  if (a.shape().size() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

enum class Elementwise { relu, tanh, sigmoid, exp, add, mul, scale };

inline Var add(Var a, Var b) {
  Tape& tape = svrecon::detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  return tape.record("add", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    const auto& g = t.grad(self);
    for (int in : {ia, ib})
      if (double* d = t.grad_if_needed(in))
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

inline Var sub(Var a, Var b) {
  Tape& tape = svrecon::detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
  return tape.record("sub", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_if_needed(ia))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    if (double* d = t.grad_if_needed(ib))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
  });
}

inline Var mul(Var a, Var b) {
  Tape& tape = svrecon::detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
  return tape.record("mul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, int self) {
    const auto& g = t.grad(self);
    const auto& av = t.value(ia).data;
    const auto& bv = t.value(ib).data;
    if (double* d = t.grad_if_needed(ia))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    if (double* d = t.grad_if_needed(ib))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data) v *= s;
  return a.tape->record("scale", std::move(out), {a.id}, [ia = a.id, s](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_if_needed(ia))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g[i];
  });
}

namespace detail {

// Unary op whose derivative is expressible from (input, output).
template <class Fwd, class Deriv>
Var unary(Var a, std::string_view name, Fwd fwd, Deriv deriv) {
  Tensor out = a.value();
  for (double& v : out.data) v = fwd(v);
  return a.tape->record(name, std::move(out), {a.id}, [ia = a.id, deriv](Tape& t, int self) {
    double* d = t.grad_if_needed(ia);
    if (!d) return;
    const auto& g = t.grad(self);
    const auto& x = t.value(ia).data;
    const auto& y = t.value(self).data;
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * deriv(x[i], y[i]);
  });
}

inline double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

inline Var relu(Var a) {
  return detail::unary(
      a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(a, "sigmoid", detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// Single entry point over the elementwise kinds. `b` is ignored by unary
/// kinds; `factor` is used by `scale` only.
inline Var elementwise(Elementwise kind, Var a, Var b = {}, double factor = 1.0) {
  switch (kind) {
    case Elementwise::relu: return relu(a);
    case Elementwise::tanh: return ops::tanh(a);
    case Elementwise::sigmoid: return sigmoid(a);
    case Elementwise::exp: return ops::exp(a);
    case Elementwise::add: return add(a, b);
    case Elementwise::mul: return mul(a, b);
    case Elementwise::scale: return scale(a, factor);
  }
  throw Error("unknown elementwise kind");
}

// ---------------------------------------------------------------------------
// Reductions and reshapes

inline Var sum(Var a) {
  double s = 0;
  for (double v : a.value().data) s += v;
  return a.tape->record("sum", Tensor::scalar(s), {a.id}, [ia = a.id](Tape& t, int self) {
    const double g = t.grad(self)[0];
    if (double* d = t.grad_if_needed(ia))
      for (std::size_t i = 0, n = t.value(ia).numel(); i < n; ++i) d[i] += g;
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Tensor out(std::move(shape), a.value().data);
  return a.tape->record("reshape", std::move(out), {a.id}, [ia = a.id](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_if_needed(ia))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

inline Var concat_cols(Var a, Var b) {
  Tape& tape = svrecon::detail::same_tape(a, b);
  if (a.rows() != b.rows()) throw DimensionError("concat_cols: row counts differ");
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out(Shape{n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(&a.value().data[r * ca], ca, &out.data[r * (ca + cb)]);
    std::copy_n(&b.value().data[r * cb], cb, &out.data[r * (ca + cb) + ca]);
  }
  return tape.record("concat_cols", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, n, ca, cb](Tape& t, int self) {
    const auto& g = t.grad(self);
    if (double* d = t.grad_if_needed(ia))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < ca; ++c) d[r * ca + c] += g[r * (ca + cb) + c];
    if (double* d = t.grad_if_needed(ib))
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < cb; ++c) d[r * cb + c] += g[r * (ca + cb) + ca + c];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  Tape& tape = svrecon::detail::same_tape(a, b);
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor out(Shape{m, n});
  MatMap(out.data.data(), m, n).noalias() = ConstMatMap(a.value().data.data(), m, k) * ConstMatMap(b.value().data.data(), k, n);
  return tape.record("matmul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, k, n](Tape& t, int self) {
    ConstMatMap g(t.grad(self).data(), m, n);
    if (double* d = t.grad_if_needed(ia)) MatMap(d, m, k).noalias() += g * ConstMatMap(t.value(ib).data.data(), k, n).transpose();
    if (double* d = t.grad_if_needed(ib)) MatMap(d, k, n).noalias() += ConstMatMap(t.value(ia).data.data(), m, k).transpose() * g;
  });
}

/// x[n×in] · W[in×out] + bias[out] (bias added to every row).
inline Var linear(Var x, Var w, Var bias) {
  Tape& tape = svrecon::detail::same_tape(x, w);
  svrecon::detail::same_tape(x, bias);
  detail::require_rank2(w, "linear");
  const std::size_t n = x.rows(), in = x.cols(), outc = w.shape()[1];
  if (w.shape()[0] != in) throw DimensionError("linear: input width " + std::to_string(in) + " vs weight " + shape_string(w.shape()));
  if (bias.numel() != outc) throw DimensionError("linear: bias length mismatch");
  Tensor out(Shape{n, outc});
  MatMap y(out.data.data(), n, outc);
  y.noalias() = ConstMatMap(x.value().data.data(), n, in) * ConstMatMap(w.value().data.data(), in, outc);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data.data(), outc);
  return tape.record("linear", std::move(out), {x.id, w.id, bias.id},
                     [ix = x.id, iw = w.id, ib = bias.id, n, in, outc](Tape& t, int self) {
                       ConstMatMap g(t.grad(self).data(), n, outc);
                       if (double* d = t.grad_if_needed(ix))
                         MatMap(d, n, in).noalias() += g * ConstMatMap(t.value(iw).data.data(), in, outc).transpose();
                       if (double* d = t.grad_if_needed(iw))
                         MatMap(d, in, outc).noalias() += ConstMatMap(t.value(ix).data.data(), n, in).transpose() * g;
                       if (double* d = t.grad_if_needed(ib)) Eigen::Map<Eigen::RowVectorXd>(d, outc) += g.colwise().sum();
                     });
}

// ---------------------------------------------------------------------------
// Softmax / normalization

namespace detail {
inline Var softmax_impl(Var x, const std::vector<std::uint8_t>* mask) {
  const std::size_t n = x.cols(), rows = x.rows();
  if (n == 0) throw DimensionError("softmax over empty dimension");
  Tensor out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &in[r * n];
    double* yr = &out.data[r * n];
    auto live = [&](std::size_t j) { return mask == nullptr || (*mask)[r * n + j] == 0; };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (live(j)) mx = std::max(mx, xr[j]);
    if (!std::isfinite(mx)) throw NumericalError("softmax row has no unmasked entry");
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = live(j) ? std::exp(xr[j] - mx) : 0.0;
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  return x.tape->record(mask ? "masked_softmax" : "softmax", std::move(out), {x.id}, [ix = x.id, n, rows](Tape& t, int self) {
    double* d = t.grad_if_needed(ix);
    if (!d) return;
    const auto& g = t.grad(self);
    const auto& y = t.value(self).data;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) d[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}
}  // namespace detail

inline Var softmax_lastdim(Var x) { return detail::softmax_impl(x, nullptr); }

/// Softmax where entries with mask != 0 receive probability exactly 0.
inline Var masked_softmax_lastdim(Var x, const std::vector<std::uint8_t>& mask) {
  if (mask.size() != x.numel()) throw DimensionError("masked_softmax: mask size mismatch");
  return detail::softmax_impl(x, &mask);
}

inline constexpr double kLayerNormEps = 1e-5;

inline Var layer_norm(Var x, Var gain, Var bias) {
  Tape& tape = svrecon::detail::same_tape(x, gain);
  const std::size_t c = x.cols(), rows = x.rows();
  if (c < 2) throw DimensionError("layer_norm needs at least two channels");
  if (gain.numel() != c || bias.numel() != c) throw DimensionError("layer_norm: gain/bias length mismatch");
  Tensor out(x.shape());
  // normalized values and inverse std are kept for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.value().data;
  const auto& gv = gain.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * c];
    double mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * c + j] = h;
      out.data[r * c + j] = gv[j] * h + bv[j];
    }
  }
  return tape.record("layer_norm", std::move(out), {x.id, gain.id, bias.id},
                     [ix = x.id, ig = gain.id, ib = bias.id, c, rows, xhat, inv_std](Tape& t, int self) {
                       const auto& g = t.grad(self);
                       const auto& gv = t.value(ig).data;
                       if (double* d = t.grad_if_needed(ig))
                         for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i] * (*xhat)[i];
                       if (double* d = t.grad_if_needed(ib))
                         for (std::size_t i = 0; i < g.size(); ++i) d[i % c] += g[i];
                       double* d = t.grad_if_needed(ix);
                       if (!d) return;
                       std::vector<double> dh(c);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0, mean_dh_h = 0;
                         for (std::size_t j = 0; j < c; ++j) {
                           dh[j] = g[r * c + j] * gv[j];
                           mean_dh += dh[j];
                           mean_dh_h += dh[j] * (*xhat)[r * c + j];
                         }
                         mean_dh /= static_cast<double>(c);
                         mean_dh_h /= static_cast<double>(c);
                         for (std::size_t j = 0; j < c; ++j)
                           d[r * c + j] += (*inv_std)[r] * (dh[j] - mean_dh - (*xhat)[r * c + j] * mean_dh_h);
                       }
                     });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy on logits, log-sum-exp stable form.
inline Var bce_with_logits(Var logits, std::span<const double> targets) {
  const std::size_t n = logits.numel();
  if (n == 0) throw DimensionError("bce_with_logits on empty input");
  if (targets.size() != n) throw DimensionError("bce_with_logits: target count mismatch");
  for (double y : targets)
    if (y != 0.0 && y != 1.0) throw InputError("bce_with_logits: targets must be 0 or 1");
  const auto& z = logits.value().data;
  double total = 0;
  for (std::size_t i = 0; i < n; ++i)
    total += std::max(z[i], 0.0) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  auto y = std::make_shared<std::vector<double>>(targets.begin(), targets.end());
  return logits.tape->record("bce_with_logits", Tensor::scalar(total / static_cast<double>(n)), {logits.id},
                             [iz = logits.id, y, n](Tape& t, int self) {
                               double* d = t.grad_if_needed(iz);
                               if (!d) return;
                               const double g = t.grad(self)[0] / static_cast<double>(n);
                               const auto& z = t.value(iz).data;
                               for (std::size_t i = 0; i < n; ++i) d[i] += g * (detail::stable_sigmoid(z[i]) - (*y)[i]);
                             });
}

// ---------------------------------------------------------------------------
// Row gathers

/// out[i] = x[rows[i]]
inline Var gather_rows(Var x, std::vector<std::uint32_t> rows) {
  const std::size_t c = x.cols(), n_in = x.rows();
  if (rows.empty()) throw DimensionError("gather_rows with no rows");
  Tensor out(Shape{rows.size(), c});
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n_in) throw DimensionError("gather_rows: index out of range");
    std::copy_n(&xv[rows[i] * c], c, &out.data[i * c]);
  }
  auto idx = std::make_shared<std::vector<std::uint32_t>>(std::move(rows));
  return x.tape->record("gather_rows", std::move(out), {x.id}, [ix = x.id, idx, c](Tape& t, int self) {
    double* d = t.grad_if_needed(ix);
    if (!d) return;
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::size_t j = 0; j < c; ++j) d[(*idx)[i] * c + j] += g[i * c + j];
  });
}

/// Sparse row combination in CSR layout: out[i] = sum_e weight[e] * x[row[e]]
/// over e in [offsets[i], offsets[i+1]). Rows with no entries are zero.
struct RowCombination {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> rows;
  std::vector<double> weights;

  std::size_t size() const { return offsets.size() - 1; }
  void add(std::uint32_t row, double w) {
    rows.push_back(row);
    weights.push_back(w);
  }
  void finish_row() { offsets.push_back(rows.size()); }
};

inline Var combine_rows(Var x, std::shared_ptr<const RowCombination> comb) {
  const std::size_t c = x.cols(), n_out = comb->size();
  if (n_out == 0) throw DimensionError("combine_rows with no output rows");
  Tensor out(Shape{n_out, c});
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < n_out; ++i)
    for (std::size_t e = comb->offsets[i]; e < comb->offsets[i + 1]; ++e) {
      if (comb->rows[e] >= x.rows()) throw DimensionError("combine_rows: index out of range");
      const double w = comb->weights[e];
      const double* src = &xv[comb->rows[e] * c];
      for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += w * src[j];
    }
  return x.tape->record("combine_rows", std::move(out), {x.id}, [ix = x.id, comb, c](Tape& t, int self) {
    double* d = t.grad_if_needed(ix);
    if (!d) return;
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < comb->size(); ++i)
      for (std::size_t e = comb->offsets[i]; e < comb->offsets[i + 1]; ++e)
        for (std::size_t j = 0; j < c; ++j) d[comb->rows[e] * c + j] += comb->weights[e] * g[i * c + j];
  });
}

// ---------------------------------------------------------------------------
// Sparse convolution kernel: one weight matrix per kernel offset, applied
// along a precomputed rulebook of (input row, output row) pairs.

struct Rulebook {
  std::size_t n_out = 0;
  // per kernel offset: list of (input row, output row)
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> pairs;
};

inline Var sparse_gemm(Var feats, Var weights, std::shared_ptr<const Rulebook> rules) {
  Tape& tape = svrecon::detail::same_tape(feats, weights);
  if (weights.shape().size() != 3) throw DimensionError("sparse_gemm: weights must be [K x Cin x Cout]");
  const std::size_t koff = weights.shape()[0], cin = weights.shape()[1], cout = weights.shape()[2];
  if (koff != rules->pairs.size()) throw DimensionError("sparse_gemm: rulebook/kernel offset count mismatch");
  if (feats.cols() != cin) throw DimensionError("sparse_gemm: feature width " + std::to_string(feats.cols()) + " vs Cin " + std::to_string(cin));
  if (rules->n_out == 0) throw DimensionError("sparse_gemm: empty output");
  Tensor out(Shape{rules->n_out, cout});
  const auto& fv = feats.value().data;
  const auto& wv = weights.value().data;
  RowMatrix gathered, product;
  for (std::size_t k = 0; k < koff; ++k) {
    const auto& pk = rules->pairs[k];
    if (pk.empty()) continue;
    gathered.resize(static_cast<Eigen::Index>(pk.size()), static_cast<Eigen::Index>(cin));
    for (std::size_t p = 0; p < pk.size(); ++p)
      std::copy_n(&fv[pk[p].first * cin], cin, gathered.row(static_cast<Eigen::Index>(p)).data());
    product.noalias() = gathered * ConstMatMap(&wv[k * cin * cout], cin, cout);
    for (std::size_t p = 0; p < pk.size(); ++p) {
      double* dst = &out.data[pk[p].second * cout];
      const double* src = product.row(static_cast<Eigen::Index>(p)).data();
      for (std::size_t j = 0; j < cout; ++j) dst[j] += src[j];
    }
  }
  return tape.record("sparse_gemm", std::move(out), {feats.id, weights.id},
                     [ifeat = feats.id, iw = weights.id, rules, cin, cout](Tape& t, int self) {
                       double* dfeat = t.grad_if_needed(ifeat);
                       double* dw = t.grad_if_needed(iw);
                       const auto& g = t.grad(self);
                       const auto& fv = t.value(ifeat).data;
                       const auto& wv = t.value(iw).data;
                       RowMatrix gathered_in, gathered_g, dgin;
                       for (std::size_t k = 0; k < rules->pairs.size(); ++k) {
                         const auto& pk = rules->pairs[k];
                         if (pk.empty()) continue;
                         const auto m = static_cast<Eigen::Index>(pk.size());
                         gathered_g.resize(m, static_cast<Eigen::Index>(cout));
                         for (std::size_t p = 0; p < pk.size(); ++p)
                           std::copy_n(&g[pk[p].second * cout], cout, gathered_g.row(static_cast<Eigen::Index>(p)).data());
                         if (dw) {
                           gathered_in.resize(m, static_cast<Eigen::Index>(cin));
                           for (std::size_t p = 0; p < pk.size(); ++p)
                             std::copy_n(&fv[pk[p].first * cin], cin, gathered_in.row(static_cast<Eigen::Index>(p)).data());
                           MatMap(&dw[k * cin * cout], cin, cout).noalias() += gathered_in.transpose() * gathered_g;
                         }
                         if (dfeat) {
                           dgin.noalias() = gathered_g * ConstMatMap(&wv[k * cin * cout], cin, cout).transpose();
                           for (std::size_t p = 0; p < pk.size(); ++p) {
                             double* dst = &dfeat[pk[p].first * cin];
                             const double* src = dgin.row(static_cast<Eigen::Index>(p)).data();
                             for (std::size_t j = 0; j < cin; ++j) dst[j] += src[j];
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Grouped multi-head attention primitives. Tokens are stored group-major:
// group g owns rows [g*L, (g+1)*L). Heads split the channel axis evenly.

struct AttentionLayout {
  std::size_t groups = 0;
  std::size_t heads = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t channels = 0;

  std::size_t head_dim() const { return channels / heads; }
  std::size_t score_row(std::size_t g, std::size_t h, std::size_t q) const { return (g * heads + h) * query_len + q; }
};

/// scores[(g,h,q), k] = scale * <Q[g,q] , K[g,k]> restricted to head h.
inline Var grouped_scores(Var q, Var k, const AttentionLayout& lay, double scale_factor) {
  Tape& tape = svrecon::detail::same_tape(q, k);
  const std::size_t c = lay.channels, dh = lay.head_dim();
  if (c % lay.heads != 0) throw DimensionError("attention: channels not divisible by head count");
  if (q.cols() != c || k.cols() != c) throw DimensionError("attention: channel mismatch");
  if (q.rows() != lay.groups * lay.query_len || k.rows() != lay.groups * lay.key_len)
    throw DimensionError("attention: token count does not match layout");
  Tensor out(Shape{lay.groups * lay.heads * lay.query_len, lay.key_len});
  const auto& qv = q.value().data;
  const auto& kv = k.value().data;
  for (std::size_t g = 0; g < lay.groups; ++g)
    for (std::size_t h = 0; h < lay.heads; ++h)
      for (std::size_t a = 0; a < lay.query_len; ++a) {
        const double* qr = &qv[(g * lay.query_len + a) * c + h * dh];
        double* srow = &out.data[lay.score_row(g, h, a) * lay.key_len];
        for (std::size_t b = 0; b < lay.key_len; ++b) {
          const double* kr = &kv[(g * lay.key_len + b) * c + h * dh];
          double s = 0;
          for (std::size_t d = 0; d < dh; ++d) s += qr[d] * kr[d];
          srow[b] = scale_factor * s;
        }
      }
  return tape.record("grouped_scores", std::move(out), {q.id, k.id}, [iq = q.id, ik = k.id, lay, scale_factor](Tape& t, int self) {
    double* dq = t.grad_if_needed(iq);
    double* dk = t.grad_if_needed(ik);
    const auto& gs = t.grad(self);
    const auto& qv = t.value(iq).data;
    const auto& kv = t.value(ik).data;
    const std::size_t c = lay.channels, dh = lay.head_dim();
    for (std::size_t g = 0; g < lay.groups; ++g)
      for (std::size_t h = 0; h < lay.heads; ++h)
        for (std::size_t a = 0; a < lay.query_len; ++a) {
          const std::size_t qoff = (g * lay.query_len + a) * c + h * dh;
          const double* grow = &gs[lay.score_row(g, h, a) * lay.key_len];
          for (std::size_t b = 0; b < lay.key_len; ++b) {
            const double w = scale_factor * grow[b];
            if (w == 0.0) continue;
            const std::size_t koff = (g * lay.key_len + b) * c + h * dh;
            for (std::size_t d = 0; d < dh; ++d) {
              if (dq) dq[qoff + d] += w * kv[koff + d];
              if (dk) dk[koff + d] += w * qv[qoff + d];
            }
          }
        }
  });
}

/// out[g,q] restricted to head h = sum_k P[(g,h,q), k] * V[g,k] restricted to head h.
inline Var grouped_mix(Var p, Var v, const AttentionLayout& lay) {
  Tape& tape = svrecon::detail::same_tape(p, v);
  const std::size_t c = lay.channels, dh = lay.head_dim();
  if (v.cols() != c || v.rows() != lay.groups * lay.key_len) throw DimensionError("attention: value tokens do not match layout");
  if (p.rows() != lay.groups * lay.heads * lay.query_len || p.cols() != lay.key_len)
    throw DimensionError("attention: weight matrix does not match layout");
  Tensor out(Shape{lay.groups * lay.query_len, c});
  const auto& pv = p.value().data;
  const auto& vv = v.value().data;
  for (std::size_t g = 0; g < lay.groups; ++g)
    for (std::size_t h = 0; h < lay.heads; ++h)
      for (std::size_t a = 0; a < lay.query_len; ++a) {
        const double* prow = &pv[lay.score_row(g, h, a) * lay.key_len];
        double* orow = &out.data[(g * lay.query_len + a) * c + h * dh];
        for (std::size_t b = 0; b < lay.key_len; ++b) {
          const double w = prow[b];
          if (w == 0.0) continue;
          const double* vr = &vv[(g * lay.key_len + b) * c + h * dh];
          for (std::size_t d = 0; d < dh; ++d) orow[d] += w * vr[d];
        }
      }
  return tape.record("grouped_mix", std::move(out), {p.id, v.id}, [ip = p.id, iv = v.id, lay](Tape& t, int self) {
    double* dp = t.grad_if_needed(ip);
    double* dv = t.grad_if_needed(iv);
    const auto& go = t.grad(self);
    const auto& pv = t.value(ip).data;
    const auto& vv = t.value(iv).data;
    const std::size_t c = lay.channels, dh = lay.head_dim();
    for (std::size_t g = 0; g < lay.groups; ++g)
      for (std::size_t h = 0; h < lay.heads; ++h)
        for (std::size_t a = 0; a < lay.query_len; ++a) {
          const std::size_t prow = lay.score_row(g, h, a) * lay.key_len;
          const double* grow = &go[(g * lay.query_len + a) * c + h * dh];
          for (std::size_t b = 0; b < lay.key_len; ++b) {
            const std::size_t voff = (g * lay.key_len + b) * c + h * dh;
            if (dp) {
              double s = 0;
              for (std::size_t d = 0; d < dh; ++d) s += grow[d] * vv[voff + d];
              dp[prow + b] += s;
            }
            if (dv) {
              const double w = pv[prow + b];
              for (std::size_t d = 0; d < dh; ++d) dv[voff + d] += w * grow[d];
            }
          }
        }
  });
}

}  // namespace svrecon::ops
