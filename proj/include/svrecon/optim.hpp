// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "svrecon/autodiff.hpp"

namespace svrecon {

// ---------------------------------------------------------------------------
// Parameter binding: model structs own their Tensors; a binder lifts each one
// onto a tape exactly once per forward pass.

class ParamBinder {
 public:
  ParamBinder(Tape& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  Var operator()(const Tensor& param) {
    auto it = bound_.find(&param);
    if (it != bound_.end()) return it->second;
    Var v = trainable_ ? tape_.leaf(param) : tape_.constant(param);
    bound_.emplace(&param, v);
    return v;
  }

  /// Uses `v` in place of `param` for this pass.
  void set(const Tensor& param, Var v) { bound_.insert_or_assign(&param, v); }

  Tape& tape() { return tape_; }
  bool trainable() const { return trainable_; }

  /// Gradient for a parameter, or nullopt if it never entered the graph.
  std::optional<Tensor> gradient(const Tensor& param) {
    auto it = bound_.find(&param);
    if (it == bound_.end() || !trainable_) return std::nullopt;
    return tape_.gradient(it->second);
  }

 private:
  Tape& tape_;
  bool trainable_;
  std::unordered_map<const Tensor*, Var> bound_;
};

namespace detail {
/// Uniform(+-sqrt(1/fan_in)) initialization.
template <class Rng>
Tensor uniform_init(Shape shape, double fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(1.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
  return t;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update over aligned (param, grad) lists. Moments
/// are lazily created on the first call.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape, 0.0);
      state.v.emplace_back(p->shape, 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state belongs to another parameter set");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (p.shape != g.shape || p.shape != state.m[i].shape)
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g.data[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g.data[j] * g.data[j];
      p.data[j] -= state.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

using ScalarFn = std::function<Var(Tape&, Var)>;

/// Max over coordinates of |g_fd - g_ad| / max(1, |g_fd|, |g_ad|), with central
/// differences of step h. `coords` limits the check to a subset of
/// coordinates (all when empty).
inline double grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5, std::span<const std::size_t> coords = {}) {
  Tape tape;
  Var xv = tape.leaf(x);
  Var y = f(tape, xv);
  if (y.numel() != 1) throw DimensionError("grad_check: function output is not scalar");
  tape.backward(y);
  const Tensor analytic = tape.gradient(xv);

  auto eval = [&](const Tensor& at) {
    Tape t;
    return f(t, t.constant(at)).value().item();
  };

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }
  double worst = 0;
  Tensor probe = x;
  for (std::size_t i : coords) {
    const double orig = probe.data[i];
    probe.data[i] = orig + h;
    const double fp = eval(probe);
    probe.data[i] = orig - h;
    const double fm = eval(probe);
    probe.data[i] = orig;
    const double fd = (fp - fm) / (2 * h);
    const double ad = analytic.data[i];
    worst = std::max(worst, std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)}));
  }
  return worst;
}

}  // namespace svrecon
