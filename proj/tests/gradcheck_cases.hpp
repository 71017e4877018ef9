// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference gradient checks for every registered tape op and for the
// composite two-stage network, shared by the unit tests and the acceptance
// binary.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "svrecon/hourglass.hpp"
#include "svrecon/kdtree.hpp"
#include "svrecon/losses.hpp"
#include "svrecon/relocalization.hpp"

namespace gradcheck {

using namespace svrecon;
using oracle::Rng;

/// A case draws a random instance and returns the worst relative error over
/// all of the op's differentiable inputs.
struct Case {
  std::string name;
  std::function<double(Rng&)> run;
};

/// Reduces any output to a scalar through a fixed random contraction.
inline Var contract(Var out, std::uint64_t seed) {
  Rng rng(seed);
  Var w = out.tape->constant(oracle::random_tensor(out.shape(), rng));
  return ops::sum(ops::mul(out, w));
}

/// Values bounded away from zero so relu kinks stay out of the stencil.
inline Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = oracle::random_tensor(std::move(shape), rng);
  for (double& v : t.data) v = (v < 0 ? -1 : 1) * (0.05 + std::abs(v));
  return t;
}

/// Checks f with respect to each argument in turn, the others held constant.
inline double check_each(const std::vector<Tensor>& args, const std::function<Var(Tape&, const std::vector<Var>&)>& f) {
  double worst = 0;
  for (std::size_t i = 0; i < args.size(); ++i) {
    ScalarFn g = [&, i](Tape& t, Var x) {
      std::vector<Var> vars;
      for (std::size_t j = 0; j < args.size(); ++j) vars.push_back(j == i ? x : t.constant(args[j]));
      return f(t, vars);
    };
    worst = std::max(worst, grad_check(g, args[i]));
  }
  return worst;
}

inline std::vector<Case> op_cases() {
  std::vector<Case> cases;
  auto unary = [&](std::string name, std::function<Var(Var)> op, bool avoid_zero = false) {
    cases.push_back({name, [op, avoid_zero](Rng& rng) {
                       const std::uint64_t s = rng();
                       Tensor x = avoid_zero ? away_from_zero({3, 4}, rng) : oracle::random_tensor({3, 4}, rng, -2, 2);
                       return check_each({x}, [&](Tape&, const std::vector<Var>& v) { return contract(op(v[0]), s); });
                     }});
  };
  unary("relu", [](Var a) { return ops::relu(a); }, true);
  unary("tanh", [](Var a) { return ops::tanh(a); });
  unary("sigmoid", [](Var a) { return ops::sigmoid(a); });
  unary("exp", [](Var a) { return ops::exp(a); });
  unary("scale", [](Var a) { return ops::scale(a, -1.7); });
  unary("sum", [](Var a) { return ops::sum(a); });
  unary("mean", [](Var a) { return ops::mean(a); });
  unary("reshape", [](Var a) { return ops::reshape(a, Shape{2, 6}); });
  unary("softmax_lastdim", [](Var a) { return ops::softmax_lastdim(a); });
  unary("masked_softmax_lastdim", [](Var a) {
    std::vector<std::uint8_t> mask(a.numel(), 0);
    mask[1] = mask[6] = 1;
    return ops::masked_softmax_lastdim(a, mask);
  });
  unary("gather_rows", [](Var a) { return ops::gather_rows(a, {2, 0, 2, 1}); });
  unary("combine_rows", [](Var a) {
    auto comb = std::make_shared<ops::RowCombination>();
    comb->add(0, 0.25);
    comb->add(2, -1.5);
    comb->finish_row();
    comb->finish_row();
    comb->add(1, 2.0);
    comb->finish_row();
    return ops::combine_rows(a, comb);
  });

  auto binary = [&](std::string name, Shape sa, Shape sb, std::function<Var(Var, Var)> op) {
    cases.push_back({name, [=](Rng& rng) {
                       const std::uint64_t s = rng();
                       Tensor a = oracle::random_tensor(sa, rng), b = oracle::random_tensor(sb, rng);
                       return check_each({a, b}, [&](Tape&, const std::vector<Var>& v) { return contract(op(v[0], v[1]), s); });
                     }});
  };
  binary("add", {3, 4}, {3, 4}, [](Var a, Var b) { return ops::add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](Var a, Var b) { return ops::sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](Var a, Var b) { return ops::mul(a, b); });
  binary("concat_cols", {3, 2}, {3, 5}, [](Var a, Var b) { return ops::concat_cols(a, b); });
  binary("matmul", {4, 5}, {5, 3}, [](Var a, Var b) { return ops::matmul(a, b); });

  cases.push_back({"linear", [](Rng& rng) {
                     const std::uint64_t s = rng();
                     return check_each({oracle::random_tensor({4, 5}, rng), oracle::random_tensor({5, 3}, rng), oracle::random_tensor({3}, rng)},
                                       [&](Tape&, const std::vector<Var>& v) { return contract(ops::linear(v[0], v[1], v[2]), s); });
                   }});
  cases.push_back({"layer_norm", [](Rng& rng) {
                     const std::uint64_t s = rng();
                     return check_each({oracle::random_tensor({3, 6}, rng), oracle::random_tensor({6}, rng), oracle::random_tensor({6}, rng)},
                                       [&](Tape&, const std::vector<Var>& v) { return contract(ops::layer_norm(v[0], v[1], v[2]), s); });
                   }});
  cases.push_back({"bce_with_logits", [](Rng& rng) {
                     std::vector<double> y(7);
                     for (double& v : y) v = oracle::uniform(rng, 0, 1) < 0.5 ? 0.0 : 1.0;
                     return check_each({oracle::random_tensor({7}, rng, -4, 4)},
                                       [&](Tape&, const std::vector<Var>& v) { return ops::bce_with_logits(v[0], y); });
                   }});
  cases.push_back({"sparse_gemm", [](Rng& rng) {
                     const std::uint64_t s = rng();
                     auto rules = std::make_shared<ops::Rulebook>();
                     rules->n_out = 4;
                     rules->pairs.resize(3);
                     for (auto& pk : rules->pairs)
                       for (int e = 0; e < 4; ++e)
                         pk.emplace_back(static_cast<std::uint32_t>(oracle::uniform_int(rng, 0, 4)), static_cast<std::uint32_t>(oracle::uniform_int(rng, 0, 3)));
                     return check_each({oracle::random_tensor({5, 3}, rng), oracle::random_tensor({3, 3, 2}, rng)},
                                       [&](Tape&, const std::vector<Var>& v) { return contract(ops::sparse_gemm(v[0], v[1], rules), s); });
                   }});
  cases.push_back({"grouped_scores", [](Rng& rng) {
                     const std::uint64_t s = rng();
                     const ops::AttentionLayout lay{2, 2, 3, 4, 6};
                     return check_each({oracle::random_tensor({6, 6}, rng), oracle::random_tensor({8, 6}, rng)},
                                       [&](Tape&, const std::vector<Var>& v) { return contract(ops::grouped_scores(v[0], v[1], lay, 0.7), s); });
                   }});
  cases.push_back({"grouped_mix", [](Rng& rng) {
                     const std::uint64_t s = rng();
                     const ops::AttentionLayout lay{2, 2, 3, 4, 6};
                     return check_each({oracle::random_tensor({12, 4}, rng), oracle::random_tensor({8, 6}, rng)},
                                       [&](Tape&, const std::vector<Var>& v) { return contract(ops::grouped_mix(v[0], v[1], lay), s); });
                   }});
  cases.push_back({"chamfer_loss", [](Rng& rng) {
                     const KdTree3 tree(oracle::random_cloud(9, rng));
                     return check_each({oracle::random_tensor({6, 3}, rng, 0, 1)},
                                       [&](Tape&, const std::vector<Var>& v) { return chamfer_loss(v[0], tree); });
                   }});
  return cases;
}

// ---------------------------------------------------------------------------
// Composite network

/// Small input: a random blob of voxels around the origin.
/// Points inside a single scale-3 cell, so unpruned candidate sets stay small.
inline Voxelization toy_input(Rng& rng, std::size_t n_points = 40) {
  PointCloud pts;
  for (std::size_t i = 0; i < n_points; ++i)
    pts.push_back({oracle::uniform(rng, 0.01, 0.19), oracle::uniform(rng, 0.01, 0.19), oracle::uniform(rng, 0.01, 0.09)});
  return voxelize(pts, 0.05);
}

struct CompositeModel {
  GeneratorParams gen;
  RelocalizationParams reloc;
  RelocalizationConfig cfg{0.05, 4, 2, PeMode::amplified};
};

inline CompositeModel toy_model(Rng& rng) {
  CompositeModel m;
  m.gen = make_generator(rng, {3, 4, 5, 5});
  m.reloc = make_relocalization(feature_channels(m.gen), 12, rng);
  // non-zero offset head so the relocalization path carries gradient
  m.reloc.offset_w = oracle::random_tensor({12, 3}, rng, -0.5, 0.5);
  return m;
}

/// Stage-1 loss plus chamfer of relocalized points, end to end. A tiny pruning
/// threshold keeps every candidate so the function is smooth.
inline Var composite_loss(const CompositeModel& m, const Voxelization& vox, const OccupancyOracle& occ, const KdTree3& target,
                          Var input_feats, ParamBinder& bind) {
  GeneratorOptions opt;
  opt.tau = 1e-12;
  const StackedResult r = stacked_forward({vox.tensor.grid, input_feats}, m.gen, bind, opt);
  std::vector<LabeledLogits> mid;
  for (const auto& g : r.mid) mid.push_back({g.logits, occ.labels(*g.grid)});
  Var l_vox = voxel_bce_and_total({r.out_group.logits, occ.labels(*r.out_group.grid)}, mid);
  const auto out = relocalize(*r.v_out.grid, r.f_v, m.reloc, m.cfg, bind);
  return ops::add(l_vox, chamfer_loss(out.points, target));
}

/// Checks the composite loss with respect to the input features and to a
/// sample of coordinates of every parameter tensor.
inline double composite_check(Rng& rng, std::size_t coords_per_param = 3) {
  CompositeModel m = toy_model(rng);
  const Voxelization vox = toy_input(rng);
  PointCloud gt = oracle::random_cloud(60, rng, -0.05, 0.25);
  const OccupancyOracle occ(gt, 0.05);
  const KdTree3 target(gt);

  double worst = grad_check([&](Tape& t, Var x) {
    ParamBinder bind(t, false);
    return composite_loss(m, vox, occ, target, x, bind);
  }, vox.tensor.feats);

  std::vector<std::pair<std::string, Tensor*>> params;
  m.gen.for_each([&](const std::string& n, Tensor& t) { params.emplace_back(n, &t); });
  m.reloc.for_each([&](const std::string& n, Tensor& t) { params.emplace_back(n, &t); });
  for (auto& [name, p] : params) {
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < coords_per_param; ++i) coords.push_back(std::uniform_int_distribution<std::size_t>(0, p->numel() - 1)(rng));
    Tensor* target_param = p;
    const double e = grad_check([&](Tape& t, Var x) {
      ParamBinder bind(t, false);
      bind.set(*target_param, x);
      return composite_loss(m, vox, occ, target, t.constant(vox.tensor.feats), bind);
    }, *p, 1e-5, coords);
    worst = std::max(worst, e);
  }
  return worst;
}

}  // namespace gradcheck
