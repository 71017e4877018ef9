// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "svrecon/optim.hpp"
#include "svrecon/sparse_ops.hpp"

// Voxel generation network: sparse hourglass encoder/decoders that densify
// and prune voxels coarse to fine, stacked twice.

namespace svrecon {

inline constexpr int kHourglassLevels = 3;

/// Ground-truth occupancy: a cell is positive iff a ground-truth point falls
/// inside it. Cells at coarser scales are the parents of scale-0 cells.
class OccupancyOracle {
 public:
  OccupancyOracle(const PointCloud& gt, double l_vox, int max_scale = kHourglassLevels) {
    std::vector<VoxelCoord> level;
    level.reserve(gt.size());
    for (const auto& p : gt) level.push_back(quantize(p, l_vox));
    for (int s = 0; s <= max_scale; ++s) {
      levels_.push_back(VoxelGrid::dedup(s, level));
      for (auto& c : level) c = parent_of(c);
    }
  }

  bool occupied(const VoxelCoord& c) const {
    if (c.scale < 0 || c.scale >= static_cast<int>(levels_.size())) return false;
    return levels_[static_cast<std::size_t>(c.scale)]->find(c).has_value();
  }

  std::vector<double> labels(const VoxelGrid& grid) const {
    std::vector<double> y(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) y[i] = occupied(grid[i]) ? 1.0 : 0.0;
    return y;
  }

  const VoxelGrid& cells(int scale) const { return *levels_.at(static_cast<std::size_t>(scale)); }

 private:
  std::vector<GridPtr> levels_;
};

// ---------------------------------------------------------------------------
// Parameters

struct HourglassParams {
  std::size_t in_channels = kVoxelInputChannels;
  // feature width per scale 0..levels
  std::vector<std::size_t> widths;

  Tensor stem;                    // [27 x in x w0]
  std::vector<Tensor> down;       // [27 x w(s-1) x w(s)], stride 2, s = 1..L
  std::vector<Tensor> enc;        // [27 x w(s) x w(s)]
  std::vector<Tensor> up;         // decoder level j: [8 x w(s+1) x w(s)], s = L-1-j
  std::vector<Tensor> skip;       // [w(s) x w(s)]
  std::vector<Tensor> dec;        // [27 x w(s) x w(s)]
  std::vector<Tensor> cls_w;      // [w(s) x 1]
  std::vector<Tensor> cls_b;      // [1]
  Tensor final_conv;              // [27 x w0 x w0]
  Tensor final_cls_w;             // [w0 x 1]
  Tensor final_cls_b;             // [1]

  std::size_t levels() const { return widths.size() - 1; }
  std::size_t out_channels() const { return widths.front(); }
  std::size_t decoder_scale(std::size_t level) const { return levels() - 1 - level; }

  template <class F>
  void for_each(const std::string& prefix, F&& f) {
    f(prefix + ".stem", stem);
    for (std::size_t i = 0; i < down.size(); ++i) {
      f(prefix + ".down" + std::to_string(i + 1), down[i]);
      f(prefix + ".enc" + std::to_string(i + 1), enc[i]);
    }
    for (std::size_t j = 0; j < up.size(); ++j) {
      const std::string p = prefix + ".dec" + std::to_string(j);
      f(p + ".up", up[j]);
      f(p + ".skip", skip[j]);
      f(p + ".conv", dec[j]);
      f(p + ".cls_w", cls_w[j]);
      f(p + ".cls_b", cls_b[j]);
    }
    f(prefix + ".final.conv", final_conv);
    f(prefix + ".final.cls_w", final_cls_w);
    f(prefix + ".final.cls_b", final_cls_b);
  }
};

/// Uniform(+-sqrt(1/fan_in)) initialization; widths lists the channel count
/// at scales 0..levels.
template <class Rng>
HourglassParams make_hourglass(std::size_t in_channels, std::vector<std::size_t> widths, Rng& rng) {
  if (widths.size() < 2) throw InputError("hourglass needs at least one level");
  HourglassParams p;
  p.in_channels = in_channels;
  p.widths = std::move(widths);
  const auto& w = p.widths;
  const std::size_t L = p.levels();
  p.stem = detail::uniform_init({27, in_channels, w[0]}, 27.0 * in_channels, rng);
  for (std::size_t s = 1; s <= L; ++s) {
    p.down.push_back(detail::uniform_init({27, w[s - 1], w[s]}, 27.0 * w[s - 1], rng));
    p.enc.push_back(detail::uniform_init({27, w[s], w[s]}, 27.0 * w[s], rng));
  }
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t s = L - 1 - j;
    p.up.push_back(detail::uniform_init({8, w[s + 1], w[s]}, static_cast<double>(w[s + 1]), rng));
    p.skip.push_back(detail::uniform_init({w[s], w[s]}, static_cast<double>(w[s]), rng));
    p.dec.push_back(detail::uniform_init({27, w[s], w[s]}, 27.0 * w[s], rng));
    p.cls_w.push_back(detail::uniform_init({w[s], 1}, static_cast<double>(w[s]), rng));
    p.cls_b.push_back(detail::uniform_init({1}, static_cast<double>(w[s]), rng));
  }
  p.final_conv = detail::uniform_init({27, w[0], w[0]}, 27.0 * w[0], rng);
  p.final_cls_w = detail::uniform_init({w[0], 1}, static_cast<double>(w[0]), rng);
  p.final_cls_b = detail::uniform_init({1}, static_cast<double>(w[0]), rng);
  return p;
}

inline std::vector<std::size_t> default_hourglass_widths() { return {16, 32, 64, 64}; }

// ---------------------------------------------------------------------------
// Forward passes

/// Occupancy logits for every candidate voxel produced at one decoder level
/// (before pruning).
struct LogitGroup {
  GridPtr grid;
  Var logits;  // [N]
};

struct GeneratorOptions {
  double tau = 0.5;
  // When set, ground-truth occupied candidates always survive pruning.
  const OccupancyOracle* teacher = nullptr;
  bool rescue_empty = false;
};

struct HourglassResult {
  SparseVar out;                  // pruned output at scale 0
  std::vector<LogitGroup> levels; // one per decoder level, coarse to fine
  LogitGroup final_group;         // final head at scale 0
  SparseVar decoder_scale1;       // pruned decoder features at scale 1
};

namespace detail {
inline SparseVar relu(SparseVar t) { return {t.grid, ops::relu(t.feats)}; }

inline SparseVar prune_group(const SparseVar& t, const LogitGroup& group, const GeneratorOptions& opt) {
  PruneOptions po;
  po.tau = opt.tau;
  po.rescue_empty = opt.rescue_empty;
  std::vector<std::uint8_t> force;
  if (opt.teacher) {
    force.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) force[i] = opt.teacher->occupied((*t.grid)[i]) ? 1 : 0;
    po.force_keep = &force;
  }
  return prune(t, group.logits, po);
}

inline LogitGroup classify(const SparseVar& t, Var w, Var b) {
  Var z = ops::linear(t.feats, w, b);
  return {t.grid, ops::reshape(z, Shape{t.size()})};
}
}  // namespace detail

inline HourglassResult hourglass_forward(const SparseVar& input, const HourglassParams& p, ParamBinder& bind,
                                         const GeneratorOptions& opt = {}) {
  if (input.grid->scale() != 0) throw InputError("hourglass_forward: input must be at scale 0");
  if (input.feats.cols() != p.in_channels) throw DimensionError("hourglass_forward: input channel mismatch");
  const std::size_t L = p.levels();

  std::vector<SparseVar> skips;
  SparseVar x = detail::relu(sparse_conv(input, bind(p.stem), 1));
  skips.push_back(x);
  for (std::size_t s = 1; s <= L; ++s) {
    x = detail::relu(sparse_conv(x, bind(p.down[s - 1]), 2));
    x = detail::relu(sparse_conv(x, bind(p.enc[s - 1]), 1));
    skips.push_back(x);
  }

  HourglassResult r;
  for (std::size_t j = 0; j < L; ++j) {
    const std::size_t s = p.decoder_scale(j);
    x = detail::relu(gen_transposed_conv(x, bind(p.up[j])));
    Var joined = ops::add(x.feats, ops::matmul(coincident_rows(skips[s], *x.grid), bind(p.skip[j])));
    x = detail::relu(sparse_conv({x.grid, joined}, bind(p.dec[j]), 1));
    LogitGroup g = detail::classify(x, bind(p.cls_w[j]), bind(p.cls_b[j]));
    x = detail::prune_group(x, g, opt);
    r.levels.push_back(g);
    if (s == 1) r.decoder_scale1 = x;
  }
  x = detail::relu(sparse_conv(x, bind(p.final_conv), 1));
  r.final_group = detail::classify(x, bind(p.final_cls_w), bind(p.final_cls_b));
  r.out = detail::prune_group(x, r.final_group, opt);
  if (!r.decoder_scale1.grid) r.decoder_scale1 = r.out;
  return r;
}

struct GeneratorParams {
  HourglassParams stack1;
  HourglassParams stack2;
  bool use_stack2 = true;

  template <class F>
  void for_each(F&& f) {
    stack1.for_each("gen.hg1", f);
    if (use_stack2) stack2.for_each("gen.hg2", f);
  }
};

template <class Rng>
GeneratorParams make_generator(Rng& rng, std::vector<std::size_t> widths = default_hourglass_widths()) {
  GeneratorParams g;
  g.stack1 = make_hourglass(kVoxelInputChannels, widths, rng);
  g.stack2 = make_hourglass(widths.front(), widths, rng);
  return g;
}

struct StackedResult {
  std::vector<LogitGroup> mid;  // intermediate supervision groups
  LogitGroup out_group;         // logits of the final candidates
  SparseVar v_out;              // pruned output voxels
  Var f_v;                      // per-voxel features of v_out
};

/// Stack 1 feeds stack 2. The intermediate set collects every decoder level
/// of both stacks plus the final head of stack 1; the final head of the last
/// stack is the output group.
inline StackedResult stacked_forward(const SparseVar& input, const GeneratorParams& params, ParamBinder& bind,
                                     const GeneratorOptions& opt = {}) {
  StackedResult r;
  HourglassResult h1 = hourglass_forward(input, params.stack1, bind, opt);
  r.mid = h1.levels;
  if (!params.use_stack2) {
    r.out_group = h1.final_group;
    r.v_out = h1.out;
    r.f_v = sparse_interpolate(h1.decoder_scale1, h1.out);
    return r;
  }
  r.mid.push_back(h1.final_group);
  HourglassResult h2 = hourglass_forward(h1.out, params.stack2, bind, opt);
  r.mid.insert(r.mid.end(), h2.levels.begin(), h2.levels.end());
  r.out_group = h2.final_group;
  r.v_out = h2.out;
  r.f_v = sparse_interpolate(h2.decoder_scale1, h2.out);
  return r;
}

inline std::size_t feature_channels(const GeneratorParams& g) {
  const HourglassParams& last = g.use_stack2 ? g.stack2 : g.stack1;
  return last.widths[1] + last.widths[0];
}

}  // namespace svrecon
