// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "svrecon/ops.hpp"
#include "svrecon/voxel.hpp"

namespace svrecon {

using SparseVar = BasicSparseTensor<Var>;

/// 3x3x3 sparse convolution. Stride 1 keeps the coordinate set; stride 2 maps
/// onto the distinct parents floor(coord/2) one scale up, each output o
/// gathering inputs at 2*o + offset.
inline SparseVar sparse_conv(const SparseVar& t, Var weights, int stride) {
  if (stride != 1 && stride != 2) throw InputError("sparse_conv: stride must be 1 or 2");
  const auto& offsets = kernel3_offsets();
  if (weights.shape().size() != 3 || weights.shape()[0] != offsets.size())
    throw DimensionError("sparse_conv: weights must be [27 x Cin x Cout]");
  const VoxelGrid& in = *t.grid;
  GridPtr out_grid;
  if (stride == 1) {
    out_grid = t.grid;
  } else {
    std::vector<VoxelCoord> parents;
    parents.reserve(in.size());
    for (const auto& c : in.coords()) parents.push_back(parent_of(c));
    out_grid = VoxelGrid::dedup(in.scale() + 1, parents);
  }
  auto rules = std::make_shared<ops::Rulebook>();
  rules->n_out = out_grid->size();
  rules->pairs.resize(offsets.size());
  for (std::size_t o = 0; o < out_grid->size(); ++o) {
    const VoxelCoord& oc = (*out_grid)[o];
    const VoxelCoord base = stride == 1 ? oc : VoxelCoord{2 * oc.x, 2 * oc.y, 2 * oc.z, in.scale()};
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      const auto& off = offsets[k];
      if (auto row = in.find(base.offset(off.dx, off.dy, off.dz)))
        rules->pairs[k].emplace_back(*row, static_cast<std::uint32_t>(o));
    }
  }
  return {out_grid, ops::sparse_gemm(t.feats, weights, rules)};
}

/// Generative transposed convolution (kernel 2, stride 2): every voxel emits
/// its 8 children 2*coord + {0,1}^3 one scale down.
inline SparseVar gen_transposed_conv(const SparseVar& t, Var weights) {
  const VoxelGrid& in = *t.grid;
  if (in.scale() < 1) throw InputError("gen_transposed_conv: cannot upsample below the finest scale");
  const auto& offsets = child_offsets();
  if (weights.shape().size() != 3 || weights.shape()[0] != offsets.size())
    throw DimensionError("gen_transposed_conv: weights must be [8 x Cin x Cout]");
  std::vector<VoxelCoord> children;
  children.reserve(in.size() * offsets.size());
  for (const auto& p : in.coords())
    for (const auto& b : offsets) children.push_back({2 * p.x + b.dx, 2 * p.y + b.dy, 2 * p.z + b.dz, in.scale() - 1});
  auto out_grid = VoxelGrid::dedup(in.scale() - 1, children);
  auto rules = std::make_shared<ops::Rulebook>();
  rules->n_out = out_grid->size();
  rules->pairs.resize(offsets.size());
  for (std::size_t p = 0; p < in.size(); ++p)
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      const auto& b = offsets[k];
      const VoxelCoord& pc = in[p];
      const auto row = out_grid->find({2 * pc.x + b.dx, 2 * pc.y + b.dy, 2 * pc.z + b.dz, in.scale() - 1});
      rules->pairs[k].emplace_back(static_cast<std::uint32_t>(p), *row);
    }
  return {out_grid, ops::sparse_gemm(t.feats, weights, rules)};
}

struct PruneOptions {
  double tau = 0.5;
  // Rows forced to survive regardless of their logit (teacher forcing).
  const std::vector<std::uint8_t>* force_keep = nullptr;
  // Keep the single best-scoring voxel instead of failing on an empty result.
  bool rescue_empty = false;
};

inline double probability_to_logit(double tau) { return std::log(tau / (1.0 - tau)); }

/// Indices of rows with sigmoid(logit) >= tau, i.e. logit >= logit(tau).
inline std::vector<std::uint32_t> prune_rows(const Tensor& logits, const PruneOptions& opt) {
  const double cut = opt.tau == 0.5 ? 0.0 : probability_to_logit(opt.tau);
  std::vector<std::uint32_t> keep;
  for (std::size_t i = 0; i < logits.numel(); ++i)
    if (logits.data[i] >= cut || (opt.force_keep && (*opt.force_keep)[i])) keep.push_back(static_cast<std::uint32_t>(i));
  if (keep.empty()) {
    if (!opt.rescue_empty) throw EmptyOutputError("pruning removed every voxel");
    const auto best = std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin();
    keep.push_back(static_cast<std::uint32_t>(best));
  }
  return keep;
}

/// Keeps the rows whose occupancy clears the threshold; gradients reach the
/// surviving rows only.
inline SparseVar prune(const SparseVar& t, Var logits, const PruneOptions& opt = {}) {
  if (logits.numel() != t.size()) throw DimensionError("prune: one logit per voxel required");
  const auto keep = prune_rows(logits.value(), opt);
  std::vector<VoxelCoord> coords;
  coords.reserve(keep.size());
  for (auto r : keep) coords.push_back((*t.grid)[r]);
  return {std::make_shared<const VoxelGrid>(t.grid->scale(), std::move(coords)), ops::gather_rows(t.feats, keep)};
}

/// Rows of `source` at coordinates coinciding with `target`'s, zero elsewhere.
inline Var coincident_rows(const SparseVar& source, const VoxelGrid& target) {
  if (source.grid->scale() != target.scale()) throw InputError("coincident_rows: scale mismatch");
  auto comb = std::make_shared<ops::RowCombination>();
  for (const auto& c : target.coords()) {
    if (auto row = source.grid->find(c)) comb->add(*row, 1.0);
    comb->finish_row();
  }
  return ops::combine_rows(source.feats, comb);
}

/// Trilinear weights of the 2^3 coarse cells whose centers surround a fine
/// cell center. Entries: (coarse coordinate, weight).
inline std::vector<std::pair<VoxelCoord, double>> interpolation_stencil(const VoxelCoord& fine) {
  std::vector<std::pair<VoxelCoord, double>> out;
  out.reserve(8);
  int base[3];
  double frac[3];
  const int v[3] = {fine.x, fine.y, fine.z};
  for (int a = 0; a < 3; ++a) {
    // fine center in coarse cell units, shifted so coarse centers are integers
    const double u = (v[a] + 0.5) / 2.0 - 0.5;
    base[a] = static_cast<int>(std::floor(u));
    frac[a] = u - base[a];
  }
  for (int dx = 0; dx <= 1; ++dx)
    for (int dy = 0; dy <= 1; ++dy)
      for (int dz = 0; dz <= 1; ++dz) {
        const double w = (dx ? frac[0] : 1 - frac[0]) * (dy ? frac[1] : 1 - frac[1]) * (dz ? frac[2] : 1 - frac[2]);
        out.push_back({{base[0] + dx, base[1] + dy, base[2] + dz, fine.scale + 1}, w});
      }
  return out;
}

/// Features of `fine` voxels interpolated from the coarse tensor one scale up,
/// weights renormalized over present coarse cells, concatenated with the
/// fine tensor's own features: [N_fine x (C_coarse + C_fine)].
inline Var sparse_interpolate(const SparseVar& coarse, const SparseVar& fine) {
  if (coarse.grid->scale() != fine.grid->scale() + 1) throw InputError("sparse_interpolate: scales must differ by one");
  auto comb = std::make_shared<ops::RowCombination>();
  for (const auto& c : fine.grid->coords()) {
    const auto stencil = interpolation_stencil(c);
    double total = 0;
    std::vector<std::pair<std::uint32_t, double>> present;
    for (const auto& [pc, w] : stencil)
      if (auto row = coarse.grid->find(pc)) {
        present.emplace_back(*row, w);
        total += w;
      }
    for (const auto& [row, w] : present) comb->add(row, w / total);
    comb->finish_row();
  }
  return ops::concat_cols(ops::combine_rows(coarse.feats, comb), fine.feats);
}

}  // namespace svrecon
