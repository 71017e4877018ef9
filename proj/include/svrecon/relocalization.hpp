// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "svrecon/attention.hpp"
#include "svrecon/knn.hpp"
#include "svrecon/positional_encoding.hpp"
#include "svrecon/sparse_ops.hpp"

// Voxel re-localization: each output voxel attends over its K nearest voxels
// and regresses a bounded offset that turns its center into a point.

namespace svrecon {

// tanh saturates to exactly 1.0 in double precision for large inputs; the
// margin keeps every offset strictly inside the half-cell box.
inline constexpr double kOffsetMargin = 1e-9;

struct RelocalizationConfig {
  double l_vox = 0.05;
  std::size_t K = 8;
  std::size_t heads = 4;
  PeMode pe_mode = PeMode::amplified;
};

struct RelocalizationParams {
  Tensor proj_w, proj_b;  // [C_feat x C], [C]
  std::vector<AttentionParams> self_blocks;
  AttentionParams cross;
  Tensor offset_w, offset_b;  // [C x 3], [3]

  std::size_t channels() const { return proj_w.shape[1]; }
  std::size_t feature_channels() const { return proj_w.shape[0]; }

  template <class F>
  void for_each(F&& f) {
    f("reloc.proj_w", proj_w);
    f("reloc.proj_b", proj_b);
    for (std::size_t i = 0; i < self_blocks.size(); ++i) self_blocks[i].for_each("reloc.self" + std::to_string(i), f);
    cross.for_each("reloc.cross", f);
    f("reloc.offset_w", offset_w);
    f("reloc.offset_b", offset_b);
  }
};

/// The offset head starts at zero so an untrained network returns voxel centers.
template <class Rng>
RelocalizationParams make_relocalization(std::size_t feature_channels, std::size_t channels, Rng& rng,
                                         std::size_t self_blocks = 2) {
  if (pe_channels_for(channels) == 0) throw InputError("relocalization: embedding width must be at least 6");
  RelocalizationParams p;
  p.proj_w = detail::uniform_init({feature_channels, channels}, static_cast<double>(feature_channels), rng);
  p.proj_b = detail::uniform_init({channels}, static_cast<double>(feature_channels), rng);
  for (std::size_t i = 0; i < self_blocks; ++i) p.self_blocks.push_back(make_attention(channels, rng));
  p.cross = make_attention(channels, rng);
  p.offset_w = Tensor({channels, 3}, 0.0);
  p.offset_b = Tensor({3}, 0.0);
  return p;
}

struct RelocalizationOutput {
  Var points;   // [N x 3]
  Var offsets;  // [N x 3], each entry in (-l_vox/2, l_vox/2)
};

inline std::vector<NeighborSet> build_neighbor_sets(const VoxelGrid& grid, std::size_t K) {
  std::vector<NeighborSet> sets;
  sets.reserve(grid.size());
  for (const auto& c : grid.coords()) sets.push_back(knn_shell(grid, c, K));
  return sets;
}

/// Relocalization with caller-supplied neighbor sets (one per grid row, all of
/// the same size). Feature rows of `f_v` align with `grid`.
inline RelocalizationOutput relocalize_with_neighbors(const VoxelGrid& grid, const std::vector<NeighborSet>& sets, Var f_v,
                                                      const RelocalizationParams& p, const RelocalizationConfig& cfg,
                                                      ParamBinder& bind) {
  const std::size_t n = grid.size(), c = p.channels();
  if (n == 0) throw EmptyOutputError("relocalize: no voxels");
  if (sets.size() != n) throw DimensionError("relocalize: one neighbor set per voxel required");
  if (f_v.rows() != n || f_v.cols() != p.feature_channels()) throw DimensionError("relocalize: feature rows do not align with voxels");
  const std::size_t K = sets.front().size();
  const double cell = cfg.l_vox * std::ldexp(1.0, grid.scale());
  AmpPEConfig pe_cfg{pe_channels_for(c), cell};

  std::vector<std::uint32_t> token_rows;
  std::vector<std::uint8_t> mask;
  Tensor token_pe(Shape{n * K, c});
  token_rows.reserve(n * K);
  mask.reserve(n * K);
  for (std::size_t i = 0; i < n; ++i) {
    if (sets[i].size() != K) throw DimensionError("relocalize: ragged neighbor sets");
    for (std::size_t k = 0; k < K; ++k) {
      token_rows.push_back(sets[i].rows[k]);
      mask.push_back(sets[i].pad[k]);
      const auto enc = token_encoding(sets[i].displacement(k, cfg.l_vox), pe_cfg, cfg.pe_mode, c);
      std::copy(enc.begin(), enc.end(), &token_pe.data[(i * K + k) * c]);
    }
  }
  Tape& tape = *f_v.tape;
  Var proj = ops::linear(f_v, bind(p.proj_w), bind(p.proj_b));
  Var tokens = ops::add(ops::gather_rows(proj, std::move(token_rows)), tape.constant(std::move(token_pe)));
  for (const auto& block : p.self_blocks) tokens = attention_block(AttentionKind::self, tokens, tokens, n, cfg.heads, mask, block, bind);

  Tensor query_pe(Shape{n, c});
  const auto enc0 = token_encoding({0, 0, 0}, pe_cfg, cfg.pe_mode, c);
  for (std::size_t i = 0; i < n; ++i) std::copy(enc0.begin(), enc0.end(), &query_pe.data[i * c]);
  Var query = ops::add(proj, tape.constant(std::move(query_pe)));
  Var fused = attention_block(AttentionKind::cross, query, tokens, n, cfg.heads, mask, p.cross, bind);

  Var raw = ops::linear(fused, bind(p.offset_w), bind(p.offset_b));
  Var offsets = ops::scale(ops::tanh(raw), (cell / 2) * (1.0 - kOffsetMargin));
  Tensor centers(Shape{n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    const Point3 ctr = grid[i].center(cfg.l_vox);
    for (int a = 0; a < 3; ++a) centers(i, a) = ctr[a];
  }
  return {ops::add(offsets, tape.constant(std::move(centers))), offsets};
}

inline RelocalizationOutput relocalize(const VoxelGrid& grid, Var f_v, const RelocalizationParams& p,
                                       const RelocalizationConfig& cfg, ParamBinder& bind) {
  if (grid.empty()) throw EmptyOutputError("relocalize: no voxels");
  return relocalize_with_neighbors(grid, build_neighbor_sets(grid, cfg.K), f_v, p, cfg, bind);
}

inline PointCloud to_point_cloud(const Tensor& points) {
  PointCloud out(points.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {points(i, 0), points(i, 1), points(i, 2)};
  return out;
}

}  // namespace svrecon
