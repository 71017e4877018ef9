// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <tuple>
#include <vector>

#include "svrecon/voxel.hpp"

namespace svrecon {

/// K nearest voxels of a query, found through the grid's hash index.
struct NeighborSet {
  VoxelCoord query;
  std::vector<VoxelCoord> neighbors;  // nearest first
  std::vector<std::uint32_t> rows;    // grid rows of `neighbors`
  std::vector<std::uint8_t> pad;      // 1 where the entry repeats the nearest to reach K

  std::size_t size() const { return neighbors.size(); }

  /// neighbor center minus query center, in world units
  Point3 displacement(std::size_t k, double l_vox) const {
    const double cell = l_vox * std::ldexp(1.0, query.scale);
    const auto& n = neighbors[k];
    return {(n.x - query.x) * cell, (n.y - query.y) * cell, (n.z - query.z) * cell};
  }
};

namespace detail {
struct KnnCandidate {
  long long d2;
  VoxelCoord coord;
  std::uint32_t row;

  // distance first, then lexicographic coordinate order
  friend bool operator<(const KnnCandidate& a, const KnnCandidate& b) {
    return std::tie(a.d2, a.coord.x, a.coord.y, a.coord.z) < std::tie(b.d2, b.coord.x, b.coord.y, b.coord.z);
  }
};

inline long long voxel_d2(const VoxelCoord& a, const VoxelCoord& b) {
  const long long dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline NeighborSet finish_neighbor_set(const VoxelCoord& q, std::vector<KnnCandidate>& cands, std::size_t K) {
  const std::size_t take = std::min(K, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end());
  NeighborSet ns;
  ns.query = q;
  for (std::size_t i = 0; i < K; ++i) {
    const auto& c = cands[i < take ? i : 0];
    ns.neighbors.push_back(c.coord);
    ns.rows.push_back(c.row);
    ns.pad.push_back(i < take ? 0 : 1);
  }
  return ns;
}
}  // namespace detail

/// Exact Euclidean K-NN over voxel centers with ties broken by lexicographic
/// coordinate order. Searches Chebyshev shells of growing radius until the
/// K-th candidate is strictly closer than anything the next shell can hold;
/// falls back to a linear scan once a shell would cost more than the grid.
/// Short sets are padded by repeating the nearest neighbor.
inline NeighborSet knn_shell(const VoxelGrid& grid, const VoxelCoord& q, std::size_t K) {
  if (grid.empty()) throw InputError("knn_shell: empty grid");
  if (K == 0) throw InputError("knn_shell: K must be positive");
  std::vector<detail::KnnCandidate> cands;
  auto probe = [&](int dx, int dy, int dz) {
    const VoxelCoord c = q.offset(dx, dy, dz);
    if (auto row = grid.find(c)) cands.push_back({detail::voxel_d2(c, q), c, *row});
  };
  for (long long r = 0;; ++r) {
    const long long side = 2 * r + 1;
    if (side * side * side > 27 * static_cast<long long>(grid.size()) && r > 1) {
      cands.clear();
      for (std::size_t i = 0; i < grid.size(); ++i) cands.push_back({detail::voxel_d2(grid[i], q), grid[i], static_cast<std::uint32_t>(i)});
      return detail::finish_neighbor_set(q, cands, K);
    }
    const int ri = static_cast<int>(r);
    for (int dx = -ri; dx <= ri; ++dx)
      for (int dy = -ri; dy <= ri; ++dy) {
        if (std::abs(dx) == ri || std::abs(dy) == ri) {
          for (int dz = -ri; dz <= ri; ++dz) probe(dx, dy, dz);
        } else {
          probe(dx, dy, -ri);
          if (ri != 0) probe(dx, dy, ri);
        }
      }
    if (cands.size() == grid.size()) break;
    if (cands.size() >= K) {
      std::nth_element(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(K - 1), cands.end());
      if (cands[K - 1].d2 < (r + 1) * (r + 1)) break;
    }
  }
  return detail::finish_neighbor_set(q, cands, K);
}

}  // namespace svrecon
