// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "svrecon/geometry.hpp"
#include "svrecon/tensor.hpp"

namespace svrecon {

/// Integer cell coordinate. Cell centers sit at (coord + 0.5) * l_vox * 2^scale.
struct VoxelCoord {
  int x = 0;
  int y = 0;
  int z = 0;
  int scale = 0;

  friend bool operator==(const VoxelCoord&, const VoxelCoord&) = default;
  // Lexicographic order on (x, y, z); coordinates of one grid share a scale.
  friend auto operator<=>(const VoxelCoord& a, const VoxelCoord& b) {
    if (auto c = a.x <=> b.x; c != 0) return c;
    if (auto c = a.y <=> b.y; c != 0) return c;
    if (auto c = a.z <=> b.z; c != 0) return c;
    return a.scale <=> b.scale;
  }

  VoxelCoord offset(int dx, int dy, int dz) const { return {x + dx, y + dy, z + dz, scale}; }

  Point3 center(double l_vox) const {
    const double cell = l_vox * std::ldexp(1.0, scale);
    return {(x + 0.5) * cell, (y + 0.5) * cell, (z + 0.5) * cell};
  }
};

inline int floor_div2(int v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

inline VoxelCoord parent_of(const VoxelCoord& c) { return {floor_div2(c.x), floor_div2(c.y), floor_div2(c.z), c.scale + 1}; }

inline VoxelCoord quantize(const Point3& p, double l_vox) {
  return {static_cast<int>(std::floor(p[0] / l_vox)), static_cast<int>(std::floor(p[1] / l_vox)),
          static_cast<int>(std::floor(p[2] / l_vox)), 0};
}

/// Open-addressing hash table from VoxelCoord to a row index.
class VoxelHashIndex {
 public:
  static constexpr std::int32_t kEmpty = -1;

  explicit VoxelHashIndex(std::size_t expected = 0) { rehash(capacity_for(expected)); }

  static std::uint64_t hash(const VoxelCoord& c) {
    auto mix = [](std::uint64_t z) {
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      return z ^ (z >> 31);
    };
    std::uint64_t h = mix(static_cast<std::uint32_t>(c.x) + 0x9e3779b97f4a7c15ULL);
    h = mix(h ^ static_cast<std::uint32_t>(c.y));
    h = mix(h ^ static_cast<std::uint32_t>(c.z));
    return mix(h ^ static_cast<std::uint32_t>(c.scale));
  }

  /// Returns false (leaving the table unchanged) if the key is already present.
  bool insert(const VoxelCoord& c, std::int32_t row) {
    if ((size_ + 1) * 2 > keys_.size()) rehash(keys_.size() * 2);
    std::size_t slot = hash(c) & mask_;
    while (rows_[slot] != kEmpty) {
      if (keys_[slot] == c) return false;
      slot = (slot + 1) & mask_;
    }
    keys_[slot] = c;
    rows_[slot] = row;
    ++size_;
    return true;
  }

  std::int32_t find(const VoxelCoord& c) const {
    std::size_t slot = hash(c) & mask_;
    while (rows_[slot] != kEmpty) {
      if (keys_[slot] == c) return rows_[slot];
      slot = (slot + 1) & mask_;
    }
    return kEmpty;
  }

  bool contains(const VoxelCoord& c) const { return find(c) != kEmpty; }
  std::size_t size() const { return size_; }

 private:
  static std::size_t capacity_for(std::size_t n) {
    std::size_t cap = 16;
    while (cap < 2 * n + 2) cap *= 2;
    return cap;
  }

  void rehash(std::size_t capacity) {
    std::vector<VoxelCoord> old_keys = std::move(keys_);
    std::vector<std::int32_t> old_rows = std::move(rows_);
    keys_.assign(capacity, VoxelCoord{});
    rows_.assign(capacity, kEmpty);
    mask_ = capacity - 1;
    size_ = 0;
    for (std::size_t i = 0; i < old_rows.size(); ++i)
      if (old_rows[i] != kEmpty) insert(old_keys[i], old_rows[i]);
  }

  std::vector<VoxelCoord> keys_;
  std::vector<std::int32_t> rows_;
  std::size_t mask_ = 0;
  std::size_t size_ = 0;
};

/// Immutable set of unique coordinates at a single scale, with its hash index.
class VoxelGrid {
 public:
  VoxelGrid(int scale, std::vector<VoxelCoord> coords) : scale_(scale), coords_(std::move(coords)), index_(coords_.size()) {
    for (std::size_t i = 0; i < coords_.size(); ++i) {
      if (coords_[i].scale != scale_) throw InputError("voxel grid: coordinate at wrong scale");
      if (!index_.insert(coords_[i], static_cast<std::int32_t>(i))) throw InputError("voxel grid: duplicate coordinate");
    }
  }

  /// Builds a grid keeping the first occurrence of each coordinate.
  static std::shared_ptr<const VoxelGrid> dedup(int scale, const std::vector<VoxelCoord>& coords) {
    VoxelHashIndex seen(coords.size());
    std::vector<VoxelCoord> unique;
    unique.reserve(coords.size());
    for (const auto& c : coords)
      if (seen.insert(c, 0)) unique.push_back(c);
    return std::make_shared<const VoxelGrid>(scale, std::move(unique));
  }

  int scale() const { return scale_; }
  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  const std::vector<VoxelCoord>& coords() const { return coords_; }
  const VoxelCoord& operator[](std::size_t row) const { return coords_[row]; }

  std::optional<std::uint32_t> find(const VoxelCoord& c) const {
    const auto row = index_.find(c);
    if (row == VoxelHashIndex::kEmpty) return std::nullopt;
    return static_cast<std::uint32_t>(row);
  }

 private:
  int scale_;
  std::vector<VoxelCoord> coords_;
  VoxelHashIndex index_;
};

using GridPtr = std::shared_ptr<const VoxelGrid>;

/// Sparse tensor: a voxel grid plus a feature row per voxel. `Features` is a
/// plain Tensor for stored values or a tape Var inside a forward pass.
template <class Features>
struct BasicSparseTensor {
  GridPtr grid;
  Features feats;

  std::size_t size() const { return grid ? grid->size() : 0; }
  int scale() const { return grid->scale(); }
};

using SparseVoxelTensor = BasicSparseTensor<Tensor>;

// ---------------------------------------------------------------------------
// Voxelization

struct Voxelization {
  SparseVoxelTensor tensor;
  std::vector<std::uint32_t> assignment;  // input point -> voxel row
};

inline constexpr std::size_t kVoxelInputChannels = 4;

/// Quantizes points to scale-0 cells. Features per voxel: a constant one and
/// the mean offset of its points from the cell center, in cell units.
inline Voxelization voxelize(const PointCloud& points, double l_vox) {
  if (points.empty()) throw InputError("voxelize: empty point cloud");
  if (!(l_vox > 0)) throw InputError("voxelize: voxel length must be positive");
  VoxelHashIndex index(points.size());
  std::vector<VoxelCoord> coords;
  std::vector<std::uint32_t> assignment(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const VoxelCoord c = quantize(points[i], l_vox);
    auto row = index.find(c);
    if (row == VoxelHashIndex::kEmpty) {
      row = static_cast<std::int32_t>(coords.size());
      index.insert(c, row);
      coords.push_back(c);
    }
    assignment[i] = static_cast<std::uint32_t>(row);
  }
  Tensor feats(Shape{coords.size(), kVoxelInputChannels});
  std::vector<double> counts(coords.size(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = assignment[i];
    const Point3 center = coords[r].center(l_vox);
    counts[r] += 1;
    for (int a = 0; a < 3; ++a) feats(r, 1 + a) += (points[i][a] - center[a]) / l_vox;
  }
  for (std::size_t r = 0; r < coords.size(); ++r) {
    feats(r, 0) = 1.0;
    for (int a = 0; a < 3; ++a) feats(r, 1 + a) /= counts[r];
  }
  return {{std::make_shared<const VoxelGrid>(0, std::move(coords)), std::move(feats)}, std::move(assignment)};
}

// ---------------------------------------------------------------------------
// Neighborhood queries

struct KernelOffset {
  int dx, dy, dz;
  friend bool operator==(const KernelOffset&, const KernelOffset&) = default;
};

/// The 27 offsets of a 3x3x3 kernel, x-major; index 13 is the center.
inline const std::vector<KernelOffset>& kernel3_offsets() {
  static const std::vector<KernelOffset> offsets = [] {
    std::vector<KernelOffset> o;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) o.push_back({dx, dy, dz});
    return o;
  }();
  return offsets;
}

/// The 8 child offsets {0,1}^3 of a stride-2 upsampling, x-major.
inline const std::vector<KernelOffset>& child_offsets() {
  static const std::vector<KernelOffset> offsets = [] {
    std::vector<KernelOffset> o;
    for (int dx = 0; dx <= 1; ++dx)
      for (int dy = 0; dy <= 1; ++dy)
        for (int dz = 0; dz <= 1; ++dz) o.push_back({dx, dy, dz});
    return o;
  }();
  return offsets;
}

struct NeighborHit {
  KernelOffset offset;
  std::optional<std::uint32_t> row;
};

inline std::vector<NeighborHit> neighbor_rows(const VoxelGrid& grid, const VoxelCoord& center, const std::vector<KernelOffset>& offsets) {
  if (offsets.empty()) throw InputError("neighbor_rows: empty offset list");
  std::vector<NeighborHit> hits;
  hits.reserve(offsets.size());
  for (const auto& o : offsets) hits.push_back({o, grid.find(center.offset(o.dx, o.dy, o.dz))});
  return hits;
}

}  // namespace svrecon
