// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "svrecon/shapes.hpp"
#include "svrecon/voxel.hpp"

namespace svrecon {

using Rng = std::mt19937_64;

/// Greedy elimination in input order: a point is kept unless a previously
/// kept point lies strictly closer than `radius`.
inline PointCloud poisson_disk(const PointCloud& points, double radius) {
  if (!(radius > 0) || !std::isfinite(radius)) throw InputError("poisson_disk: radius must be positive");
  const double r2 = radius * radius;
  VoxelHashIndex cells;
  std::vector<std::vector<std::uint32_t>> buckets;
  PointCloud kept;
  auto cell_of = [&](const Point3& p) {
    return VoxelCoord{static_cast<std::int32_t>(std::floor(p[0] / radius)), static_cast<std::int32_t>(std::floor(p[1] / radius)),
                      static_cast<std::int32_t>(std::floor(p[2] / radius)), 0};
  };
  for (const Point3& p : points) {
    const VoxelCoord c = cell_of(p);
    bool blocked = false;
    for (int dx = -1; dx <= 1 && !blocked; ++dx)
      for (int dy = -1; dy <= 1 && !blocked; ++dy)
        for (int dz = -1; dz <= 1 && !blocked; ++dz) {
          const auto slot = cells.find(c.offset(dx, dy, dz));
          if (slot == VoxelHashIndex::kEmpty) continue;
          for (std::uint32_t j : buckets[static_cast<std::size_t>(slot)])
            if (squared_distance(p, kept[j]) < r2) {
              blocked = true;
              break;
            }
        }
    if (blocked) continue;
    auto slot = cells.find(c);
    if (slot == VoxelHashIndex::kEmpty) {
      slot = static_cast<std::int32_t>(buckets.size());
      cells.insert(c, slot);
      buckets.emplace_back();
    }
    buckets[static_cast<std::size_t>(slot)].push_back(static_cast<std::uint32_t>(kept.size()));
    kept.push_back(p);
  }
  return kept;
}

struct AugmentConfig {
  std::size_t n_input = 2048;
  double sigma_max = 0.01;
  double scale_min = 0.8;
  double scale_max = 1.25;
  double outlier_fraction = 0.05;
  double outlier_box = 1.2;
  // Overrides for controlled experiments; negative means "draw at random".
  double fixed_sigma = -1;
  double fixed_scale = -1;
  long fixed_outliers = -1;

  std::size_t max_outliers() const {
    return static_cast<std::size_t>(std::floor(outlier_fraction * static_cast<double>(n_input)));
  }
};

struct AugmentRecord {
  double noise_sigma = 0;
  double scale = 1;
  std::vector<std::uint32_t> source_indices;   // gt index behind each input point
  std::vector<std::uint32_t> outlier_indices;  // input positions replaced by outliers, ascending

  friend bool operator==(const AugmentRecord&, const AugmentRecord&) = default;
};

struct Sample {
  PointCloud gt;     // rescaled ground truth
  PointCloud input;  // noisy subsample with outliers
  AugmentRecord record;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Subsample, rescale, add noise and inject outliers. The rescale applies to
/// the ground truth too so that `input` and `gt` stay in the same frame.
inline Sample augment(const PointCloud& gt, const AugmentConfig& cfg, Rng& rng) {
  if (cfg.n_input == 0) throw InputError("augment: n_input must be positive");
  if (gt.size() < cfg.n_input)
    throw InputError("augment: ground truth has " + std::to_string(gt.size()) + " points, need at least " + std::to_string(cfg.n_input));
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Sample s;
  AugmentRecord& rec = s.record;

  std::vector<std::uint32_t> idx(gt.size());
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t i = 0; i < cfg.n_input; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(cfg.n_input);
  rec.source_indices = idx;
  rec.noise_sigma = cfg.fixed_sigma >= 0 ? cfg.fixed_sigma : cfg.sigma_max * U(rng);
  rec.scale = cfg.fixed_scale > 0 ? cfg.fixed_scale : cfg.scale_min + (cfg.scale_max - cfg.scale_min) * U(rng);

  s.gt = gt;
  for (Point3& p : s.gt)
    for (double& v : p) v *= rec.scale;

  std::normal_distribution<double> N(0.0, 1.0);
  s.input.resize(cfg.n_input);
  for (std::size_t i = 0; i < cfg.n_input; ++i)
    for (int a = 0; a < 3; ++a) s.input[i][a] = s.gt[idx[i]][a] + (rec.noise_sigma > 0 ? rec.noise_sigma * N(rng) : 0.0);

  const std::size_t cap = cfg.max_outliers();
  std::size_t m;
  if (cfg.fixed_outliers >= 0) {
    m = static_cast<std::size_t>(cfg.fixed_outliers);
    if (m > cap) throw InputError("augment: outlier count exceeds the configured fraction");
  } else {
    m = std::uniform_int_distribution<std::size_t>(0, cap)(rng);
  }
  Point3 lo = s.gt[0], hi = s.gt[0];
  for (const Point3& p : s.gt)
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]), hi[a] = std::max(hi[a], p[a]);
  std::vector<std::uint32_t> pos(cfg.n_input);
  std::iota(pos.begin(), pos.end(), 0u);
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pos.size() - 1);
    std::swap(pos[i], pos[pick(rng)]);
  }
  pos.resize(m);
  std::sort(pos.begin(), pos.end());
  for (std::uint32_t i : pos)
    for (int a = 0; a < 3; ++a) {
      const double mid = (lo[a] + hi[a]) / 2, half = (hi[a] - lo[a]) / 2 * cfg.outlier_box;
      s.input[i][a] = mid - half + 2 * half * U(rng);
    }
  rec.outlier_indices = std::move(pos);
  return s;
}

// ---------------------------------------------------------------------------
// Dataset

enum class Split { train, val };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

struct DatasetEntry {
  ShapeKind kind = ShapeKind::sphere;
  std::uint64_t seed = 0;
  Split split = Split::train;

  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

struct DataConfig {
  std::size_t gt_points = 10000;
  AugmentConfig augment;
};

/// Kinds cycle so every kind is equally represented; the split assigns a
/// seeded 20% of entries to validation.
inline std::vector<DatasetEntry> make_dataset(std::size_t n_shapes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DatasetEntry> out(n_shapes);
  const auto& kinds = all_shape_kinds();
  for (std::size_t i = 0; i < n_shapes; ++i) {
    out[i].kind = kinds[i % kinds.size()];
    out[i].seed = rng();
  }
  std::vector<std::size_t> order(n_shapes);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n_shapes; i > 1; --i) std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n_shapes)));
  for (std::size_t i = 0; i < n_val; ++i) out[order[i]].split = Split::val;
  return out;
}

inline std::vector<DatasetEntry> select(const std::vector<DatasetEntry>& all, Split s) {
  std::vector<DatasetEntry> out;
  std::copy_if(all.begin(), all.end(), std::back_inserter(out), [s](const DatasetEntry& e) { return e.split == s; });
  return out;
}

inline ShapeSpec shape_for(const DatasetEntry& e) {
  Rng rng(e.seed);
  return random_shape(e.kind, e.seed, rng);
}

/// Dense surface sample thinned by Poisson-disk elimination to roughly
/// `gt_points` points.
inline PointCloud ground_truth_points(const ShapeSpec& spec, std::size_t gt_points, Rng& rng) {
  if (gt_points == 0) throw InputError("ground truth point count must be positive");
  // greedy elimination keeps about 0.5 / rho^2 points per unit area
  const double rho = std::sqrt(0.5 * surface_area(spec) / static_cast<double>(gt_points));
  return poisson_disk(sample_surface(spec, 4 * gt_points, rng), rho);
}

inline Sample make_sample(const DatasetEntry& e, const DataConfig& cfg) {
  Rng rng(e.seed ^ 0x9e3779b97f4a7c15ULL);
  const ShapeSpec spec = shape_for(e);
  return augment(ground_truth_points(spec, cfg.gt_points, rng), cfg.augment, rng);
}

inline void write_manifest(std::ostream& os, const std::vector<DatasetEntry>& entries) {
  for (const auto& e : entries) os << to_string(e.kind) << ' ' << e.seed << ' ' << to_string(e.split) << '\n';
}

inline std::vector<DatasetEntry> read_manifest(std::istream& is) {
  std::vector<DatasetEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind, split;
    DatasetEntry e;
    if (!(ls >> kind >> e.seed >> split)) throw InputError("manifest line " + std::to_string(lineno) + ": expected 'kind seed split'");
    e.kind = parse_shape_kind(kind);
    if (split == "train") e.split = Split::train;
    else if (split == "val") e.split = Split::val;
    else throw InputError("manifest line " + std::to_string(lineno) + ": unknown split '" + split + "'");
    out.push_back(e);
  }
  return out;
}

inline std::vector<DatasetEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open manifest '" + path + "'");
  return read_manifest(f);
}

}  // namespace svrecon
