// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "svrecon/dataset.hpp"
#include "svrecon/ply.hpp"

using namespace svrecon;

namespace {

ShapeSpec make_spec(ShapeKind kind, std::array<double, 3> dims, Point3 center = {0, 0, 0}) {
  ShapeSpec s;
  s.kind = kind;
  s.dims = dims;
  s.center = center;
  return s;
}

double dist(const Point3& a, const Point3& b) { return std::sqrt(oracle::d2(a, b)); }

}  // namespace

// ---------------------------------------------------------------------------
// Analytic shapes

TEST(SampleSurface, SpherePointsLieOnSurface) {
  Rng rng(301);
  const ShapeSpec s = make_spec(ShapeKind::sphere, {0.37, 0, 0}, {0.1, -0.2, 0.05});
  const PointCloud pts = sample_surface(s, 5000, rng);
  ASSERT_EQ(pts.size(), 5000u);
  for (const auto& p : pts) EXPECT_LT(std::abs(dist(p, s.center) - 0.37), 1e-12);
}

TEST(SampleSurface, BoxPointsLieOnExactlyOneFace) {
  Rng rng(303);
  const ShapeSpec s = make_spec(ShapeKind::box, {0.3, 0.2, 0.1});
  for (const auto& p : sample_surface(s, 5000, rng)) {
    int faces = 0;
    for (int a = 0; a < 3; ++a) faces += std::abs(std::abs(p[a]) - s.dims[a]) < 1e-12 ? 1 : 0;
    EXPECT_EQ(faces, 1);
    for (int a = 0; a < 3; ++a) EXPECT_LE(std::abs(p[a]), s.dims[a] + 1e-12);
  }
}

TEST(SampleSurface, BoxFaceCountsFollowAreaWithinThreeSigma) {
  Rng rng(305);
  const ShapeSpec s = make_spec(ShapeKind::box, {0.3, 0.2, 0.1});
  const std::size_t n = 100000;
  std::array<std::size_t, 6> counts{};
  for (const auto& p : sample_surface(s, n, rng))
    for (int a = 0; a < 3; ++a)
      if (std::abs(std::abs(p[a]) - s.dims[a]) < 1e-12) ++counts[static_cast<std::size_t>(2 * a + (p[a] > 0 ? 1 : 0))];
  const double total = surface_area(s);
  for (int a = 0; a < 3; ++a) {
    const double area = 4 * s.dims[(a + 1) % 3] * s.dims[(a + 2) % 3];
    const double prob = area / total, mean = prob * static_cast<double>(n), sigma = std::sqrt(static_cast<double>(n) * prob * (1 - prob));
    for (int side = 0; side < 2; ++side) EXPECT_LT(std::abs(static_cast<double>(counts[static_cast<std::size_t>(2 * a + side)]) - mean), 3 * sigma);
  }
}

TEST(SampleSurface, EveryKindIsOnItsSurfaceAndInsideTheBall) {
  Rng rng(307);
  for (ShapeKind kind : all_shape_kinds())
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng shape_rng(seed);
      const ShapeSpec s = random_shape(kind, seed, shape_rng);
      for (const auto& p : sample_surface(s, 500, rng)) {
        EXPECT_LT(surface_distance(s, p), 1e-12) << to_string(kind);
        EXPECT_LT(dist(p, {0, 0, 0}), 0.45 + 1e-12) << to_string(kind);
      }
    }
}

TEST(SampleSurface, SurfaceDistanceOffSurface) {
  const ShapeSpec sphere = make_spec(ShapeKind::sphere, {0.3, 0, 0});
  EXPECT_NEAR(surface_distance(sphere, {0.5, 0, 0}), 0.2, 1e-15);
  EXPECT_NEAR(surface_distance(sphere, {0, 0, 0}), 0.3, 1e-15);
  const ShapeSpec box = make_spec(ShapeKind::box, {0.3, 0.2, 0.1});
  EXPECT_NEAR(surface_distance(box, {0, 0, 0}), 0.1, 1e-15);
  EXPECT_NEAR(surface_distance(box, {0.4, 0, 0}), 0.1, 1e-15);
}

TEST(SampleSurface, InvalidParameters) {
  Rng rng(309);
  EXPECT_THROW(sample_surface(make_spec(ShapeKind::sphere, {0, 0, 0}), 10, rng), InputError);
  EXPECT_THROW(sample_surface(make_spec(ShapeKind::torus, {0.1, 0.2, 0}), 10, rng), InputError);
  EXPECT_THROW(sample_surface(make_spec(ShapeKind::sphere, {0.3, 0, 0}), 0, rng), InputError);
  EXPECT_THROW(parse_shape_kind("cone"), InputError);
  for (ShapeKind k : all_shape_kinds()) EXPECT_EQ(parse_shape_kind(to_string(k)), k);
}

// ---------------------------------------------------------------------------
// poisson_disk

TEST(PoissonDisk, ClosePairKeepsOne) { EXPECT_EQ(poisson_disk({{0, 0, 0}, {0.05, 0, 0}}, 0.1).size(), 1u); }

TEST(PoissonDisk, SeparatedPointsAreUnchanged) {
  const PointCloud pts{{0, 0, 0}, {0.2, 0, 0}, {0, 0.2, 0}, {0.1, 0.1, 0.3}};
  EXPECT_EQ(poisson_disk(pts, 0.1), pts);
}

TEST(PoissonDisk, SeparationAndMaximalityByScan) {
  Rng rng(311);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud pts = oracle::random_cloud(1500, rng, -0.5, 0.5);
    const double r = oracle::uniform(rng, 0.02, 0.2);
    const PointCloud kept = poisson_disk(pts, r);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) ASSERT_GE(dist(kept[i], kept[j]), r);
    for (const auto& p : pts) {
      bool covered = false;
      for (const auto& k : kept) covered = covered || dist(p, k) < r || p == k;
      ASSERT_TRUE(covered);
    }
  }
  EXPECT_THROW(poisson_disk({{0, 0, 0}}, 0.0), InputError);
}

// ---------------------------------------------------------------------------
// augment

namespace {
PointCloud dense_sphere(std::size_t n) {
  Rng rng(313);
  return sample_surface(make_spec(ShapeKind::sphere, {0.3, 0, 0}), n, rng);
}
}  // namespace

TEST(Augment, CleanSubsetWhenNoiseScaleAndOutliersAreOff) {
  const PointCloud gt = dense_sphere(3000);
  AugmentConfig cfg;
  cfg.fixed_sigma = 0;
  cfg.fixed_scale = 1;
  cfg.fixed_outliers = 0;
  Rng rng(315);
  const Sample s = augment(gt, cfg, rng);
  ASSERT_EQ(s.input.size(), 2048u);
  EXPECT_EQ(s.gt, gt);
  EXPECT_TRUE(s.record.outlier_indices.empty());
  std::set<std::uint32_t> distinct(s.record.source_indices.begin(), s.record.source_indices.end());
  EXPECT_EQ(distinct.size(), 2048u);
  for (std::size_t i = 0; i < s.input.size(); ++i) EXPECT_EQ(s.input[i], gt[s.record.source_indices[i]]);
}

TEST(Augment, OutlierCountIsBounded) {
  const PointCloud gt = dense_sphere(2500);
  AugmentConfig cfg;
  EXPECT_EQ(cfg.max_outliers(), 102u);
  Rng rng(317);
  for (int i = 0; i < 100; ++i) {
    const Sample s = augment(gt, cfg, rng);
    EXPECT_LE(s.record.outlier_indices.size(), 102u);
    EXPECT_GE(s.record.noise_sigma, 0.0);
    EXPECT_LE(s.record.noise_sigma, 0.01);
    EXPECT_GE(s.record.scale, 0.8);
    EXPECT_LE(s.record.scale, 1.25);
  }
  cfg.fixed_outliers = 103;
  EXPECT_THROW(augment(gt, cfg, rng), InputError);
}

TEST(Augment, NonOutliersArePerturbedScaledGroundTruth) {
  const PointCloud gt = dense_sphere(2500);
  AugmentConfig cfg;
  cfg.fixed_outliers = 60;
  Rng rng(319);
  const Sample s = augment(gt, cfg, rng);
  const std::set<std::uint32_t> outliers(s.record.outlier_indices.begin(), s.record.outlier_indices.end());
  EXPECT_EQ(outliers.size(), 60u);
  for (std::size_t i = 0; i < gt.size(); ++i)
    for (int a = 0; a < 3; ++a) EXPECT_DOUBLE_EQ(s.gt[i][a], gt[i][a] * s.record.scale);
  Point3 lo = s.gt[0], hi = s.gt[0];
  for (const auto& p : s.gt)
    for (int a = 0; a < 3; ++a) lo[a] = std::min(lo[a], p[a]), hi[a] = std::max(hi[a], p[a]);
  for (std::size_t i = 0; i < s.input.size(); ++i) {
    if (outliers.count(static_cast<std::uint32_t>(i))) {
      for (int a = 0; a < 3; ++a) {
        const double mid = (lo[a] + hi[a]) / 2, half = 0.6 * (hi[a] - lo[a]);
        EXPECT_LE(std::abs(s.input[i][a] - mid), half + 1e-12);
      }
    } else {
      EXPECT_LT(dist(s.input[i], s.gt[s.record.source_indices[i]]), 8 * s.record.noise_sigma + 1e-15);
    }
  }
}

TEST(Augment, SameSeedSameSample) {
  const PointCloud gt = dense_sphere(2500);
  Rng a(321), b(321);
  EXPECT_EQ(augment(gt, {}, a), augment(gt, {}, b));
}

TEST(Augment, TooFewGroundTruthPoints) {
  Rng rng(323);
  EXPECT_THROW(augment(dense_sphere(2047), {}, rng), InputError);
}

// ---------------------------------------------------------------------------
// Dataset

TEST(Dataset, SplitIsDisjointBalancedAndSeedStable) {
  const auto all = make_dataset(200, 7);
  EXPECT_EQ(all, make_dataset(200, 7));
  EXPECT_NE(all, make_dataset(200, 8));
  const auto train = select(all, Split::train), val = select(all, Split::val);
  EXPECT_EQ(val.size(), 40u);
  EXPECT_EQ(train.size() + val.size(), all.size());
  std::set<std::uint64_t> train_seeds;
  for (const auto& e : train) train_seeds.insert(e.seed);
  for (const auto& e : val) EXPECT_FALSE(train_seeds.count(e.seed));
  std::map<ShapeKind, int> per_kind;
  for (const auto& e : all) ++per_kind[e.kind];
  for (ShapeKind k : all_shape_kinds()) EXPECT_EQ(per_kind[k], 40);
}

TEST(Dataset, ManifestRoundTrip) {
  const auto all = make_dataset(23, 3);
  std::stringstream ss;
  write_manifest(ss, all);
  EXPECT_EQ(read_manifest(ss), all);
  std::istringstream bad("sphere 12 test\n");
  EXPECT_THROW(read_manifest(bad), InputError);
  std::istringstream short_line("sphere\n");
  EXPECT_THROW(read_manifest(short_line), InputError);
}

TEST(Dataset, SampleIsReproducibleFromEntry) {
  const auto all = make_dataset(5, 11);
  DataConfig cfg;
  cfg.gt_points = 3000;
  EXPECT_EQ(make_sample(all[2], cfg), make_sample(all[2], cfg));
  EXPECT_NE(make_sample(all[2], cfg).input, make_sample(all[3], cfg).input);
}

TEST(Dataset, GroundTruthSizeNearTarget) {
  for (ShapeKind kind : all_shape_kinds()) {
    Rng shape_rng(9);
    const ShapeSpec s = random_shape(kind, 9, shape_rng);
    Rng rng(10);
    const auto gt = ground_truth_points(s, 10000, rng);
    EXPECT_GT(gt.size(), 8000u) << to_string(kind);
    EXPECT_LT(gt.size(), 12000u) << to_string(kind);
  }
}

TEST(Dataset, NoiseFreeSubsampleIsOnSurface) {
  const auto all = make_dataset(10, 13);
  DataConfig cfg;
  cfg.gt_points = 3000;
  cfg.augment.fixed_sigma = 0;
  cfg.augment.fixed_scale = 1;
  cfg.augment.fixed_outliers = 0;
  for (const auto& e : all) {
    const ShapeSpec s = shape_for(e);
    for (const auto& p : make_sample(e, cfg).input) EXPECT_LT(surface_distance(s, p), 1e-12) << to_string(e.kind);
  }
}

// ---------------------------------------------------------------------------
// PLY

TEST(Ply, RoundTrip) {
  oracle::Rng rng(325);
  const PointCloud pts = oracle::random_cloud(500, rng, -3, 3);
  std::stringstream ss;
  write_ply(ss, pts);
  const PointCloud back = read_ply(ss);
  ASSERT_EQ(back.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int a = 0; a < 3; ++a) EXPECT_LT(std::abs(back[i][a] - pts[i][a]), 1e-8);
}

TEST(Ply, ExtraPropertiesAreIgnored) {
  std::istringstream is(
      "ply\nformat ascii 1.0\ncomment colored\nelement vertex 2\nproperty uchar red\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar green\nend_header\n255 1 2 3 0\n10 -4 5.5 6 7\n");
  EXPECT_EQ(read_ply(is), (PointCloud{{1, 2, 3}, {-4, 5.5, 6}}));
}

TEST(Ply, Errors) {
  const std::string head = "ply\nformat ascii 1.0\nelement vertex 10\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  std::string nine;
  for (int i = 0; i < 9; ++i) nine += "0 0 0\n";
  std::istringstream truncated(head + nine);
  EXPECT_THROW(read_ply(truncated), InputError);
  std::istringstream not_ply("hello\n");
  EXPECT_THROW(read_ply(not_ply), InputError);
  std::istringstream binary("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n");
  EXPECT_THROW(read_ply(binary), InputError);
  std::istringstream no_z("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n");
  EXPECT_THROW(read_ply(no_z), InputError);
  std::istringstream nan_row("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\nnan 0 0\n");
  EXPECT_THROW(read_ply(nan_row), InputError);
  std::stringstream out;
  EXPECT_THROW(write_ply(out, {}), InputError);
  EXPECT_THROW(write_ply(out, {{0, INFINITY, 0}}), NumericalError);
}
