// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "oracles.hpp"
#include "trials.hpp"
#include "svrecon/losses.hpp"
#include "svrecon/metrics.hpp"

using namespace svrecon;
using oracle::Rng;

namespace {
Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}
}  // namespace

// ---------------------------------------------------------------------------
// point_to_set_sq

TEST(PointToSet, MemberIsZero) {
  const PointCloud s{{1, 2, 3}, {0, 0, 0}};
  EXPECT_EQ(point_to_set_sq({1, 2, 3}, s, 1), 0.0);
}

TEST(PointToSet, TwoPointMean) { EXPECT_DOUBLE_EQ(point_to_set_sq({0, 0, 0}, {{1, 0, 0}, {0, 2, 0}}, 2), 2.5); }

TEST(PointToSet, MatchesFullSort) {
  Rng rng(201);
  for (int trial = 0; trial < 100; ++trial) {
    const PointCloud s = oracle::random_cloud(static_cast<std::size_t>(oracle::uniform_int(rng, 1, 50)), rng);
    const Point3 p = oracle::random_cloud(1, rng)[0];
    const std::size_t k = static_cast<std::size_t>(oracle::uniform_int(rng, 1, static_cast<int>(s.size())));
    EXPECT_NEAR(point_to_set_sq(p, s, k), oracle::mean_k_smallest(p, s, k), 1e-15);
  }
}

TEST(PointToSet, Errors) {
  EXPECT_THROW(point_to_set_sq({0, 0, 0}, {{1, 0, 0}}, 2), InputError);
  EXPECT_THROW(point_to_set_sq({0, 0, 0}, {{1, 0, 0}}, 0), InputError);
}

// ---------------------------------------------------------------------------
// accuracy, completeness, f_score

TEST(Accuracy, Examples) {
  Rng rng(203);
  const PointCloud a = oracle::random_cloud(50, rng);
  EXPECT_EQ(accuracy(a, a, 0.02), 100.0);
  EXPECT_EQ(accuracy({{0, 0, 0}}, {{0.1, 0, 0}}, 0.02), 100.0);  // squared distance 0.01
  EXPECT_EQ(accuracy({{0, 0, 0}}, {{0.2, 0, 0}}, 0.02), 0.0);    // squared distance 0.04
  EXPECT_EQ(accuracy({{0, 0, 0}, {1, 0, 0}}, {{0, 0, 0}}, 0.02), 50.0);
  EXPECT_THROW(accuracy({}, a, 0.02), InputError);
  EXPECT_THROW(accuracy(a, {}, 0.02), InputError);
}

TEST(Completeness, Examples) {
  Rng rng(205);
  const PointCloud a = oracle::random_cloud(50, rng);
  EXPECT_EQ(completeness(a, a, 0.02), 100.0);
  // the far ground-truth point is not covered
  EXPECT_EQ(completeness({{0, 0, 0}}, {{0, 0, 0}, {0, 0, 5}}, 0.02), 50.0);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud p = oracle::random_cloud(40, rng), g = oracle::random_cloud(30, rng);
    EXPECT_EQ(completeness(p, g, 0.01), accuracy(g, p, 0.01));
  }
}

TEST(Accuracy, MonotoneInThreshold) {
  Rng rng(207);
  const PointCloud p = oracle::random_cloud(300, rng), g = oracle::random_cloud(200, rng);
  double prev_a = 0, prev_c = 0;
  for (double t : {1e-5, 1e-4, 1e-3, 3e-3, 1e-2, 0.1, 1.0}) {
    const double a = accuracy(p, g, t), c = completeness(p, g, t);
    EXPECT_GE(a, prev_a);
    EXPECT_GE(c, prev_c);
    EXPECT_LE(a, 100.0);
    prev_a = a;
    prev_c = c;
  }
}

TEST(FScore, Examples) {
  EXPECT_DOUBLE_EQ(f_score(37.5, 37.5), 37.5);
  EXPECT_EQ(f_score(0, 80), 0.0);
  EXPECT_EQ(f_score(0, 0), 0.0);
  EXPECT_NEAR(f_score(81.02, 40.41), 53.92, 0.005);
  EXPECT_THROW(f_score(-1, 10), InputError);
}

TEST(FScore, BetweenInputs) {
  Rng rng(209);
  for (int i = 0; i < 1000; ++i) {
    const double a = oracle::uniform(rng, 0.01, 100), c = oracle::uniform(rng, 0.01, 100);
    const double f = f_score(a, c);
    EXPECT_GE(f, std::min(a, c) * (1 - 1e-15));
    EXPECT_LE(f, std::max(a, c) * (1 + 1e-15));
  }
}

// ---------------------------------------------------------------------------
// chamfer

TEST(Chamfer, Examples) {
  Rng rng(211);
  const PointCloud a = oracle::random_cloud(30, rng);
  EXPECT_EQ(chamfer(a, a), 0.0);
  EXPECT_EQ(chamfer({{0, 0, 0}}, {{1, 0, 0}}), 2.0);
  EXPECT_THROW(k_chamfer({{0, 0, 0}}, a, 2), InputError);
  EXPECT_THROW(chamfer({}, a), InputError);
}

TEST(Chamfer, SymmetricUnderSwap) {
  Rng rng(213);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud a = oracle::random_cloud(60, rng), b = oracle::random_cloud(45, rng);
    for (std::size_t k : {1, 2, 4}) EXPECT_NEAR(k_chamfer(a, b, k), k_chamfer(b, a, k), 1e-15);
  }
}

TEST(Metrics, MatchPairwiseOracles) {
  Rng rng(215);
  for (int trial = 0; trial < 15; ++trial) {
    const auto r = trials::metric_pair_trial(rng, 600);
    EXPECT_LT(r.worst_rel, 1e-9);
    EXPECT_TRUE(r.monotone_in_k);
    EXPECT_TRUE(r.symmetric);
  }
}

// ---------------------------------------------------------------------------
// Report

TEST(Report, RendersAndParsesBack) {
  Rng rng(217);
  const PointCloud p = oracle::random_cloud(200, rng), g = oracle::random_cloud(300, rng);
  const MetricReport r = evaluate_metrics(p, g, {0.0025, 0.02}, {1, 2, 4});
  EXPECT_EQ(r.n_pred, 200u);
  EXPECT_EQ(r.k_chamfer.at(1), k_chamfer(p, g, 1));
  EXPECT_EQ(r.accuracy.at(0.02), accuracy(p, g, 0.02));
  EXPECT_EQ(r.f_score.at(0.0025), f_score(accuracy(p, g, 0.0025), completeness(p, g, 0.0025)));
  const std::string text = render_report(r);
  EXPECT_NE(text.find("(x1000)"), std::string::npos);
  EXPECT_EQ(parse_report(text), r);
}

TEST(Report, Errors) {
  EXPECT_THROW(parse_report("no block here\n"), InputError);
  EXPECT_THROW(parse_report("[metrics]\nn_pred=3\n"), InputError);
  EXPECT_THROW(parse_report("[metrics]\nbogus=1\n[end]\n"), InputError);
  EXPECT_THROW(parse_report("[metrics]\nk_chamfer.1=abc\n[end]\n"), InputError);
  EXPECT_THROW(evaluate_metrics({{0, 0, 0}}, {{1, 1, 1}}, {0.02}, {2}), InputError);
}

// ---------------------------------------------------------------------------
// Losses

TEST(VoxelLoss, NoIntermediateGroups) {
  Tape t;
  const std::vector<double> y{1, 0, 1};
  Var z = t.constant(vec({0.3, -1.2, 2.0}));
  EXPECT_EQ(voxel_bce_and_total({z, y}, {}).value().item(), ops::bce_with_logits(z, y).value().item());
}

TEST(VoxelLoss, SaturatedLogits) {
  Tape t;
  const std::vector<double> y{1, 0, 1, 0};
  Var z = t.constant(vec({20, -20, 20, -20}));
  EXPECT_LT(voxel_bce_and_total({z, y}, {{z, y}, {z, y}}).value().item(), 1e-7);
}

TEST(VoxelLoss, TermByTermComposition) { EXPECT_LT(trials::voxel_loss_composition_error(), 1e-12); }

TEST(VoxelLoss, EmptyGroupRejected) {
  Tape t;
  EXPECT_THROW(voxel_bce_and_total({t.constant(Tensor(Shape{0})), {}}, {}), DimensionError);
}

TEST(ChamferLoss, EqualsPairwiseOracle) {
  Rng rng(219);
  EXPECT_LT(trials::chamfer_loss_error(rng, 20), 1e-12);
}

TEST(ChamferLoss, Errors) {
  Tape t;
  const KdTree3 tree({{0, 0, 0}});
  EXPECT_THROW(chamfer_loss(t.constant(Tensor(Shape{2, 2})), tree), DimensionError);
  EXPECT_THROW(chamfer_loss(t.constant(Tensor(Shape{2, 3})), KdTree3({})), InputError);
}
