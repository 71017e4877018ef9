// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <vector>

#include "svrecon/kdtree.hpp"
#include "svrecon/ops.hpp"

namespace svrecon {

struct LabeledLogits {
  Var logits;
  std::vector<double> labels;
};

/// BCE on the final voxels plus half the mean BCE over intermediate groups.
inline Var voxel_bce_and_total(const LabeledLogits& out, const std::vector<LabeledLogits>& mid) {
  Var total = ops::bce_with_logits(out.logits, out.labels);
  if (mid.empty()) return total;
  Var mid_sum = ops::bce_with_logits(mid[0].logits, mid[0].labels);
  for (std::size_t i = 1; i < mid.size(); ++i) mid_sum = ops::add(mid_sum, ops::bce_with_logits(mid[i].logits, mid[i].labels));
  return ops::add(total, ops::scale(mid_sum, 0.5 / static_cast<double>(mid.size())));
}

/// Symmetric chamfer distance with squared Euclidean terms, differentiable in
/// the predicted points [N x 3]. `gt_tree` indexes the fixed target cloud.
inline Var chamfer_loss(Var pred, const KdTree3& gt_tree) {
  if (pred.cols() != 3 || pred.rows() == 0) throw DimensionError("chamfer_loss: predictions must be [N x 3]");
  if (gt_tree.size() == 0) throw InputError("chamfer_loss: empty target");
  const std::size_t n = pred.rows();
  const PointCloud& gt = gt_tree.points();
  PointCloud p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = {pred.value()(i, 0), pred.value()(i, 1), pred.value()(i, 2)};
  const KdTree3 pred_tree(p);
  auto to_gt = std::make_shared<std::vector<std::uint32_t>>(n);
  auto to_pred = std::make_shared<std::vector<std::uint32_t>>(gt.size());
  double a = 0, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto h = gt_tree.nearest(p[i]);
    (*to_gt)[i] = h.second;
    a += h.first;
  }
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const auto h = pred_tree.nearest(gt[j]);
    (*to_pred)[j] = h.second;
    b += h.first;
  }
  const double value = a / static_cast<double>(n) + b / static_cast<double>(gt.size());
  return pred.tape->record("chamfer_loss", Tensor::scalar(value), {pred.id}, [ip = pred.id, to_gt, to_pred, &gt_tree](Tape& t, int self) {
    double* d = t.grad_if_needed(ip);
    if (!d) return;
    const double g = t.grad(self)[0];
    const auto& pv = t.value(ip).data;
    const PointCloud& gt = gt_tree.points();
    const double wa = 2.0 * g / static_cast<double>(to_gt->size());
    const double wb = 2.0 * g / static_cast<double>(gt.size());
    for (std::size_t i = 0; i < to_gt->size(); ++i)
      for (int c = 0; c < 3; ++c) d[i * 3 + c] += wa * (pv[i * 3 + c] - gt[(*to_gt)[i]][c]);
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const auto i = (*to_pred)[j];
      for (int c = 0; c < 3; ++c) d[i * 3 + c] += wb * (pv[i * 3 + c] - gt[j][c]);
    }
  });
}

}  // namespace svrecon
