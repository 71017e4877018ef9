// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "svrecon/geometry.hpp"
#include "svrecon/tensor.hpp"

namespace svrecon {

/// Static 3-d tree over a point cloud for exact k-nearest queries.
class KdTree3 {
 public:
  using Hit = std::pair<double, std::uint32_t>;  // (squared distance, point index)

  explicit KdTree3(PointCloud points) : points_(std::move(points)), order_(points_.size()) {
    std::iota(order_.begin(), order_.end(), 0u);
    if (!points_.empty()) root_ = build(0, order_.size(), 0);
  }

  std::size_t size() const { return points_.size(); }
  const PointCloud& points() const { return points_; }

  /// k nearest points sorted by ascending squared distance.
  void knn(const Point3& q, std::size_t k, std::vector<Hit>& out) const {
    out.clear();
    if (k == 0) return;
    if (k > points_.size()) throw InputError("k-nearest query with k larger than the point set");
    search(root_, q, k, out);
    std::sort_heap(out.begin(), out.end());
  }

  Hit nearest(const Point3& q) const {
    std::vector<Hit> h;
    knn(q, 1, h);
    return h.front();
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::uint32_t begin, end;  // range in order_ (leaves only)
    int axis = -1;             // -1 marks a leaf
    double split = 0;
    std::int32_t left = -1, right = -1;
  };

  std::int32_t build(std::size_t begin, std::size_t end, int depth) {
    Node node{static_cast<std::uint32_t>(begin), static_cast<std::uint32_t>(end)};
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;
    // split along the widest extent
    Point3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
    Point3 hi{-lo[0], -lo[1], -lo[2]};
    for (std::size_t i = begin; i < end; ++i)
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], points_[order_[i]][a]);
        hi[a] = std::max(hi[a], points_[order_[i]][a]);
      }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
    (void)depth;
    const std::size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const auto left = build(begin, mid, depth + 1);
    const auto right = build(mid, end, depth + 1);
    Node& n = nodes_[static_cast<std::size_t>(id)];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return id;
  }

  void search(std::int32_t id, const Point3& q, std::size_t k, std::vector<Hit>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (std::uint32_t i = n.begin; i < n.end; ++i) {
        const std::uint32_t idx = order_[i];
        const double d2 = squared_distance(q, points_[idx]);
        if (heap.size() < k) {
          heap.emplace_back(d2, idx);
          std::push_heap(heap.begin(), heap.end());
        } else if (d2 < heap.front().first) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = {d2, idx};
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const auto near = diff < 0 ? n.left : n.right;
    const auto far = diff < 0 ? n.right : n.left;
    search(near, q, k, heap);
    if (heap.size() < k || diff * diff < heap.front().first) search(far, q, k, heap);
  }

  PointCloud points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

}  // namespace svrecon
