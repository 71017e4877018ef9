// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

namespace svrecon {

using Point3 = std::array<double, 3>;
using PointCloud = std::vector<Point3>;

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace svrecon
