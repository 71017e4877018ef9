// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "svrecon/geometry.hpp"
#include "svrecon/tensor.hpp"

// Analytic primitive surfaces with exact area-uniform sampling and exact
// point-to-surface distance.

namespace svrecon {

enum class ShapeKind { sphere, box, cylinder, torus, corner };

inline const std::array<ShapeKind, 5>& all_shape_kinds() {
  static const std::array<ShapeKind, 5> k{ShapeKind::sphere, ShapeKind::box, ShapeKind::cylinder, ShapeKind::torus, ShapeKind::corner};
  return k;
}

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::torus: return "torus";
    case ShapeKind::corner: return "corner";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(const std::string& s) {
  for (ShapeKind k : all_shape_kinds())
    if (to_string(k) == s) return k;
  throw InputError("unknown shape kind '" + s + "'");
}

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 identity3() { return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}; }

/// Primitive in a local frame, placed by `rotation` then `center`.
///   sphere:   dims[0] = radius
///   box:      dims = half extents
///   cylinder: dims[0] = radius, dims[1] = half height (closed with caps)
///   torus:    dims[0] = major radius, dims[1] = tube radius
///   corner:   two perpendicular squares sharing an edge along y;
///             dims[0] = side length, dims[1] = half width along y.
///             Local sheets are {z=0, x in [0,s]} and {x=0, z in [0,s]},
///             shifted by -s/2 in x and z.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  Point3 center{0, 0, 0};
  std::array<double, 3> dims{0.4, 0, 0};
  Mat3 rotation = identity3();
  std::uint64_t seed = 0;

  void validate() const {
    auto pos = [](double v) { return v > 0 && std::isfinite(v); };
    bool ok = true;
    switch (kind) {
      case ShapeKind::sphere: ok = pos(dims[0]); break;
      case ShapeKind::box: ok = pos(dims[0]) && pos(dims[1]) && pos(dims[2]); break;
      case ShapeKind::cylinder: ok = pos(dims[0]) && pos(dims[1]); break;
      case ShapeKind::torus: ok = pos(dims[0]) && pos(dims[1]) && dims[1] < dims[0]; break;
      case ShapeKind::corner: ok = pos(dims[0]) && pos(dims[1]); break;
    }
    if (!ok) throw InputError("invalid parameters for shape " + to_string(kind));
  }
};

inline double surface_area(const ShapeSpec& s) {
  constexpr double pi = std::numbers::pi;
  const auto& d = s.dims;
  switch (s.kind) {
    case ShapeKind::sphere: return 4 * pi * d[0] * d[0];
    case ShapeKind::box: return 8 * (d[0] * d[1] + d[1] * d[2] + d[0] * d[2]);
    case ShapeKind::cylinder: return 2 * pi * d[0] * 2 * d[1] + 2 * pi * d[0] * d[0];
    case ShapeKind::torus: return 4 * pi * pi * d[0] * d[1];
    case ShapeKind::corner: return 2 * d[0] * 2 * d[1];
  }
  return 0;
}

namespace detail {
inline Point3 apply(const ShapeSpec& s, const Point3& local) {
  Point3 out;
  for (int r = 0; r < 3; ++r)
    out[r] = s.center[r] + s.rotation[r][0] * local[0] + s.rotation[r][1] * local[1] + s.rotation[r][2] * local[2];
  return out;
}

inline Point3 to_local(const ShapeSpec& s, const Point3& p) {
  const Point3 d{p[0] - s.center[0], p[1] - s.center[1], p[2] - s.center[2]};
  Point3 out;
  for (int c = 0; c < 3; ++c) out[c] = s.rotation[0][c] * d[0] + s.rotation[1][c] * d[1] + s.rotation[2][c] * d[2];
  return out;
}

inline double dist_to_rect(double u, double v, double w, double u0, double u1, double v0, double v1) {
  // distance from (u, v, w) to the rectangle [u0,u1] x [v0,v1] in the plane w = 0
  const double du = std::max({u0 - u, 0.0, u - u1});
  const double dv = std::max({v0 - v, 0.0, v - v1});
  return std::sqrt(du * du + dv * dv + w * w);
}
}  // namespace detail

/// n points exactly on the surface, uniform with respect to area.
template <class Rng>
PointCloud sample_surface(const ShapeSpec& s, std::size_t n, Rng& rng) {
  s.validate();
  if (n == 0) throw InputError("sample_surface: n must be positive");
  constexpr double pi = std::numbers::pi;
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  const auto& d = s.dims;
  PointCloud out;
  out.reserve(n);
  while (out.size() < n) {
    Point3 q{};
    switch (s.kind) {
      case ShapeKind::sphere: {
        Point3 g{N(rng), N(rng), N(rng)};
        const double len = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
        if (len < 1e-12) continue;
        q = {d[0] * g[0] / len, d[0] * g[1] / len, d[0] * g[2] / len};
        break;
      }
      case ShapeKind::box: {
        const double a01 = d[0] * d[1], a12 = d[1] * d[2], a02 = d[0] * d[2];
        const double pick = U(rng) * (a01 + a12 + a02);
        const double sign = U(rng) < 0.5 ? -1.0 : 1.0;
        const double u = 2 * U(rng) - 1, v = 2 * U(rng) - 1;
        if (pick < a01) q = {u * d[0], v * d[1], sign * d[2]};
        else if (pick < a01 + a12) q = {sign * d[0], u * d[1], v * d[2]};
        else q = {u * d[0], sign * d[1], v * d[2]};
        break;
      }
      case ShapeKind::cylinder: {
        const double side = 2 * pi * d[0] * 2 * d[1], cap = pi * d[0] * d[0];
        const double pick = U(rng) * (side + 2 * cap);
        const double theta = 2 * pi * U(rng);
        if (pick < side) {
          q = {d[0] * std::cos(theta), d[0] * std::sin(theta), d[1] * (2 * U(rng) - 1)};
        } else {
          const double rr = d[0] * std::sqrt(U(rng));
          q = {rr * std::cos(theta), rr * std::sin(theta), pick < side + cap ? d[1] : -d[1]};
        }
        break;
      }
      case ShapeKind::torus: {
        const double u = 2 * pi * U(rng), v = 2 * pi * U(rng);
        // area element is proportional to R + r cos v
        if (U(rng) * (d[0] + d[1]) > d[0] + d[1] * std::cos(v)) continue;
        const double ring = d[0] + d[1] * std::cos(v);
        q = {ring * std::cos(u), ring * std::sin(u), d[1] * std::sin(v)};
        break;
      }
      case ShapeKind::corner: {
        const double a = d[0] * U(rng), y = d[1] * (2 * U(rng) - 1);
        q = U(rng) < 0.5 ? Point3{a - d[0] / 2, y, -d[0] / 2} : Point3{-d[0] / 2, y, a - d[0] / 2};
        break;
      }
    }
    out.push_back(detail::apply(s, q));
  }
  return out;
}

/// Unsigned distance from p to the analytic surface.
inline double surface_distance(const ShapeSpec& s, const Point3& p) {
  const Point3 q = detail::to_local(s, p);
  const auto& d = s.dims;
  switch (s.kind) {
    case ShapeKind::sphere: return std::abs(std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]) - d[0]);
    case ShapeKind::box: {
      double out2 = 0, inside = std::numeric_limits<double>::max();
      bool outside = false;
      for (int a = 0; a < 3; ++a) {
        const double e = std::abs(q[a]) - d[a];
        if (e > 0) {
          outside = true;
          out2 += e * e;
        }
        inside = std::min(inside, -e);
      }
      return outside ? std::sqrt(out2) : inside;
    }
    case ShapeKind::cylinder: {
      const double dr = std::sqrt(q[0] * q[0] + q[1] * q[1]) - d[0];
      const double dz = std::abs(q[2]) - d[1];
      if (dr <= 0 && dz <= 0) return std::min(-dr, -dz);
      return std::sqrt(std::max(dr, 0.0) * std::max(dr, 0.0) + std::max(dz, 0.0) * std::max(dz, 0.0));
    }
    case ShapeKind::torus: {
      const double ring = std::sqrt(q[0] * q[0] + q[1] * q[1]) - d[0];
      return std::abs(std::sqrt(ring * ring + q[2] * q[2]) - d[1]);
    }
    case ShapeKind::corner: {
      const double h = d[0] / 2;
      const double a = detail::dist_to_rect(q[0], q[1], q[2] + h, -h, h, -d[1], d[1]);
      const double b = detail::dist_to_rect(q[2], q[1], q[0] + h, -h, h, -d[1], d[1]);
      return std::min(a, b);
    }
  }
  return 0;
}

/// Random rotation from a normalized Gaussian quaternion.
template <class Rng>
Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  double w, x, y, z, n;
  do {
    w = N(rng), x = N(rng), y = N(rng), z = N(rng);
    n = std::sqrt(w * w + x * x + y * y + z * z);
  } while (n < 1e-9);
  w /= n, x /= n, y /= n, z /= n;
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

/// Random primitive of the given kind centered at the origin whose surface
/// stays within a ball of radius 0.45, hence inside the unit cube.
template <class Rng>
ShapeSpec random_shape(ShapeKind kind, std::uint64_t seed, Rng& rng) {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  ShapeSpec s;
  s.kind = kind;
  s.seed = seed;
  s.rotation = random_rotation(rng);
  constexpr double bound = 0.45;
  switch (kind) {
    case ShapeKind::sphere: s.dims = {0.25 + 0.2 * U(rng), 0, 0}; break;
    case ShapeKind::box: {
      std::array<double, 3> e{0.1 + 0.2 * U(rng), 0.1 + 0.2 * U(rng), 0.1 + 0.2 * U(rng)};
      const double len = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
      if (len > bound)
        for (double& v : e) v *= bound / len;
      s.dims = e;
      break;
    }
    case ShapeKind::cylinder: {
      double r = 0.15 + 0.15 * U(rng), h = 0.15 + 0.2 * U(rng);
      const double len = std::sqrt(r * r + h * h);
      if (len > bound) r *= bound / len, h *= bound / len;
      s.dims = {r, h, 0};
      break;
    }
    case ShapeKind::torus: {
      const double tube = 0.06 + 0.08 * U(rng);
      s.dims = {tube + 0.1 + (bound - 2 * tube - 0.1) * U(rng), tube, 0};
      break;
    }
    case ShapeKind::corner: {
      double side = 0.4 + 0.3 * U(rng), half = 0.2 + 0.15 * U(rng);
      // farthest local point: (s/2, half, s/2)
      const double len = std::sqrt(side * side / 2 + half * half);
      if (len > bound) side *= bound / len, half *= bound / len;
      s.dims = {side, half, 0};
      break;
    }
  }
  s.validate();
  return s;
}

}  // namespace svrecon
