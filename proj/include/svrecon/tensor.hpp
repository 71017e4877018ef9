// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace svrecon {

// Error hierarchy shared by every module. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
// Raised when pruning removes every voxel and no rescue was requested.
struct EmptyOutputError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major tensor of doubles. Plain value type: copies are deep.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_numel(shape), fill) {
    check_shape();
  }

  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // Extent of the last dimension; everything before it is flattened into rows().
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : numel() / cols(); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  double item() const {
    if (data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape));
    return data[0];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    for (std::size_t e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
};

// ---------------------------------------------------------------------------
// Serialization: a UTF-8 header line `name d0 d1 ...` followed by the raw
// little-endian float64 payload.

namespace detail {
inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char byte;
  std::memcpy(&byte, &probe, 1);
  return byte == 1;
}

inline void write_f64_le(std::ostream& os, double v) {
  unsigned char bytes[8];
  std::memcpy(bytes, &v, 8);
  if (!host_is_little_endian())
    for (int i = 0; i < 4; ++i) std::swap(bytes[i], bytes[7 - i]);
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_f64_le(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw InputError("truncated tensor payload");
  if (!host_is_little_endian())
    for (int i = 0; i < 4; ++i) std::swap(bytes[i], bytes[7 - i]);
  double v;
  std::memcpy(&v, bytes, 8);
  return v;
}
}  // namespace detail

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  if (name.empty() || name.find_first_of(" \n\t") != std::string::npos)
    throw InputError("tensor name must be a non-empty token: '" + name + "'");
  os << name;
  for (std::size_t e : t.shape) os << ' ' << e;
  os << '\n';
  for (double v : t.data) detail::write_f64_le(os, v);
}

inline std::pair<std::string, Tensor> read_tensor(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw InputError("missing tensor header");
  std::istringstream hs(header);
  std::string name;
  hs >> name;
  Shape shape;
  std::size_t e;
  while (hs >> e) shape.push_back(e);
  if (name.empty() || shape.empty()) throw InputError("malformed tensor header: '" + header + "'");
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = detail::read_f64_le(is);
  return {name, Tensor(std::move(shape), std::move(data))};
}

}  // namespace svrecon
