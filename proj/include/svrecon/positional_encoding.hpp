// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "svrecon/geometry.hpp"
#include "svrecon/tensor.hpp"

namespace svrecon {

/// Sinusoidal encoding of a 3D displacement. Each axis owns a block of
/// channels/3 entries holding interleaved (sin, cos) pairs; pair j of a block
/// of width P uses the divisor base^(2j/P).
struct AmpPEConfig {
  std::size_t channels = 30;
  double l_vox = 0.05;
  double base = 10000.0;

  void validate() const {
    if (channels == 0 || channels % 6 != 0) throw InputError("positional encoding channels must be a positive multiple of 6");
    if (!(l_vox > 0)) throw InputError("positional encoding: voxel length must be positive");
  }
};

enum class PeMode { amplified, plain, none };

/// Plain sinusoidal encoding of per-axis positions (already in cell units).
inline std::vector<double> sinusoidal_pe(const Point3& pos, const AmpPEConfig& cfg) {
  cfg.validate();
  const std::size_t block = cfg.channels / 3;
  std::vector<double> out(cfg.channels);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t j = 0; j < block / 2; ++j) {
      const double div = std::pow(cfg.base, static_cast<double>(2 * j) / static_cast<double>(block));
      out[a * block + 2 * j] = std::sin(pos[a] / div);
      out[a * block + 2 * j + 1] = std::cos(pos[a] / div);
    }
  return out;
}

/// exp(-||d / l_vox||_1): shrinks the encoding of distant neighbors.
inline double pe_amplitude(const Point3& d, double l_vox) {
  return std::exp(-(std::abs(d[0]) + std::abs(d[1]) + std::abs(d[2])) / l_vox);
}

/// Amplified encoding of a world-space displacement d: the plain encoding of
/// d / l_vox scaled by exp(-||d / l_vox||_1).
inline std::vector<double> amplified_pe(const Point3& d, const AmpPEConfig& cfg) {
  const Point3 pos{d[0] / cfg.l_vox, d[1] / cfg.l_vox, d[2] / cfg.l_vox};
  std::vector<double> out = sinusoidal_pe(pos, cfg);
  const double amp = pe_amplitude(d, cfg.l_vox);
  for (double& v : out) v *= amp;
  return out;
}

/// Encoding used for tokens under a given mode, zero-padded to `width`.
inline std::vector<double> token_encoding(const Point3& d, const AmpPEConfig& cfg, PeMode mode, std::size_t width) {
  std::vector<double> out(width, 0.0);
  if (mode == PeMode::none) return out;
  const std::vector<double> pe = mode == PeMode::amplified
                                     ? amplified_pe(d, cfg)
                                     : sinusoidal_pe({d[0] / cfg.l_vox, d[1] / cfg.l_vox, d[2] / cfg.l_vox}, cfg);
  std::copy(pe.begin(), pe.end(), out.begin());
  return out;
}

/// Largest multiple of 6 not exceeding the embedding width.
inline std::size_t pe_channels_for(std::size_t embedding_width) { return embedding_width - embedding_width % 6; }

}  // namespace svrecon
