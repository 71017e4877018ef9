// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "svrecon/tensor.hpp"

namespace svrecon {

/// Training and model hyper-parameters. Serialized as `key=value` lines.
struct RunConfig {
  double l_vox = 0.05;
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::size_t lr_halving = 2;  // epochs per halving
  std::size_t batch = 4;
  std::size_t K = 8;
  std::size_t C = 32;
  std::size_t heads = 4;
  double tau = 0.5;
  std::uint64_t seed = 1;
  // dataset generation
  std::size_t n_shapes = 200;
  std::size_t gt_points = 10000;
  std::size_t n_input = 2048;

  void validate() const {
    auto fail = [](const std::string& m) { throw InputError("config: " + m); };
    if (!(l_vox > 0) || !std::isfinite(l_vox)) fail("l_vox must be positive");
    if (!(lr > 0) || !std::isfinite(lr)) fail("lr must be positive");
    if (lr_halving == 0) fail("lr_halving must be positive");
    if (batch == 0) fail("batch must be positive");
    if (K == 0) fail("K must be at least 1");
    if (C < 6) fail("C must be at least 6");
    if (heads == 0 || C % heads != 0) fail("C must be divisible by heads");
    if (!(tau > 0 && tau < 1)) fail("tau must lie in (0, 1)");
    if (n_shapes == 0 || gt_points == 0 || n_input == 0) fail("dataset sizes must be positive");
  }

  std::map<std::string, std::string> to_map() const {
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    return {{"l_vox", num(l_vox)},
            {"epochs", std::to_string(epochs)},
            {"lr", num(lr)},
            {"lr_halving", std::to_string(lr_halving)},
            {"batch", std::to_string(batch)},
            {"K", std::to_string(K)},
            {"C", std::to_string(C)},
            {"heads", std::to_string(heads)},
            {"tau", num(tau)},
            {"seed", std::to_string(seed)},
            {"n_shapes", std::to_string(n_shapes)},
            {"gt_points", std::to_string(gt_points)},
            {"n_input", std::to_string(n_input)}};
  }

  void set(const std::string& key, const std::string& value) {
    auto to_double = [&] {
      std::size_t used = 0;
      const double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    };
    auto to_size = [&] {
      if (value.empty() || value[0] == '-') throw std::invalid_argument(value);
      std::size_t used = 0;
      const auto v = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return static_cast<std::size_t>(v);
    };
    try {
      if (key == "l_vox") l_vox = to_double();
      else if (key == "epochs") epochs = to_size();
      else if (key == "lr") lr = to_double();
      else if (key == "lr_halving") lr_halving = to_size();
      else if (key == "batch") batch = to_size();
      else if (key == "K") K = to_size();
      else if (key == "C") C = to_size();
      else if (key == "heads") heads = to_size();
      else if (key == "tau") tau = to_double();
      else if (key == "seed") seed = to_size();
      else if (key == "n_shapes") n_shapes = to_size();
      else if (key == "gt_points") gt_points = to_size();
      else if (key == "n_input") n_input = to_size();
      else throw InputError("config: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw InputError("config: bad value '" + value + "' for key '" + key + "'");
    }
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

inline void write_config(std::ostream& os, const RunConfig& cfg) {
  for (const auto& [k, v] : cfg.to_map()) os << k << '=' << v << '\n';
}

/// Applies `key=value` lines on top of `base`. Blank lines and lines starting
/// with '#' are skipped.
inline RunConfig parse_config(std::istream& is, RunConfig base = {}) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open config '" + path + "'");
  return parse_config(f, base);
}

}  // namespace svrecon
