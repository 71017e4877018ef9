// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "svrecon/geometry.hpp"
#include "svrecon/tensor.hpp"

namespace svrecon {

inline void write_ply(std::ostream& os, const PointCloud& cloud) {
  if (cloud.empty()) throw InputError("write_ply: empty point cloud");
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  char buf[96];
  for (const Point3& p : cloud) {
    if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) throw NumericalError("write_ply: non-finite coordinate");
    std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
    os << buf;
  }
}

/// Reads ASCII PLY vertices. Only x, y, z are kept; other vertex properties
/// and any elements after the vertices are ignored.
inline PointCloud read_ply(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("ply", 0) != 0) throw InputError("ply: missing 'ply' magic");
  long n_vertex = -1;
  bool in_vertex = false, ascii = false;
  std::vector<std::string> props;
  while (true) {
    if (!std::getline(is, line)) throw InputError("ply: header not terminated");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "element") {
      std::string name;
      long count = -1;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (count < 0) throw InputError("ply: bad vertex count");
        n_vertex = count;
      }
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw InputError("ply: list properties on vertices are not supported");
      ls >> name;
      if (name.empty()) throw InputError("ply: malformed property line");
      props.push_back(name);
    } else if (kw != "comment" && kw != "obj_info" && kw != "property" && !kw.empty()) {
      throw InputError("ply: unexpected header line '" + line + "'");
    }
  }
  if (!ascii) throw InputError("ply: only ASCII format is supported");
  if (n_vertex < 0) throw InputError("ply: no vertex element");
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (props[i] == "x") ix = static_cast<int>(i);
    if (props[i] == "y") iy = static_cast<int>(i);
    if (props[i] == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw InputError("ply: vertex element lacks x, y, z");
  PointCloud out;
  out.reserve(static_cast<std::size_t>(n_vertex));
  std::vector<double> row(props.size());
  for (long v = 0; v < n_vertex; ++v) {
    do {
      if (!std::getline(is, line))
        throw InputError("ply: truncated body, expected " + std::to_string(n_vertex) + " vertices, got " + std::to_string(v));
    } while (line.find_first_not_of(" \t\r") == std::string::npos);
    std::istringstream ls(line);
    for (double& x : row) {
      std::string tok;
      if (!(ls >> tok)) throw InputError("ply: vertex " + std::to_string(v) + " has too few values");
      try {
        std::size_t used = 0;
        x = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::logic_error&) {
        throw InputError("ply: unparsable value '" + tok + "' in vertex " + std::to_string(v));
      }
      if (!std::isfinite(x)) throw InputError("ply: non-finite value in vertex " + std::to_string(v));
    }
    out.push_back({row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)], row[static_cast<std::size_t>(iz)]});
  }
  return out;
}

inline void write_ply(const std::string& path, const PointCloud& cloud) {
  std::ostringstream os;
  write_ply(os, cloud);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << os.str();
}

inline PointCloud read_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open '" + path + "'");
  return read_ply(f);
}

}  // namespace svrecon
