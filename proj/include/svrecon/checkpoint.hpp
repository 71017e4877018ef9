// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "svrecon/config.hpp"
#include "svrecon/dataset.hpp"
#include "svrecon/hourglass.hpp"
#include "svrecon/relocalization.hpp"

namespace svrecon {

struct Model {
  RunConfig config;
  GeneratorParams generator;
  RelocalizationParams reloc;
  bool stage1_done = false;
  bool stage2_done = false;

  template <class F>
  void for_each(F&& f) {
    generator.for_each(f);
    reloc.for_each(f);
  }

  template <class F>
  void for_each_generator(F&& f) {
    generator.for_each(f);
  }

  template <class F>
  void for_each_reloc(F&& f) {
    reloc.for_each(f);
  }

  RelocalizationConfig reloc_config() const { return {config.l_vox, config.K, config.heads, PeMode::amplified}; }
};

/// Freshly initialized, untrained weights drawn from the config seed.
inline Model make_model(const RunConfig& cfg) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Rng rng(cfg.seed);
  m.generator = make_generator(rng);
  m.reloc = make_relocalization(feature_channels(m.generator), cfg.C, rng);
  return m;
}

inline constexpr const char* kCheckpointMagic = "SVRECON-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

/// Layout: magic, version, config block, stage flags, tensor count, then
/// tensor blobs in ascending name order.
inline void save_checkpoint(std::ostream& os, Model& m) {
  os << kCheckpointMagic << '\n' << "version " << kCheckpointVersion << '\n' << "[config]\n";
  write_config(os, m.config);
  os << "[/config]\n";
  os << "stage1 " << (m.stage1_done ? 1 : 0) << '\n' << "stage2 " << (m.stage2_done ? 1 : 0) << '\n';
  std::map<std::string, const Tensor*> sorted;
  m.for_each([&](const std::string& name, const Tensor& t) {
    if (!sorted.emplace(name, &t).second) throw Error("duplicate parameter name " + name);
  });
  os << "tensors " << sorted.size() << '\n';
  for (const auto& [name, t] : sorted) write_tensor(os, name, *t);
}

inline Model load_checkpoint(std::istream& is) {
  std::string line;
  auto expect_line = [&](const std::string& what) {
    if (!std::getline(is, line)) throw InputError("checkpoint: truncated before " + what);
  };
  expect_line("magic");
  if (line != kCheckpointMagic) throw InputError("checkpoint: bad magic");
  expect_line("version");
  if (line != "version " + std::to_string(kCheckpointVersion)) throw InputError("checkpoint: unsupported version line '" + line + "'");
  expect_line("config");
  if (line != "[config]") throw InputError("checkpoint: missing config block");
  std::ostringstream cfg_text;
  while (true) {
    expect_line("end of config");
    if (line == "[/config]") break;
    cfg_text << line << '\n';
  }
  std::istringstream cfg_in(cfg_text.str());
  Model m = make_model(parse_config(cfg_in));
  auto flag = [&](const std::string& key) {
    expect_line(key);
    if (line == key + " 0") return false;
    if (line == key + " 1") return true;
    throw InputError("checkpoint: bad flag line '" + line + "'");
  };
  m.stage1_done = flag("stage1");
  m.stage2_done = flag("stage2");
  expect_line("tensor count");
  std::size_t count = 0;
  if (std::sscanf(line.c_str(), "tensors %zu", &count) != 1) throw InputError("checkpoint: bad tensor count line");

  std::map<std::string, Tensor*> slots;
  m.for_each([&](const std::string& name, Tensor& t) { slots.emplace(name, &t); });
  if (count != slots.size())
    throw InputError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " + std::to_string(slots.size()));
  for (std::size_t i = 0; i < count; ++i) {
    auto [name, t] = read_tensor(is);
    auto it = slots.find(name);
    if (it == slots.end()) throw InputError("checkpoint: unexpected tensor " + name);
    if (it->second->shape != t.shape)
      throw InputError("checkpoint: tensor " + name + " has shape " + shape_string(t.shape) + ", expected " + shape_string(it->second->shape));
    *it->second = std::move(t);
    slots.erase(it);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw InputError("checkpoint: trailing data");
  return m;
}

inline void save_checkpoint(const std::string& path, Model& m) {
  std::ostringstream os;
  save_checkpoint(os, m);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write checkpoint '" + path + "'");
  f << os.str();
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open checkpoint '" + path + "'");
  return load_checkpoint(f);
}

}  // namespace svrecon
