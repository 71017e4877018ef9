// SPDX-License-Identifier: Apache-2.0
//
// svrecon command-line tool: dataset generation, two-phase training,
// reconstruction and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "svrecon/ply.hpp"
#include "svrecon/trainer.hpp"

namespace fs = std::filesystem;
using namespace svrecon;

namespace {

enum ExitCode { kOk = 0, kInputError = 1, kNumericalFailure = 2, kReconstructionFailure = 3 };

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool out_required = true) {
  cmd->add_option("--config", o.config_path, "plain-text key=value configuration file");
  cmd->add_option("--seed", o.seed, "random seed (overrides the config)");
  auto* out = cmd->add_option("--out", o.out, "output path");
  if (out_required) out->required();
}

RunConfig resolve_config(const CommonOptions& o, RunConfig base = {}) {
  RunConfig cfg = o.config_path.empty() ? base : load_config(o.config_path, base);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

std::vector<DatasetEntry> manifest_split(const std::string& path, Split split) {
  auto entries = select(read_manifest(path), split);
  if (entries.empty()) throw InputError("manifest '" + path + "' has no " + to_string(split) + " entries");
  return entries;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
}

int cmd_gen_data(const CommonOptions& o, std::size_t n_shapes, std::size_t export_val) {
  RunConfig cfg = resolve_config(o);
  if (n_shapes > 0) cfg.n_shapes = n_shapes;
  fs::create_directories(o.out);
  const auto entries = make_dataset(cfg.n_shapes, cfg.seed);
  std::ostringstream manifest;
  write_manifest(manifest, entries);
  write_file((fs::path(o.out) / "manifest.txt").string(), manifest.str());
  const auto val = select(entries, Split::val);
  const DataConfig dc = data_config(cfg);
  for (std::size_t i = 0; i < std::min(export_val, val.size()); ++i) {
    const Sample s = make_sample(val[i], dc);
    const std::string stem = (fs::path(o.out) / ("val" + std::to_string(i))).string();
    write_ply(stem + "_input.ply", s.input);
    write_ply(stem + "_gt.ply", s.gt);
  }
  std::printf("wrote %zu entries (%zu val) to %s\n", entries.size(), val.size(), o.out.c_str());
  return kOk;
}

int cmd_train_stage1(const CommonOptions& o, const std::string& data) {
  const RunConfig cfg = resolve_config(o);
  const auto train = prepare_all(manifest_split(data, Split::train), cfg);
  const auto val = prepare_all(select(read_manifest(data), Split::val), cfg);
  Model m = make_model(cfg);
  train_stage1(m, train, val, &std::cout);
  save_checkpoint(o.out, m);
  std::printf("checkpoint written to %s\n", o.out.c_str());
  return kOk;
}

int cmd_train_stage2(const CommonOptions& o, const std::string& data, const std::string& ckpt) {
  Model m = load_checkpoint(ckpt);
  const RunConfig cfg = resolve_config(o, m.config);
  if (cfg.C != m.config.C || cfg.heads != m.config.heads || cfg.K != m.config.K || cfg.l_vox != m.config.l_vox)
    throw InputError("train-stage2: C, heads, K and l_vox are fixed by the stage-1 checkpoint");
  m.config = cfg;
  const auto train = prepare_all(manifest_split(data, Split::train), cfg);
  const auto val = prepare_all(select(read_manifest(data), Split::val), cfg);
  train_stage2(m, train, val, &std::cout);
  save_checkpoint(o.out, m);
  std::printf("checkpoint written to %s\n", o.out.c_str());
  return kOk;
}

int cmd_reconstruct(const CommonOptions& o, const std::string& ckpt, const std::string& input) {
  const Model m = load_checkpoint(ckpt);
  if (!m.stage1_done || !m.stage2_done) throw InputError("reconstruct: checkpoint must have completed both training stages");
  const PointCloud in = read_ply(input);
  const Reconstruction r = reconstruct(m, in);
  write_ply(o.out, r.points);
  std::printf("input points %zu\noutput voxels %zu\noutput points %zu\n", r.n_input, r.voxels->size(), r.points.size());
  return kOk;
}

int cmd_evaluate(const CommonOptions& o, const std::string& pred, const std::string& gt, std::vector<double> thresholds,
                 std::vector<std::size_t> ks) {
  if (thresholds.empty()) thresholds = default_thresholds();
  if (ks.empty()) ks = default_ks();
  const std::string report = render_report(evaluate_metrics(read_ply(pred), read_ply(gt), thresholds, ks));
  write_file(o.out, report);
  std::cout << report;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse voxel point cloud reconstruction"};
  app.require_subcommand(1);

  CommonOptions gen_o, s1_o, s2_o, rec_o, eval_o;
  std::size_t n_shapes = 0, export_val = 0;
  std::string data1, data2, ckpt2, ckpt_rec, input, pred, gt;
  std::vector<double> thresholds;
  std::vector<std::size_t> ks;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset manifest");
  add_common(gen, gen_o);
  gen->add_option("--n-shapes", n_shapes, "number of shapes (overrides the config)");
  gen->add_option("--export-val", export_val, "also write input/gt PLY files for the first N validation samples");

  auto* s1 = app.add_subcommand("train-stage1", "train the voxel generation network");
  add_common(s1, s1_o);
  s1->add_option("--data", data1, "dataset manifest")->required();

  auto* s2 = app.add_subcommand("train-stage2", "train the relocalization network on a frozen stage-1 model");
  add_common(s2, s2_o);
  s2->add_option("--data", data2, "dataset manifest")->required();
  s2->add_option("--checkpoint", ckpt2, "stage-1 checkpoint")->required();

  auto* rec = app.add_subcommand("reconstruct", "reconstruct a point cloud from a PLY file");
  add_common(rec, rec_o);
  rec->add_option("--checkpoint", ckpt_rec, "trained checkpoint")->required();
  rec->add_option("--input", input, "input PLY")->required();

  auto* ev = app.add_subcommand("evaluate", "compare a predicted cloud against ground truth");
  add_common(ev, eval_o);
  ev->add_option("--pred", pred, "predicted PLY")->required();
  ev->add_option("--gt", gt, "ground-truth PLY")->required();
  ev->add_option("--threshold", thresholds, "squared-distance thresholds");
  ev->add_option("--k", ks, "k values for the k-nearest chamfer distance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*gen) return cmd_gen_data(gen_o, n_shapes, export_val);
    if (*s1) return cmd_train_stage1(s1_o, data1);
    if (*s2) return cmd_train_stage2(s2_o, data2, ckpt2);
    if (*rec) return cmd_reconstruct(rec_o, ckpt_rec, input);
    if (*ev) return cmd_evaluate(eval_o, pred, gt, thresholds, ks);
  } catch (const EmptyOutputError& e) {
    std::fprintf(stderr, "reconstruction failure: %s\n", e.what());
    return kReconstructionFailure;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalFailure;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInputError;
  }
  return kInputError;
}
