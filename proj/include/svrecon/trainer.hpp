// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "svrecon/checkpoint.hpp"
#include "svrecon/kdtree.hpp"
#include "svrecon/losses.hpp"
#include "svrecon/metrics.hpp"

// Two-phase training: the voxel generator first, then the relocalization
// network on top of the frozen generator.

namespace svrecon {

inline double lr_for_epoch(const RunConfig& cfg, std::size_t epoch) {
  return cfg.lr * std::ldexp(1.0, -static_cast<int>(epoch / cfg.lr_halving));
}

inline DataConfig data_config(const RunConfig& cfg) {
  DataConfig d;
  d.gt_points = cfg.gt_points;
  d.augment.n_input = cfg.n_input;
  return d;
}

/// A sample with everything the training loops derive from it.
struct PreparedSample {
  Sample sample;
  Voxelization vox;
  std::shared_ptr<const OccupancyOracle> oracle;
  std::shared_ptr<const KdTree3> gt_tree;
};

inline PreparedSample prepare(Sample s, double l_vox) {
  PreparedSample p;
  p.vox = voxelize(s.input, l_vox);
  p.oracle = std::make_shared<const OccupancyOracle>(s.gt, l_vox);
  p.gt_tree = std::make_shared<const KdTree3>(s.gt);
  p.sample = std::move(s);
  return p;
}

inline std::vector<PreparedSample> prepare_all(const std::vector<DatasetEntry>& entries, const RunConfig& cfg) {
  std::vector<PreparedSample> out;
  out.reserve(entries.size());
  const DataConfig dc = data_config(cfg);
  for (const auto& e : entries) out.push_back(prepare(make_sample(e, dc), cfg.l_vox));
  return out;
}

// ---------------------------------------------------------------------------
// Shared pieces

namespace detail {
inline SparseVar input_on_tape(const Voxelization& vox, Tape& tape) { return {vox.tensor.grid, tape.constant(vox.tensor.feats)}; }

struct GradAccumulator {
  std::vector<Tensor*> params;
  std::vector<Tensor> sums;

  template <class ForEach>
  explicit GradAccumulator(ForEach&& for_each) {
    for_each([&](const std::string&, Tensor& t) {
      params.push_back(&t);
      sums.emplace_back(t.shape, 0.0);
    });
  }

  void add(ParamBinder& bind) {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (auto g = bind.gradient(*params[i]))
        for (std::size_t j = 0; j < g->data.size(); ++j) sums[i].data[j] += g->data[j];
  }

  void step(AdamState& adam, double lr, std::size_t count) {
    for (Tensor& s : sums)
      for (double& v : s.data) v /= static_cast<double>(count);
    adam.lr = lr;
    adam_step(params, sums, adam);
    for (Tensor& s : sums) std::fill(s.data.begin(), s.data.end(), 0.0);
  }
};

/// Deterministic per-epoch shuffle of [0, n).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  return order;
}

inline void log_line(std::ostream* log, const char* fmt, auto... args) {
  if (!log) return;
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  *log << buf << '\n' << std::flush;
}

template <class StepFn>
double run_epoch(std::size_t n, const RunConfig& cfg, std::size_t epoch, GradAccumulator& acc, AdamState& adam, StepFn&& step) {
  const auto order = epoch_order(n, cfg.seed, epoch);
  double total = 0;
  std::size_t in_batch = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += step(order[i]);
    if (++in_batch == cfg.batch || i + 1 == n) {
      acc.step(adam, lr_for_epoch(cfg, epoch), in_batch);
      in_batch = 0;
    }
  }
  return total / static_cast<double>(n);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1

/// Voxel generation loss for one sample. Ground-truth occupied candidates are
/// kept through pruning so later levels always see the true surface cells.
inline Var stage1_loss(const GeneratorParams& gen, const PreparedSample& s, const RunConfig& cfg, ParamBinder& bind) {
  GeneratorOptions opt;
  opt.tau = cfg.tau;
  opt.teacher = s.oracle.get();
  opt.rescue_empty = true;
  const StackedResult r = stacked_forward(detail::input_on_tape(s.vox, bind.tape()), gen, bind, opt);
  LabeledLogits out{r.out_group.logits, s.oracle->labels(*r.out_group.grid)};
  std::vector<LabeledLogits> mid;
  for (const auto& g : r.mid) mid.push_back({g.logits, s.oracle->labels(*g.grid)});
  return voxel_bce_and_total(out, mid);
}

/// Inference-mode generator pass. Throws EmptyOutputError if pruning leaves
/// no voxel.
inline StackedResult generate(const GeneratorParams& gen, const Voxelization& vox, const RunConfig& cfg, ParamBinder& bind) {
  GeneratorOptions opt;
  opt.tau = cfg.tau;
  return stacked_forward(detail::input_on_tape(vox, bind.tape()), gen, bind, opt);
}

struct VoxelScores {
  std::size_t true_positive = 0;
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;

  double precision() const { return n_pred ? static_cast<double>(true_positive) / static_cast<double>(n_pred) : 0.0; }
  double recall() const { return n_gt ? static_cast<double>(true_positive) / static_cast<double>(n_gt) : 0.0; }
  double f_score() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

/// Output voxels against ground-truth occupied cells at scale 0.
inline VoxelScores voxel_scores(const VoxelGrid& pred, const OccupancyOracle& oracle) {
  VoxelScores s;
  s.n_pred = pred.size();
  s.n_gt = oracle.cells(0).size();
  for (const auto& c : pred.coords()) s.true_positive += oracle.occupied(c) ? 1 : 0;
  return s;
}

struct HeldOutVoxelScores {
  double precision = 0, recall = 0, f_score = 0;  // means over samples
  std::size_t failures = 0;                       // samples with an empty output
};

inline HeldOutVoxelScores evaluate_generator(const GeneratorParams& gen, const std::vector<PreparedSample>& samples, const RunConfig& cfg) {
  HeldOutVoxelScores h;
  for (const auto& s : samples) {
    Tape tape;
    ParamBinder bind(tape, false);
    try {
      const VoxelScores v = voxel_scores(*generate(gen, s.vox, cfg, bind).v_out.grid, *s.oracle);
      h.precision += v.precision();
      h.recall += v.recall();
      h.f_score += v.f_score();
    } catch (const EmptyOutputError&) {
      ++h.failures;
    }
  }
  const double n = static_cast<double>(samples.size());
  if (n > 0) h.precision /= n, h.recall /= n, h.f_score /= n;
  return h;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double heldout_a = 0;  // stage 1: precision; stage 2: held-out loss
  double heldout_b = 0;  // stage 1: recall
};

inline std::vector<EpochLog> train_stage1(Model& m, const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& val,
                                          std::ostream* log = nullptr) {
  if (train.empty()) throw InputError("train_stage1: empty training set");
  const RunConfig& cfg = m.config;
  detail::GradAccumulator acc([&](auto&& f) { m.for_each_generator(f); });
  AdamState adam;
  std::vector<EpochLog> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = detail::run_epoch(train.size(), cfg, epoch, acc, adam, [&](std::size_t i) {
      Tape tape;
      ParamBinder bind(tape, true);
      Var l = stage1_loss(m.generator, train[i], cfg, bind);
      tape.backward(l);
      acc.add(bind);
      return l.value().item();
    });
    EpochLog e{epoch, lr_for_epoch(cfg, epoch), loss, 0, 0};
    if (!val.empty()) {
      const auto h = evaluate_generator(m.generator, val, cfg);
      e.heldout_a = h.precision;
      e.heldout_b = h.recall;
    }
    detail::log_line(log, "stage1 epoch %zu lr %.6g loss %.6f heldout precision %.4f recall %.4f", epoch, e.lr, loss, e.heldout_a,
                     e.heldout_b);
    history.push_back(e);
  }
  m.stage1_done = cfg.epochs > 0;
  return history;
}

// ---------------------------------------------------------------------------
// Stage 2

/// Frozen generator outputs for one sample.
struct Stage2Input {
  GridPtr grid;
  Tensor f_v;
  std::vector<NeighborSet> neighbors;
  std::shared_ptr<const KdTree3> gt_tree;
};

/// Runs the frozen generator once; nullopt when pruning leaves no voxel.
inline std::optional<Stage2Input> stage2_input(const Model& m, const PreparedSample& s) {
  Tape tape;
  ParamBinder bind(tape, false);
  try {
    StackedResult r = generate(m.generator, s.vox, m.config, bind);
    return Stage2Input{r.v_out.grid, r.f_v.value(), build_neighbor_sets(*r.v_out.grid, m.config.K), s.gt_tree};
  } catch (const EmptyOutputError&) {
    return std::nullopt;
  }
}

inline Var stage2_loss(const RelocalizationParams& reloc, const Stage2Input& in, const RunConfig& cfg, ParamBinder& bind) {
  const RelocalizationConfig rc{cfg.l_vox, cfg.K, cfg.heads, PeMode::amplified};
  Var f_v = bind.tape().constant(in.f_v);
  const auto out = relocalize_with_neighbors(*in.grid, in.neighbors, f_v, reloc, rc, bind);
  return chamfer_loss(out.points, *in.gt_tree);
}

inline std::vector<Stage2Input> stage2_inputs(const Model& m, const std::vector<PreparedSample>& samples, std::ostream* log) {
  std::vector<Stage2Input> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (auto in = stage2_input(m, samples[i])) out.push_back(std::move(*in));
    else detail::log_line(log, "stage2: sample %zu has no output voxels, skipped", i);
  }
  return out;
}

inline double mean_stage2_loss(const RelocalizationParams& reloc, const std::vector<Stage2Input>& inputs, const RunConfig& cfg) {
  double total = 0;
  for (const auto& in : inputs) {
    Tape tape;
    ParamBinder bind(tape, false);
    total += stage2_loss(reloc, in, cfg, bind).value().item();
  }
  return inputs.empty() ? 0.0 : total / static_cast<double>(inputs.size());
}

/// Optimizes only the relocalization parameters; generator outputs enter as
/// constants.
inline std::vector<EpochLog> train_stage2(Model& m, const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& val,
                                          std::ostream* log = nullptr) {
  if (!m.stage1_done) throw InputError("train_stage2: stage-1 training has not completed for this checkpoint");
  if (train.empty()) throw InputError("train_stage2: empty training set");
  const RunConfig& cfg = m.config;
  const auto train_in = stage2_inputs(m, train, log);
  const auto val_in = stage2_inputs(m, val, log);
  if (train_in.empty()) throw EmptyOutputError("train_stage2: the generator produced no voxels for any training sample");
  detail::GradAccumulator acc([&](auto&& f) { m.for_each_reloc(f); });
  AdamState adam;
  std::vector<EpochLog> history;
  if (!val_in.empty()) detail::log_line(log, "stage2 initial heldout loss %.8f", mean_stage2_loss(m.reloc, val_in, cfg));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = detail::run_epoch(train_in.size(), cfg, epoch, acc, adam, [&](std::size_t i) {
      Tape tape;
      ParamBinder bind(tape, true);
      Var l = stage2_loss(m.reloc, train_in[i], cfg, bind);
      tape.backward(l);
      acc.add(bind);
      return l.value().item();
    });
    EpochLog e{epoch, lr_for_epoch(cfg, epoch), loss, val_in.empty() ? 0.0 : mean_stage2_loss(m.reloc, val_in, cfg), 0};
    detail::log_line(log, "stage2 epoch %zu lr %.6g loss %.8f heldout loss %.8f", epoch, e.lr, loss, e.heldout_a);
    history.push_back(e);
  }
  m.stage2_done = cfg.epochs > 0;
  return history;
}

// ---------------------------------------------------------------------------
// Inference

struct Reconstruction {
  PointCloud points;
  GridPtr voxels;
  std::size_t n_input = 0;
};

inline Reconstruction reconstruct(const Model& m, const PointCloud& input) {
  if (input.empty()) throw InputError("reconstruct: empty input point cloud");
  const Voxelization vox = voxelize(input, m.config.l_vox);
  Tape tape;
  ParamBinder bind(tape, false);
  const StackedResult r = generate(m.generator, vox, m.config, bind);
  const auto out = relocalize(*r.v_out.grid, r.f_v, m.reloc, m.reloc_config(), bind);
  return {to_point_cloud(out.points.value()), r.v_out.grid, input.size()};
}

}  // namespace svrecon
