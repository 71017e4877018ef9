// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "svrecon/kdtree.hpp"

// Evaluation metrics. Every distance here is a squared Euclidean distance, and
// the accuracy/completeness thresholds are compared against squared
// distances as well.

namespace svrecon {

/// Mean of the k smallest squared distances from p to S (direct scan).
inline double point_to_set_sq(const Point3& p, const PointCloud& S, std::size_t k) {
  if (k == 0) throw InputError("point_to_set_sq: k must be positive");
  if (k > S.size()) throw InputError("point_to_set_sq: k exceeds set size");
  std::vector<double> d(S.size());
  for (std::size_t i = 0; i < S.size(); ++i) d[i] = squared_distance(p, S[i]);
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += d[i];
  return s / static_cast<double>(k);
}

/// Per-point mean of the k smallest squared distances into `to`.
inline std::vector<double> knn_sq_distances(const PointCloud& from, const KdTree3& to, std::size_t k) {
  if (k == 0 || k > to.size()) throw InputError("k-nearest distance: k must be in [1, set size]");
  std::vector<double> out(from.size());
  std::vector<KdTree3::Hit> hits;
  for (std::size_t i = 0; i < from.size(); ++i) {
    to.knn(from[i], k, hits);
    double s = 0;
    for (const auto& h : hits) s += h.first;
    out[i] = s / static_cast<double>(k);
  }
  return out;
}

namespace detail {
inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double percent_within(const std::vector<double>& d2, double thresh) {
  std::size_t hit = 0;
  for (double d : d2) hit += d <= thresh ? 1 : 0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(d2.size());
}

inline void require_nonempty(const PointCloud& pred, const PointCloud& gt) {
  if (pred.empty()) throw InputError("metrics: empty prediction");
  if (gt.empty()) throw InputError("metrics: empty ground truth");
}
}  // namespace detail

inline double k_chamfer(const PointCloud& pred, const PointCloud& gt, std::size_t k) {
  detail::require_nonempty(pred, gt);
  if (k > pred.size() || k > gt.size()) throw InputError("k_chamfer: k exceeds a point set size");
  const KdTree3 gt_tree(gt), pred_tree(pred);
  return detail::mean_of(knn_sq_distances(pred, gt_tree, k)) + detail::mean_of(knn_sq_distances(gt, pred_tree, k));
}

inline double chamfer(const PointCloud& pred, const PointCloud& gt) { return k_chamfer(pred, gt, 1); }

/// Percentage of predicted points whose squared distance to the nearest
/// ground-truth point is at most `d_thresh`.
inline double accuracy(const PointCloud& pred, const PointCloud& gt, double d_thresh) {
  detail::require_nonempty(pred, gt);
  return detail::percent_within(knn_sq_distances(pred, KdTree3(gt), 1), d_thresh);
}

/// Percentage of ground-truth points within `d_thresh` (squared) of the prediction.
inline double completeness(const PointCloud& pred, const PointCloud& gt, double d_thresh) {
  detail::require_nonempty(pred, gt);
  return detail::percent_within(knn_sq_distances(gt, KdTree3(pred), 1), d_thresh);
}

inline double f_score(double acc, double comp) {
  if (acc < 0 || comp < 0) throw InputError("f_score: negative input");
  if (acc + comp == 0) return 0.0;
  return 2 * acc * comp / (acc + comp);
}

// ---------------------------------------------------------------------------
// Report

struct MetricReport {
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;
  std::map<std::size_t, double> k_chamfer;
  std::map<double, double> accuracy;
  std::map<double, double> completeness;
  std::map<double, double> f_score;

  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{0.02};
  return t;
}
inline const std::vector<std::size_t>& default_ks() {
  static const std::vector<std::size_t> k{1, 2, 4};
  return k;
}

inline MetricReport evaluate_metrics(const PointCloud& pred, const PointCloud& gt, const std::vector<double>& thresholds = default_thresholds(),
                                     const std::vector<std::size_t>& ks = default_ks()) {
  detail::require_nonempty(pred, gt);
  MetricReport r;
  r.n_pred = pred.size();
  r.n_gt = gt.size();
  const KdTree3 gt_tree(gt), pred_tree(pred);
  for (std::size_t k : ks) {
    if (k == 0 || k > pred.size() || k > gt.size()) throw InputError("evaluate: k=" + std::to_string(k) + " exceeds a point set size");
    r.k_chamfer[k] = detail::mean_of(knn_sq_distances(pred, gt_tree, k)) + detail::mean_of(knn_sq_distances(gt, pred_tree, k));
  }
  const auto to_gt = knn_sq_distances(pred, gt_tree, 1);
  const auto to_pred = knn_sq_distances(gt, pred_tree, 1);
  for (double t : thresholds) {
    r.accuracy[t] = detail::percent_within(to_gt, t);
    r.completeness[t] = detail::percent_within(to_pred, t);
    r.f_score[t] = f_score(r.accuracy[t], r.completeness[t]);
  }
  return r;
}

namespace detail {
inline std::string fmt_double(double v, const char* spec = "%.17g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}
}  // namespace detail

/// Human-readable section followed by a `[metrics]` block of key=value lines.
/// Chamfer values in the readable section are multiplied by `display_scale`
/// and labeled as such; the structured block always holds raw values.
inline std::string render_report(const MetricReport& r, double display_scale = 1000.0) {
  std::ostringstream os;
  os << "point cloud evaluation report\n";
  os << "  points: predicted " << r.n_pred << ", ground truth " << r.n_gt << "\n";
  os << "  k-nearest chamfer (x" << detail::fmt_double(display_scale, "%g") << "):";
  for (const auto& [k, v] : r.k_chamfer) os << "  k=" << k << " " << detail::fmt_double(v * display_scale, "%.4f");
  os << "\n";
  for (const auto& [t, acc] : r.accuracy)
    os << "  d_thresh=" << detail::fmt_double(t, "%.4f") << "  accuracy " << detail::fmt_double(acc, "%.2f") << "  completeness "
       << detail::fmt_double(r.completeness.at(t), "%.2f") << "  f-score " << detail::fmt_double(r.f_score.at(t), "%.2f") << "\n";
  os << "[metrics]\n";
  os << "n_pred=" << r.n_pred << "\n";
  os << "n_gt=" << r.n_gt << "\n";
  for (const auto& [k, v] : r.k_chamfer) os << "k_chamfer." << k << "=" << detail::fmt_double(v) << "\n";
  for (const auto& [t, v] : r.accuracy) os << "accuracy." << detail::fmt_double(t) << "=" << detail::fmt_double(v) << "\n";
  for (const auto& [t, v] : r.completeness) os << "completeness." << detail::fmt_double(t) << "=" << detail::fmt_double(v) << "\n";
  for (const auto& [t, v] : r.f_score) os << "f_score." << detail::fmt_double(t) << "=" << detail::fmt_double(v) << "\n";
  os << "[end]\n";
  return os.str();
}

/// Parses the `[metrics]` block of a rendered report.
inline MetricReport parse_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  bool inside = false, closed = false;
  MetricReport r;
  while (std::getline(is, line)) {
    if (line == "[metrics]") {
      inside = true;
      continue;
    }
    if (!inside) continue;
    if (line == "[end]") {
      closed = true;
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("report: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    const auto dot = key.find('.');
    const std::string name = key.substr(0, dot);
    try {
      if (name == "n_pred") r.n_pred = std::stoul(val);
      else if (name == "n_gt") r.n_gt = std::stoul(val);
      else if (dot == std::string::npos) throw InputError("report: unknown key '" + key + "'");
      else if (name == "k_chamfer") r.k_chamfer[std::stoul(key.substr(dot + 1))] = std::stod(val);
      else if (name == "accuracy") r.accuracy[std::stod(key.substr(dot + 1))] = std::stod(val);
      else if (name == "completeness") r.completeness[std::stod(key.substr(dot + 1))] = std::stod(val);
      else if (name == "f_score") r.f_score[std::stod(key.substr(dot + 1))] = std::stod(val);
      else throw InputError("report: unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      throw InputError("report: bad value in '" + line + "'");
    }
  }
  if (!closed) throw InputError("report: missing [metrics] block");
  return r;
}

}  // namespace svrecon
