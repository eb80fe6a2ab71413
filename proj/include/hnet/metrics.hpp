#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hnet/errors.hpp"

namespace hnet {

struct ForceMetrics {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;  // NaN when the targets have zero variance
  double r_over_m = 0.0;
};

struct SegMetrics {
  double accuracy = 0.0;
  double miou = 0.0;
  double mdice = 0.0;
};

/// Binary confusion counts; catheter is the positive class.
struct SegCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  template <class T>
  void add(std::span<const T> pred, std::span<const T> target) {
    if (pred.size() != target.size())
      throw ShapeError("seg_metrics: mask sizes differ (" + std::to_string(pred.size()) + " vs " +
                       std::to_string(target.size()) + ")");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] >= T{0.5}, t = target[i] >= T{0.5};
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
      tn += !p && !t;
    }
  }

  SegCounts& operator+=(const SegCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  std::uint64_t total() const { return tp + fp + fn + tn; }
};

/// IoU/Dice are averaged over {background, catheter}. A class that is absent
/// from both masks scores 1 on both measures.
inline SegMetrics seg_metrics(const SegCounts& c) {
  const auto ratio = [](double num, double den) { return den == 0.0 ? 1.0 : num / den; };
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn),
               tn = static_cast<double>(c.tn);
  const double iou_fg = ratio(tp, tp + fp + fn), iou_bg = ratio(tn, tn + fp + fn);
  const double dice_fg = ratio(2 * tp, 2 * tp + fp + fn), dice_bg = ratio(2 * tn, 2 * tn + fp + fn);
  SegMetrics m;
  m.accuracy = c.total() == 0 ? 1.0 : (tp + tn) / static_cast<double>(c.total());
  m.miou = 0.5 * (iou_fg + iou_bg);
  m.mdice = 0.5 * (dice_fg + dice_bg);
  return m;
}

template <class T>
SegMetrics seg_metrics(std::span<const T> pred_mask, std::span<const T> target_mask) {
  SegCounts c;
  c.add(pred_mask, target_mask);
  return seg_metrics(c);
}

/// preds/targets are row-major (n, 3). Errors are pooled over all n*3 entries;
/// R^2 uses the grand mean of the targets; M is the mean of the per-axis
/// maxima of |target|.
template <class T>
ForceMetrics force_metrics(std::span<const T> preds, std::span<const T> targets, std::size_t dims = 3) {
  if (preds.size() != targets.size()) throw ShapeError("force_metrics: prediction/target length mismatch");
  if (dims == 0 || preds.size() % dims != 0) throw ShapeError("force_metrics: length not a multiple of dims");
  const std::size_t n = preds.size() / dims;
  if (n < 2) throw ContractError("force_metrics: need at least 2 samples");

  double abs_sum = 0.0, sq_sum = 0.0, mean_t = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = static_cast<double>(preds[i]) - static_cast<double>(targets[i]);
    abs_sum += std::abs(d);
    sq_sum += d * d;
    mean_t += static_cast<double>(targets[i]);
  }
  const double count = static_cast<double>(preds.size());
  mean_t /= count;
  double ss_tot = 0.0;
  const bool constant = std::all_of(targets.begin(), targets.end(), [&](T v) { return v == targets[0]; });
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d = static_cast<double>(targets[i]) - mean_t;
    ss_tot += d * d;
  }
  std::vector<double> axis_max(dims, 0.0);
  for (std::size_t i = 0; i < targets.size(); ++i)
    axis_max[i % dims] = std::max(axis_max[i % dims], std::abs(static_cast<double>(targets[i])));
  double m = 0.0;
  for (double v : axis_max) m += v;
  m /= static_cast<double>(dims);

  ForceMetrics f;
  f.mae = abs_sum / count;
  f.mse = sq_sum / count;
  f.rmse = std::sqrt(f.mse);
  f.r2 = constant ? std::numeric_limits<double>::quiet_NaN() : 1.0 - sq_sum / ss_tot;
  f.r_over_m = m == 0.0 ? std::numeric_limits<double>::quiet_NaN() : f.rmse / m;
  return f;
}

/// Evaluation scorecard. `seg` is the mean of the two heads.
struct MetricsReport {
  ForceMetrics force;
  SegMetrics seg_a, seg_b, seg;
  std::size_t params = 0;

  static constexpr std::array<const char*, 9> kKeys = {"mse", "mae", "rmse", "r2", "r_over_m",
                                                       "acc", "miou", "mdice", "params"};

  static SegMetrics average(const SegMetrics& a, const SegMetrics& b) {
    return {0.5 * (a.accuracy + b.accuracy), 0.5 * (a.miou + b.miou), 0.5 * (a.mdice + b.mdice)};
  }

  std::array<double, 9> values() const {
    return {force.mse, force.mae, force.rmse, force.r2, force.r_over_m,
            seg.accuracy, seg.miou, seg.mdice, static_cast<double>(params)};
  }

  /// `key value` lines in column order.
  std::string to_kv() const {
    std::string out;
    const auto v = values();
    char buf[64];
    for (std::size_t i = 0; i < kKeys.size(); ++i) {
      if (i + 1 == kKeys.size())
        std::snprintf(buf, sizeof buf, "%zu", params);
      else if (std::isnan(v[i]))
        std::snprintf(buf, sizeof buf, "nan");
      else
        std::snprintf(buf, sizeof buf, "%.9g", v[i]);
      out += std::string(kKeys[i]) + " " + buf + "\n";
    }
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    const auto v = values();
    for (std::size_t i = 0; i + 1 < kKeys.size(); ++i) {
      if (std::isnan(v[i]))
        j[kKeys[i]] = nullptr;
      else
        j[kKeys[i]] = v[i];
    }
    j["params"] = params;
    return j;
  }
};

}  // namespace hnet
