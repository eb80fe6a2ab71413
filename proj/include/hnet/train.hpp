#pragma once

// RMSprop training with per-epoch validation and early stopping, plus
// evaluation into a MetricsReport.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "hnet/autodiff.hpp"
#include "hnet/checkpoint.hpp"
#include "hnet/dataset.hpp"
#include "hnet/errors.hpp"
#include "hnet/losses.hpp"
#include "hnet/metrics.hpp"
#include "hnet/model.hpp"
#include "hnet/rng.hpp"

namespace hnet {

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double rho = 0.9;
  double eps = 1e-8;
  LossWeights weights;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
    if (patience == 0) throw ConfigError("patience must be positive");
    if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
    if (!(eps >= 0.0)) throw ConfigError("eps must be nonnegative");
    weights.validate();
  }
};

/// Per-sample averages over one pass.
struct LossStats {
  double total = 0.0, seg1 = 0.0, seg2 = 0.0, reg = 0.0, seg_acc = 0.0;

  nlohmann::ordered_json to_json() const {
    return {{"total_loss", total}, {"seg_loss1", seg1}, {"seg_loss2", seg2}, {"reg_loss", reg}, {"seg_acc", seg_acc}};
  }
  static LossStats from_json(const nlohmann::json& j) {
    return {j.at("total_loss").get<double>(), j.at("seg_loss1").get<double>(), j.at("seg_loss2").get<double>(),
            j.at("reg_loss").get<double>(), j.at("seg_acc").get<double>()};
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  LossStats train, val;

  nlohmann::ordered_json to_json() const {
    return {{"epoch", epoch}, {"train", train.to_json()}, {"val", val.to_json()}};
  }
  static EpochLog from_json(const nlohmann::json& j) {
    return {j.at("epoch").get<std::size_t>(), LossStats::from_json(j.at("train")), LossStats::from_json(j.at("val"))};
  }
};

/// s <- rho s + (1 - rho) g^2;  w <- w - lr g / (sqrt(s) + eps).
template <class T>
void rmsprop_step(Parameter<T>& p, double lr, double rho, double eps) {
  const T r = static_cast<T>(rho), one_r = static_cast<T>(1.0 - rho), l = static_cast<T>(lr), e = static_cast<T>(eps);
  auto* w = p.value.ptr();
  auto* s = p.opt_state.ptr();
  const auto* g = p.grad.ptr();
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    s[i] = r * s[i] + one_r * g[i] * g[i];
    w[i] -= l * g[i] / (std::sqrt(s[i]) + e);
  }
  ++p.updates;
}

template <class T>
struct Batch {
  Tensor<T> view_a, view_b, mask_a, mask_b, force;
};

template <class T>
Batch<T> make_batch(std::span<const DatasetRecord> records, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const Shape vs = records[indices[0]].view_a.shape(), ms = records[indices[0]].mask_a.shape();
  const std::size_t n = indices.size();
  Batch<T> b{Tensor<T>(Shape{n, vs.h, vs.w, vs.c}), Tensor<T>(Shape{n, vs.h, vs.w, vs.c}),
             Tensor<T>(Shape{n, ms.h, ms.w, ms.c}), Tensor<T>(Shape{n, ms.h, ms.w, ms.c}),
             Tensor<T>(vector_shape(n, 3))};
  const std::size_t per_view = vs.size(), per_mask = ms.size();
  for (std::size_t k = 0; k < n; ++k) {
    const DatasetRecord& r = records[indices[k]];
    if (r.view_a.shape() != vs || r.view_b.shape() != vs || r.mask_a.shape() != ms || r.mask_b.shape() != ms)
      throw ShapeError("make_batch: record '" + r.id + "' has inconsistent image shapes");
    for (std::size_t i = 0; i < per_view; ++i) {
      b.view_a[k * per_view + i] = static_cast<T>(r.view_a[i]);
      b.view_b[k * per_view + i] = static_cast<T>(r.view_b[i]);
    }
    for (std::size_t i = 0; i < per_mask; ++i) {
      b.mask_a[k * per_mask + i] = static_cast<T>(r.mask_a[i]);
      b.mask_b[k * per_mask + i] = static_cast<T>(r.mask_b[i]);
    }
    for (std::size_t d = 0; d < 3; ++d) b.force[k * 3 + d] = static_cast<T>(r.force[d]);
  }
  return b;
}

struct LossVars {
  Var seg1, seg2, reg, total;
};

template <class T>
LossVars build_losses(Graph<T>& g, const HNetModel<T>& m, const Batch<T>& b, const LossWeights& w, HNetOutput& out) {
  out = forward(g, m, g.constant(b.view_a), g.constant(b.view_b));
  LossVars l;
  l.seg1 = ops::bce_loss(g, out.seg_a, g.constant(b.mask_a));
  l.seg2 = ops::bce_loss(g, out.seg_b, g.constant(b.mask_b));
  l.reg = ops::mse_loss(g, out.force, g.constant(b.force));
  l.total = ops::total_loss(g, l.seg1, l.seg2, l.reg, w);
  return l;
}

namespace detail {

template <class T>
double pixel_accuracy(const Tensor<T>& prob, const Tensor<T>& mask) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) hit += (prob[i] >= T{0.5}) == (mask[i] >= T{0.5});
  return static_cast<double>(hit) / static_cast<double>(prob.size());
}

/// Adds one batch's losses, weighted by its sample count, to `acc`.
template <class T>
void accumulate(LossStats& acc, Graph<T>& g, const LossVars& l, const HNetOutput& out, const Batch<T>& b,
                std::size_t n) {
  const double k = static_cast<double>(n);
  acc.total += k * static_cast<double>(g.value(l.total).item());
  acc.seg1 += k * static_cast<double>(g.value(l.seg1).item());
  acc.seg2 += k * static_cast<double>(g.value(l.seg2).item());
  acc.reg += k * static_cast<double>(g.value(l.reg).item());
  acc.seg_acc += k * 0.5 * (pixel_accuracy(g.value(out.seg_a), b.mask_a) + pixel_accuracy(g.value(out.seg_b), b.mask_b));
}

inline void normalize(LossStats& acc, std::size_t n) {
  const double k = static_cast<double>(n);
  acc.total /= k, acc.seg1 /= k, acc.seg2 /= k, acc.reg /= k, acc.seg_acc /= k;
}

inline std::string describe(std::size_t batch, double total, double s1, double s2, double reg) {
  std::ostringstream os;
  os << "non-finite loss in batch " << batch << ": total=" << total << " seg_loss1=" << s1 << " seg_loss2=" << s2
     << " reg_loss=" << reg;
  return os.str();
}

}  // namespace detail

/// Unique parameters, each updated exactly once per batch.
template <class T>
void apply_rmsprop(HNetModel<T>& m, const TrainConfig& cfg) {
  for (auto& p : m.params) rmsprop_step(*p, cfg.learning_rate, cfg.rho, cfg.eps);
}

/// One shuffled pass over `records`. The final partial batch is kept.
template <class T>
LossStats train_epoch(HNetModel<T>& m, std::span<const DatasetRecord> records, const TrainConfig& cfg, Rng& rng) {
  if (records.empty()) throw ContractError("train_epoch: empty training set");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  LossStats acc;
  std::size_t batch_id = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_id) {
    const std::size_t n = std::min(cfg.batch_size, order.size() - start);
    const Batch<T> b = make_batch<T>(records, std::span<const std::size_t>(order).subspan(start, n));
    Graph<T> g;
    HNetOutput out;
    const LossVars l = build_losses(g, m, b, cfg.weights, out);
    const double total = static_cast<double>(g.value(l.total).item());
    if (!std::isfinite(total))
      throw NumericError(detail::describe(batch_id, total, g.value(l.seg1).item(), g.value(l.seg2).item(),
                                          g.value(l.reg).item()));
    zero_grads(m.params);
    g.backpropagate(l.total);
    apply_rmsprop(m, cfg);
    detail::accumulate(acc, g, l, out, b, n);
  }
  detail::normalize(acc, records.size());
  return acc;
}

/// Losses over `records` without updating anything.
template <class T>
LossStats evaluate_losses(const HNetModel<T>& m, std::span<const DatasetRecord> records, const TrainConfig& cfg) {
  if (records.empty()) throw ContractError("evaluate_losses: empty set");
  LossStats acc;
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t n = std::min(cfg.batch_size, order.size() - start);
    const Batch<T> b = make_batch<T>(records, std::span<const std::size_t>(order).subspan(start, n));
    Graph<T> g;
    HNetOutput out;
    const LossVars l = build_losses(g, m, b, cfg.weights, out);
    detail::accumulate(acc, g, l, out, b, n);
  }
  detail::normalize(acc, records.size());
  return acc;
}

struct EvalResult {
  MetricsReport report;
  std::vector<std::string> ids;
  std::vector<std::array<double, 3>> predicted, actual;
};

/// Pooled confusion counts per head (averaged over the two heads) and force
/// metrics over every sample. Parameters are read only.
template <class T>
EvalResult evaluate(const HNetModel<T>& m, std::span<const DatasetRecord> records, std::size_t batch_size = 32) {
  if (records.empty()) throw ContractError("evaluate: empty set");
  EvalResult res;
  SegCounts ca, cb;
  std::vector<double> pred, target;
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    const Batch<T> b = make_batch<T>(records, std::span<const std::size_t>(order).subspan(start, n));
    const Prediction<T> p = predict(m, b.view_a, b.view_b);
    ca.add(p.seg_a.data(), b.mask_a.data());
    cb.add(p.seg_b.data(), b.mask_b.data());
    for (std::size_t k = 0; k < n; ++k) {
      std::array<double, 3> fp{}, ft{};
      for (std::size_t d = 0; d < 3; ++d) {
        fp[d] = static_cast<double>(p.force[k * 3 + d]);
        ft[d] = records[order[start + k]].force[d];
        pred.push_back(fp[d]);
        target.push_back(ft[d]);
      }
      res.ids.push_back(records[order[start + k]].id);
      res.predicted.push_back(fp);
      res.actual.push_back(ft);
    }
  }
  res.report.seg_a = seg_metrics(ca);
  res.report.seg_b = seg_metrics(cb);
  res.report.seg = MetricsReport::average(res.report.seg_a, res.report.seg_b);
  res.report.force = records.size() >= 2 ? force_metrics<double>(pred, target) : ForceMetrics{};
  res.report.params = parameter_count(m);
  return res;
}

/// Stops once `patience` consecutive epochs fail to improve on the best value.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `value` is a new best.
  bool observe(double value) {
    if (!best_ || value < *best_) {
      best_ = value;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ >= patience_; }
  std::optional<double> best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::optional<double> best_;
};

struct FitResult {
  std::vector<EpochLog> log;
  std::vector<CheckpointEntry> best;  // weights restored into the model
  std::size_t best_epoch = 0;         // 0: initial weights
  bool stopped_early = false;
};

/// Called after each epoch with the log line and the model's current weights.
template <class T>
using EpochCallback = std::function<void(const EpochLog&, const HNetModel<T>&, bool is_best)>;

/// Trains up to max_epochs, monitoring validation total loss; the best
/// weights are restored into `m` on return.
template <class T>
FitResult fit(HNetModel<T>& m, std::span<const DatasetRecord> train, std::span<const DatasetRecord> val,
              const TrainConfig& cfg, const std::type_identity_t<EpochCallback<T>>& on_epoch = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw ContractError("fit: training and validation sets must be nonempty");
  FitResult res;
  res.best = snapshot(m.params);
  EarlyStopping stopper(cfg.patience);
  Rng rng(derive_seed(cfg.seed, 0x5348));
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    EpochLog e;
    e.epoch = epoch;
    e.train = train_epoch(m, train, cfg, rng);
    e.val = evaluate_losses(m, val, cfg);
    if (!std::isfinite(e.val.total)) throw NumericError("non-finite validation loss in epoch " + std::to_string(epoch));
    const bool improved = stopper.observe(e.val.total);
    if (improved) {
      res.best = snapshot(m.params);
      res.best_epoch = epoch;
    }
    res.log.push_back(e);
    if (on_epoch) on_epoch(e, m, improved);
    if (stopper.should_stop()) {
      res.stopped_early = true;
      break;
    }
  }
  restore(m.params, res.best);
  return res;
}

}  // namespace hnet
