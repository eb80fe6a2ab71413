#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hnet/autodiff.hpp"
#include "hnet/errors.hpp"
#include "hnet/tensor.hpp"

namespace hnet {

/// Probabilities are clipped to [kBceEpsilon, 1 - kBceEpsilon] before the log.
inline constexpr double kBceEpsilon = 1e-7;

/// Per-head weights of the total loss.
struct LossWeights {
  double seg1 = 1.0;
  double seg2 = 1.0;
  double reg = 1.0;

  void validate() const {
    if (!(seg1 >= 0.0) || !(seg2 >= 0.0) || !(reg >= 0.0))
      throw ConfigError("loss weights must be nonnegative");
  }
  bool operator==(const LossWeights&) const = default;
};

namespace ops {

/// Mean binary cross entropy over every pixel of every sample. Clipped entries
/// have zero derivative with respect to `pred`.
template <class T>
Var bce_loss(Graph<T>& g, Var pred, Var target) {
  const auto& p = g.value(pred);
  const auto& t = g.value(target);
  if (p.shape() != t.shape())
    throw ShapeError("bce_loss: prediction " + p.shape().str() + " vs target " + t.shape().str());
  const T lo = static_cast<T>(kBceEpsilon), hi = T{1} - static_cast<T>(kBceEpsilon);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T q = std::clamp(p[i], lo, hi);
    acc += static_cast<double>(t[i] * std::log(q) + (T{1} - t[i]) * std::log(T{1} - q));
  }
  const T inv_n = T{1} / static_cast<T>(p.size());
  const T loss = static_cast<T>(-acc) * inv_n;
  return g.record("bce_loss", Tensor<T>::scalar(loss), {pred.id, target.id},
                  [pred, target, lo, hi, inv_n](Graph<T>& gr, std::size_t self) {
    const T go = gr.grad(self)[0] * inv_n;
    const auto& p = gr.value(pred);
    const auto& t = gr.value(target);
    if (gr.requires_grad(pred.id)) {
      auto& gp = gr.grad(pred.id);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < lo || p[i] > hi) continue;
        gp[i] += go * (-(t[i] / p[i]) + (T{1} - t[i]) / (T{1} - p[i]));
      }
    }
    if (gr.requires_grad(target.id)) {
      auto& gt = gr.grad(target.id);
      for (std::size_t i = 0; i < p.size(); ++i) {
        const T q = std::clamp(p[i], lo, hi);
        gt[i] += go * -(std::log(q) - std::log(T{1} - q));
      }
    }
  });
}

/// Squared error summed over the d components, divided by d, averaged over
/// the batch: sum((pred - target)^2) / (n * d).
template <class T>
Var mse_loss(Graph<T>& g, Var pred, Var target) {
  const auto& p = g.value(pred);
  const auto& t = g.value(target);
  if (p.shape() != t.shape())
    throw ShapeError("mse_loss: prediction " + p.shape().str() + " vs target " + t.shape().str());
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  const T inv = T{1} / static_cast<T>(p.size());
  return g.record("mse_loss", Tensor<T>::scalar(acc * inv), {pred.id, target.id},
                  [pred, target, inv](Graph<T>& gr, std::size_t self) {
    const T go = gr.grad(self)[0] * inv * T{2};
    const auto& p = gr.value(pred);
    const auto& t = gr.value(target);
    if (gr.requires_grad(pred.id)) {
      auto& gp = gr.grad(pred.id);
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] += go * (p[i] - t[i]);
    }
    if (gr.requires_grad(target.id)) {
      auto& gt = gr.grad(target.id);
      for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= go * (p[i] - t[i]);
    }
  });
}

/// beta1 * seg1 + beta2 * seg2 + beta3 * reg.
template <class T>
Var total_loss(Graph<T>& g, Var seg1, Var seg2, Var reg, const LossWeights& w) {
  w.validate();
  const std::array<Var, 3> parts{seg1, seg2, reg};
  const std::array<T, 3> betas{static_cast<T>(w.seg1), static_cast<T>(w.seg2), static_cast<T>(w.reg)};
  T acc{0};
  for (std::size_t k = 0; k < 3; ++k) acc += betas[k] * g.value(parts[k]).item();
  return g.record("total_loss", Tensor<T>::scalar(acc), {seg1.id, seg2.id, reg.id},
                  [parts, betas](Graph<T>& gr, std::size_t self) {
    const T go = gr.grad(self)[0];
    for (std::size_t k = 0; k < 3; ++k)
      if (gr.requires_grad(parts[k].id)) gr.grad(parts[k].id)[0] += betas[k] * go;
  });
}

}  // namespace ops

/// Value-only BCE (same definition as ops::bce_loss).
template <class T>
double bce_loss(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw ShapeError("bce_loss: length mismatch");
  if (pred.empty()) throw ShapeError("bce_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double q = std::clamp(static_cast<double>(pred[i]), kBceEpsilon, 1.0 - kBceEpsilon);
    const double t = static_cast<double>(target[i]);
    acc += t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
  }
  return -acc / static_cast<double>(pred.size());
}

/// Value-only MSE: sum of squared differences over all entries / entry count.
template <class T>
double mse_loss(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw ShapeError("mse_loss: length mismatch");
  if (pred.empty()) throw ShapeError("mse_loss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

inline double total_loss(double seg1, double seg2, double reg, const LossWeights& w) {
  w.validate();
  return w.seg1 * seg1 + w.seg2 * seg2 + w.reg * reg;
}

}  // namespace hnet
