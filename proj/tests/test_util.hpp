#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "hnet/autodiff.hpp"
#include "hnet/ops.hpp"
#include "hnet/rng.hpp"
#include "hnet/tensor.hpp"

namespace hnet::test {

inline constexpr double kFdEps = 1e-4;
inline constexpr double kFdRelTol = 1e-4;
// Elements whose analytic and numeric gradients are both below this magnitude
// are compared absolutely against kFdRelTol * kFdFloor.
inline constexpr double kFdFloor = 1e-6;

template <class T = double>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Random values with magnitude at least `gap`, so no element sits on a ReLU kink.
inline Tensor<double> random_away_from_zero(Shape s, Rng& rng, double gap = 0.05) {
  Tensor<double> t(s);
  for (auto& v : t.data()) {
    const double m = rng.uniform(gap, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

/// Distinct values at least 0.01 apart in random order (no near-ties for max pooling).
inline Tensor<double> random_distinct(Shape s, Rng& rng) {
  std::vector<double> v(s.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i) + rng.uniform(0.0, 0.002);
  rng.shuffle(std::span<double>(v));
  return Tensor<double>(s, std::move(v));
}

inline double relative_error(double analytic, double numeric) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
  return std::abs(analytic - numeric) / den;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose probe interval straddled a kink
};

/// Branch taken by every piecewise op of a graph: the sign of each ReLU input
/// and the winning position of each max-pool window. Two points with equal
/// patterns lie in the same smooth piece of the graph's function.
inline std::vector<std::uint8_t> branch_pattern(const Graph<double>& g) {
  std::vector<std::uint8_t> out;
  for (std::size_t id = 0; id < g.size(); ++id) {
    const auto& node = g.node(id);
    if (node.kind == "relu") {
      for (double v : g.value(node.inputs[0]).data()) out.push_back(v > 0.0);
    } else if (node.kind == "maxpool2d") {
      const auto& x = g.value(node.inputs[0]);
      const Shape s = x.shape();
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t y = 0; y < s.h; y += 2)
          for (std::size_t xx = 0; xx < s.w; xx += 2)
            for (std::size_t c = 0; c < s.c; ++c) {
              std::uint8_t best = 0;
              double top = x.at(n, y, xx, c);
              for (std::uint8_t k = 1; k < 4; ++k) {
                const double v = x.at(n, y + k / 2, xx + k % 2, c);
                if (v > top) top = v, best = k;
              }
              out.push_back(best);
            }
    }
  }
  return out;
}

using LossBuilder = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

/// Compares backpropagated gradients of every input against central
/// differences. When `max_coords` is nonzero, only that many randomly chosen
/// coordinates per input are probed.
inline GradCheckResult grad_check(const LossBuilder& build, const std::vector<Tensor<double>>& inputs,
                                  std::size_t max_coords = 0, std::uint64_t coord_seed = 0, double eps = kFdEps) {
  Graph<double> g;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.input(t));
  const Var loss = build(g, vars);
  g.backpropagate(loss);

  GradCheckResult res;
  Rng pick(coord_seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> analytic = g.has_grad(vars[k].id) ? g.grad(vars[k]) : Tensor<double>(inputs[k].shape());
    std::vector<std::size_t> coords;
    if (max_coords == 0 || max_coords >= inputs[k].size()) {
      for (std::size_t i = 0; i < inputs[k].size(); ++i) coords.push_back(i);
    } else {
      for (std::size_t i = 0; i < max_coords; ++i) coords.push_back(static_cast<std::size_t>(pick.below(inputs[k].size())));
    }
    const auto eval = [&](std::size_t coord, double delta) {
      Graph<double> h;
      std::vector<Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) {
        Tensor<double> t = inputs[j];
        if (j == k) t[coord] += delta;
        vs.push_back(h.constant(std::move(t)));
      }
      return h.value(build(h, vs)).item();
    };
    for (std::size_t c : coords) {
      const double numeric = (eval(c, eps) - eval(c, -eps)) / (2 * eps);
      res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic[c], numeric));
      ++res.checked;
    }
  }
  return res;
}

/// Central difference of `eval` with respect to one scalar `slot`, restored afterwards.
template <class F>
double central_difference(F&& eval, double& slot, double eps) {
  const double orig = slot;
  slot = orig + eps;
  const double up = eval();
  slot = orig - eps;
  const double down = eval();
  slot = orig;
  return (up - down) / (2 * eps);
}

/// Reduces any tensor to a scalar with fixed random weights, so the upstream
/// gradient reaching the op under test is non-uniform.
inline Var weighted_sum(Graph<double>& g, Var x, std::uint64_t seed) {
  Rng rng(seed);
  const Var w = g.constant(random_tensor(g.value(x).shape(), rng));
  return ops::sum(g, ops::mul(g, x, w));
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("hnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  static int& counter() {
    static int n = 0;
    return n;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace hnet::test
