#pragma once

// Finite-difference cases shared by the unit tests and the acceptance binary.
// Every case is a pure function of (name, seed).

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hnet/losses.hpp"
#include "hnet/model.hpp"
#include "hnet/ops.hpp"
#include "test_util.hpp"

namespace hnet::test {

inline constexpr std::array<std::string_view, 12> kGradOps = {
    "conv2d",          "conv_transpose2d", "maxpool2d", "relu",     "sigmoid",  "global_average_pool",
    "concat_channels", "concat_vectors",   "dense",     "bce_loss", "mse_loss", "composite"};

inline GradCheckResult op_grad_case(std::string_view op, int seed) {
  const auto s = static_cast<std::uint64_t>(seed);
  const auto reduce = [s](auto f) {
    return [f, s](Graph<double>& g, const std::vector<Var>& v) { return weighted_sum(g, f(g, v), s); };
  };
  if (op == "conv2d") {
    Rng rng(100 + s);
    const std::size_t n = 1 + rng.below(4), h = 1 + rng.below(8), w = 1 + rng.below(8), ci = 1 + rng.below(4),
                      co = 1 + rng.below(4);
    return grad_check(reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::conv2d(g, v[0], v[1], v[2]); }),
                      {random_tensor({n, h, w, ci}, rng), random_tensor({3, 3, ci, co}, rng),
                       random_tensor({1, 1, 1, co}, rng)});
  }
  if (op == "conv_transpose2d") {
    Rng rng(400 + s);
    const std::size_t n = 1 + rng.below(4), h = 1 + rng.below(4), w = 1 + rng.below(4), ci = 1 + rng.below(4),
                      co = 1 + rng.below(4);
    return grad_check(
        reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::conv_transpose2d(g, v[0], v[1], v[2]); }),
        {random_tensor({n, h, w, ci}, rng), random_tensor({3, 3, ci, co}, rng), random_tensor({1, 1, 1, co}, rng)});
  }
  if (op == "maxpool2d") {
    Rng rng(500 + s);
    const std::size_t n = 1 + rng.below(4), h = 2 * (1 + rng.below(4)), w = 2 * (1 + rng.below(4)),
                      c = 1 + rng.below(4);
    return grad_check(reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::maxpool2d(g, v[0]); }),
                      {random_distinct({n, h, w, c}, rng)});
  }
  if (op == "relu" || op == "sigmoid") {
    Rng rng((op == "relu" ? 600 : 650) + s);
    const Shape sh{1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(4)};
    if (op == "relu")
      return grad_check(reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::relu(g, v[0]); }),
                        {random_away_from_zero(sh, rng)});
    return grad_check(reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::sigmoid(g, v[0]); }),
                      {random_tensor(sh, rng, -4.0, 4.0)});
  }
  if (op == "global_average_pool") {
    Rng rng(700 + s);
    const Shape sh{1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(4)};
    return grad_check(
        reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::global_average_pool(g, v[0]); }),
        {random_tensor(sh, rng)});
  }
  if (op == "concat_channels") {
    Rng rng(800 + s);
    const std::size_t n = 1 + rng.below(4), h = 1 + rng.below(8), w = 1 + rng.below(8);
    return grad_check(
        reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::concat_channels(g, v[0], v[1]); }),
        {random_tensor({n, h, w, 1 + rng.below(4)}, rng), random_tensor({n, h, w, 1 + rng.below(4)}, rng)});
  }
  if (op == "concat_vectors") {
    Rng rng(850 + s);
    const std::size_t n = 1 + rng.below(4);
    return grad_check(reduce([](Graph<double>& g, const std::vector<Var>& v) {
                        return ops::concat_vectors(g, std::span<const Var>(v));
                      }),
                      {random_tensor(vector_shape(n, 1 + rng.below(5)), rng),
                       random_tensor(vector_shape(n, 1 + rng.below(5)), rng),
                       random_tensor(vector_shape(n, 1 + rng.below(5)), rng)});
  }
  if (op == "dense") {
    Rng rng(900 + s);
    const std::size_t n = 1 + rng.below(4), din = 1 + rng.below(8), dout = 1 + rng.below(8);
    return grad_check(reduce([](Graph<double>& g, const std::vector<Var>& v) { return ops::dense(g, v[0], v[1], v[2]); }),
                      {random_tensor(vector_shape(n, din), rng), random_tensor({1, 1, din, dout}, rng),
                       random_tensor(vector_shape(1, dout), rng)});
  }
  if (op == "bce_loss") {
    // Through the sigmoid, so probabilities stay inside the clipping band.
    Rng rng(950 + s);
    const Shape sh{1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6), 1};
    Tensor<double> target(sh);
    for (auto& v : target.data()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return grad_check(
        [target](Graph<double>& g, const std::vector<Var>& v) {
          return ops::bce_loss(g, ops::sigmoid(g, v[0]), g.constant(target));
        },
        {random_tensor(sh, rng, -3.0, 3.0)});
  }
  if (op == "mse_loss") {
    Rng rng(975 + s);
    const std::size_t n = 1 + rng.below(5);
    return grad_check([](Graph<double>& g, const std::vector<Var>& v) { return ops::mse_loss(g, v[0], v[1]); },
                      {random_tensor(vector_shape(n, 3), rng), random_tensor(vector_shape(n, 3), rng)});
  }
  if (op == "composite") {
    Rng rng(1000 + s);
    return grad_check(
        [](Graph<double>& g, const std::vector<Var>& v) {
          const Var e = ops::conv2d(g, v[0], v[1], v[2]);
          const Var p = ops::maxpool2d(g, e);
          const Var u = ops::conv_transpose2d(g, p, v[3], v[4]);
          const Var c = ops::concat_channels(g, u, e);
          const Var pooled[] = {ops::global_average_pool(g, c), ops::global_average_pool(g, p)};
          const Var vec = ops::concat_vectors(g, std::span<const Var>(pooled));
          return ops::sum(g, ops::square(g, vec));
        },
        {random_tensor({2, 4, 4, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({1, 1, 1, 3}, rng),
         random_tensor({3, 3, 3, 2}, rng), random_tensor({1, 1, 1, 2}, rng)});
  }
  throw std::invalid_argument("unknown gradient case " + std::string(op));
}

// Largest step first: truncation error is negligible on a smooth piece, while
// roundoff grows as the step shrinks.
inline constexpr std::array<double, 4> kEndToEndEps = {1e-4, 1e-5, 1e-6, 1e-7};

/// Total loss of a 32x32 H-Net (double) against random masks and forces.
/// Backpropagated gradients of both input views and of the parameters are
/// compared with central differences on `coords` sampled coordinates per view
/// and `param_coords` sampled parameter scalars. A coordinate is only probed
/// with the largest eps whose interval [x - eps, x + eps] lies in one smooth
/// piece (equal branch patterns at both ends and the centre); if none does the
/// coordinate is replaced by another draw.
inline GradCheckResult end_to_end_case(int seed, std::size_t coords = 6, std::size_t param_coords = 12) {
  const auto s = static_cast<std::uint64_t>(seed);
  HNetModel<double> m = build_hnet<double>(HNetConfig::desk(32), 9000 + s);
  Rng rng(derive_seed(s, 0xE2E));
  // Small random biases move pre-activations off exact zero.
  for (auto& p : m.params)
    if (p->name.ends_with(".bias"))
      for (auto& v : p->value.data()) v = rng.uniform(-0.05, 0.05);
  const Shape img{2, 32, 32, 3}, msk{2, 32, 32, 1};
  Tensor<double> a = random_tensor(img, rng, 0.0, 1.0), b = random_tensor(img, rng, 0.0, 1.0);
  Tensor<double> ma(msk), mb(msk);
  for (auto* t : {&ma, &mb})
    for (auto& v : t->data()) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
  const Tensor<double> f = random_tensor(vector_shape(2, 3), rng, -0.2, 0.2);
  const LossWeights w{1.0, 1.0, 1.0};

  const auto loss_of = [&](Graph<double>& g, Var va, Var vb) {
    const HNetOutput o = forward(g, m, va, vb);
    return ops::total_loss(g, ops::bce_loss(g, o.seg_a, g.constant(ma)), ops::bce_loss(g, o.seg_b, g.constant(mb)),
                           ops::mse_loss(g, o.force, g.constant(f)), w);
  };
  const auto run = [&] {
    Graph<double> g;
    const double l = g.value(loss_of(g, g.constant(a), g.constant(b))).item();
    return std::make_pair(l, branch_pattern(g));
  };

  zero_grads(m.params);
  Graph<double> g;
  const Var va = g.input(a), vb = g.input(b);
  g.backpropagate(loss_of(g, va, vb));
  const Tensor<double> grad_a = g.grad(va), grad_b = g.grad(vb);
  const std::vector<std::uint8_t> base = branch_pattern(g);

  GradCheckResult res;
  // Numeric derivative along `slot`, or nothing if every tried interval crosses a kink.
  const auto probe = [&](double& slot) -> std::optional<double> {
    for (double eps : kEndToEndEps) {
      const double orig = slot;
      slot = orig + eps;
      const auto up = run();
      slot = orig - eps;
      const auto down = run();
      slot = orig;
      if (up.second == base && down.second == base) return (up.first - down.first) / (2 * eps);
    }
    return std::nullopt;
  };
  const auto check = [&](double analytic, double& slot) {
    const auto numeric = probe(slot);
    if (!numeric) {
      ++res.skipped;
      return false;
    }
    res.max_rel_error = std::max(res.max_rel_error, relative_error(analytic, *numeric));
    ++res.checked;
    return true;
  };

  Rng pick(derive_seed(s, 0x9A7));
  for (auto [input, grad] : {std::pair{&a, &grad_a}, std::pair{&b, &grad_b}})
    for (std::size_t done = 0, tries = 0; done < coords && tries < 4 * coords; ++tries) {
      const auto i = static_cast<std::size_t>(pick.below(input->size()));
      done += check((*grad)[i], (*input)[i]);
    }
  for (std::size_t done = 0, tries = 0; done < param_coords && tries < 4 * param_coords; ++tries) {
    Parameter<double>& p = m.params[static_cast<std::size_t>(pick.below(m.params.size()))];
    const auto i = static_cast<std::size_t>(pick.below(p.value.size()));
    done += check(p.grad[i], p.value[i]);
  }
  return res;
}

}  // namespace hnet::test
