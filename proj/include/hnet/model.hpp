#pragma once

// H-Net: two mirrored encoder-decoder sub-networks (shared weights), a
// segmentation head per sub-network and one force-regression head fed by
// pooled bottleneck and decoder embeddings of both sub-networks.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hnet/autodiff.hpp"
#include "hnet/errors.hpp"
#include "hnet/ops.hpp"
#include "hnet/rng.hpp"
#include "hnet/tensor.hpp"

namespace hnet {

struct HNetConfig {
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t channels = 3;
  std::size_t blocks = 4;
  std::size_t filters = 32;
  std::size_t kernel = 3;
  std::vector<std::size_t> dense_units = {64, 32, 3};
  bool shared_parameters = true;

  static HNetConfig desk(std::size_t side) {
    HNetConfig c;
    c.height = c.width = side;
    return c;
  }

  void validate() const {
    if (blocks == 0) throw ConfigError("blocks must be positive");
    if (filters == 0 || channels == 0) throw ConfigError("filters and channels must be positive");
    if (kernel % 2 == 0) throw ConfigError("kernel size must be odd");
    const std::size_t div = std::size_t{1} << blocks;
    if (height == 0 || width == 0 || height % div != 0 || width % div != 0)
      throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) +
                        " is not divisible by 2^blocks = " + std::to_string(div));
    if (dense_units.empty() || dense_units.back() != 3)
      throw ConfigError("regression head must end in 3 units (fx, fy, fz)");
  }

  /// Width of one sub-network's embedding (bottleneck + every decoder block).
  std::size_t embedding_width() const { return filters * (blocks + 1); }
  std::size_t regression_input_width() const { return 2 * embedding_width(); }

  bool operator==(const HNetConfig&) const = default;
};

template <class T>
struct LayerParams {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
};

template <class T>
struct SubNetwork {
  struct EncoderBlock {
    LayerParams<T> conv1, conv2;
  };
  struct DecoderBlock {
    LayerParams<T> tconv, conv1, conv2;
  };
  std::vector<EncoderBlock> encoder;
  LayerParams<T> btn1, btn2;
  std::vector<DecoderBlock> decoder;
  LayerParams<T> seg_head;
};

template <class T>
struct HNetModel {
  HNetConfig config;
  ParameterSet<T> params;
  std::array<SubNetwork<T>, 2> sub;
  std::vector<LayerParams<T>> regression;

  HNetModel() = default;
  HNetModel(const HNetModel&) = delete;
  HNetModel& operator=(const HNetModel&) = delete;
  HNetModel(HNetModel&&) = default;
  HNetModel& operator=(HNetModel&&) = default;
};

/// Pre-pooling copies, block outputs and embeddings of one forward pass.
/// Decoder blocks are indexed in execution order (block 0 consumes the
/// bottleneck and the deepest encoder copy).
struct ForwardTrace {
  std::array<std::vector<Var>, 2> enc_copy, enc_out, dec_out, v_dec;
  std::array<Var, 2> bottleneck, v_btn, v_sn;
  Var v_reg;
};

struct HNetOutput {
  Var seg_a, seg_b, force;
};

namespace detail {

template <class T>
LayerParams<T> make_layer(ParameterSet<T>& ps, Rng& rng, const std::string& name, Shape wshape,
                          std::size_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> w(wshape);
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  LayerParams<T> lp;
  lp.weight = &ps.add(name + ".weight", std::move(w));
  lp.bias = &ps.add(name + ".bias", Tensor<T>(vector_shape(1, wshape.c)));
  return lp;
}

template <class T>
SubNetwork<T> make_subnetwork(ParameterSet<T>& ps, Rng& rng, const HNetConfig& c, const std::string& prefix) {
  const std::size_t k = c.kernel, f = c.filters;
  const auto conv = [&](const std::string& name, std::size_t kk, std::size_t cin, std::size_t cout) {
    return make_layer(ps, rng, prefix + name, Shape{kk, kk, cin, cout}, kk * kk * cin);
  };
  SubNetwork<T> sn;
  for (std::size_t b = 1; b <= c.blocks; ++b) {
    const std::string base = "enc.b" + std::to_string(b);
    sn.encoder.push_back({conv(base + ".conv1", k, b == 1 ? c.channels : f, f), conv(base + ".conv2", k, f, f)});
  }
  sn.btn1 = conv("btn.conv1", k, f, f);
  sn.btn2 = conv("btn.conv2", k, f, f);
  for (std::size_t b = 1; b <= c.blocks; ++b) {
    const std::string base = "dec.b" + std::to_string(b);
    sn.decoder.push_back({conv(base + ".tconv", k, f, f), conv(base + ".conv1", k, 2 * f, f),
                          conv(base + ".conv2", k, f, f)});
  }
  sn.seg_head = conv("seg.head", 1, f, 1);
  return sn;
}

template <class T>
Var conv_layer(Graph<T>& g, Var x, const LayerParams<T>& lp) {
  return ops::conv2d(g, x, g.param(*lp.weight), g.param(*lp.bias));
}

}  // namespace detail

/// Allocates and He-uniform initializes every parameter (biases zero), in a
/// fixed order so that a seed fully determines the weights.
template <class T>
HNetModel<T> build_hnet(const HNetConfig& config, std::uint64_t seed) {
  config.validate();
  HNetModel<T> m;
  m.config = config;
  Rng rng(derive_seed(seed, 0x4E45));
  m.sub[0] = detail::make_subnetwork(m.params, rng, config, "");
  m.sub[1] = config.shared_parameters ? m.sub[0] : detail::make_subnetwork(m.params, rng, config, "sn2.");
  std::size_t din = config.regression_input_width();
  for (std::size_t i = 0; i < config.dense_units.size(); ++i) {
    const std::size_t dout = config.dense_units[i];
    m.regression.push_back(detail::make_layer(m.params, rng, "reg.fc" + std::to_string(i + 1),
                                              Shape{1, 1, din, dout}, din));
    din = dout;
  }
  return m;
}

template <class T>
std::size_t parameter_count(const HNetModel<T>& m) {
  return m.params.element_count();
}

template <class T>
std::size_t parameter_count(const ParameterSet<T>& ps) {
  return ps.element_count();
}

/// Runs one sub-network on `image` and records its part of the trace.
/// Returns the segmentation probability map.
template <class T>
Var forward_subnetwork(Graph<T>& g, const HNetModel<T>& m, std::size_t sn, Var image, ForwardTrace& trace) {
  const SubNetwork<T>& net = m.sub[sn];
  using detail::conv_layer;
  Var x = image;
  trace.enc_copy[sn].clear();
  trace.enc_out[sn].clear();
  trace.dec_out[sn].clear();
  trace.v_dec[sn].clear();
  for (const auto& blk : net.encoder) {
    x = ops::relu(g, conv_layer(g, x, blk.conv1));
    x = ops::relu(g, conv_layer(g, x, blk.conv2));
    trace.enc_copy[sn].push_back(x);
    x = ops::maxpool2d(g, x);
    trace.enc_out[sn].push_back(x);
  }
  x = ops::relu(g, conv_layer(g, x, net.btn1));
  x = ops::relu(g, conv_layer(g, x, net.btn2));
  trace.bottleneck[sn] = x;
  trace.v_btn[sn] = ops::global_average_pool(g, x);
  const std::size_t nb = net.decoder.size();
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& blk = net.decoder[b];
    x = ops::conv_transpose2d(g, x, g.param(*blk.tconv.weight), g.param(*blk.tconv.bias));
    x = ops::concat_channels(g, x, trace.enc_copy[sn][nb - 1 - b]);
    x = ops::relu(g, conv_layer(g, x, blk.conv1));
    x = ops::relu(g, conv_layer(g, x, blk.conv2));
    trace.dec_out[sn].push_back(x);
    trace.v_dec[sn].push_back(ops::global_average_pool(g, x));
  }
  return ops::sigmoid(g, conv_layer(g, x, net.seg_head));
}

/// V_sn = v_btn ++ v_dec[0] ++ ... ++ v_dec[B-1] per sub-network, then
/// V_reg = V_1 ++ V_2. Fills trace.v_sn and trace.v_reg.
template <class T>
Var assemble_regression_input(Graph<T>& g, ForwardTrace& trace) {
  for (std::size_t sn = 0; sn < 2; ++sn) {
    if (!trace.v_btn[sn].valid() || trace.v_dec[sn].empty())
      throw ContractError("assemble_regression_input: trace of sub-network " + std::to_string(sn + 1) +
                          " is not populated");
    std::vector<Var> parts{trace.v_btn[sn]};
    for (const Var& v : trace.v_dec[sn]) {
      if (!v.valid()) throw ContractError("assemble_regression_input: missing decoder embedding");
      parts.push_back(v);
    }
    trace.v_sn[sn] = ops::concat_vectors(g, std::span<const Var>(parts));
  }
  const std::array<Var, 2> both{trace.v_sn[0], trace.v_sn[1]};
  trace.v_reg = ops::concat_vectors(g, std::span<const Var>(both));
  return trace.v_reg;
}

template <class T>
Var regression_head(Graph<T>& g, const HNetModel<T>& m, Var v_reg) {
  Var x = v_reg;
  for (std::size_t i = 0; i < m.regression.size(); ++i) {
    const auto& lp = m.regression[i];
    x = ops::dense(g, x, g.param(*lp.weight), g.param(*lp.bias));
    if (i + 1 < m.regression.size()) x = ops::relu(g, x);
  }
  return x;
}

/// Full forward pass over a batch of view pairs, each (n, h, w, c).
template <class T>
HNetOutput forward(Graph<T>& g, const HNetModel<T>& m, Var view_a, Var view_b, ForwardTrace& trace) {
  const HNetConfig& c = m.config;
  for (Var v : {view_a, view_b}) {
    const Shape s = g.value(v).shape();
    if (s.h != c.height || s.w != c.width || s.c != c.channels)
      throw ShapeError("forward: input " + s.str() + " does not match configured (" + std::to_string(c.height) +
                       "," + std::to_string(c.width) + "," + std::to_string(c.channels) + ")");
  }
  if (g.value(view_a).shape().n != g.value(view_b).shape().n)
    throw ShapeError("forward: views have different batch sizes");
  HNetOutput out;
  out.seg_a = forward_subnetwork(g, m, 0, view_a, trace);
  out.seg_b = forward_subnetwork(g, m, 1, view_b, trace);
  out.force = regression_head(g, m, assemble_regression_input(g, trace));
  return out;
}

template <class T>
HNetOutput forward(Graph<T>& g, const HNetModel<T>& m, Var view_a, Var view_b) {
  ForwardTrace trace;
  return forward(g, m, view_a, view_b, trace);
}

/// Inference-only result (plain tensors).
template <class T>
struct Prediction {
  Tensor<T> seg_a, seg_b, force;
};

template <class T>
Prediction<T> predict(const HNetModel<T>& m, const Tensor<T>& view_a, const Tensor<T>& view_b) {
  Graph<T> g;
  const HNetOutput o = forward(g, m, g.constant(view_a), g.constant(view_b));
  return {g.value(o.seg_a), g.value(o.seg_b), g.value(o.force)};
}

/// 1 where probability >= threshold, else 0.
template <class T>
Tensor<T> predict_mask(const Tensor<T>& prob, T threshold = T{0.5}) {
  Tensor<T> out(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? T{1} : T{0};
  return out;
}

/// Parameters bound in a graph (each counted once).
template <class T>
std::size_t graph_parameter_count(const Graph<T>& g) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.node(i).param != nullptr) n += g.node(i).param->value.size();
  return n;
}

}  // namespace hnet
