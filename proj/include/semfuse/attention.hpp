#pragma once

#include <functional>
#include <string>

#include "semfuse/ops.hpp"
#include "semfuse/parameters.hpp"
#include "semfuse/types.hpp"

namespace semfuse {

/// Per-scale linear maps producing queries, keys and values from C-channel tokens.
template <typename T>
struct AttentionProjection {
  Var<T> w_q, b_q, w_k, b_k, w_v, b_v;
};

/// Squeeze-and-excitation bottleneck.
template <typename T>
struct ChannelGateParams {
  Var<T> w1, b1, w2, b2;
};

/// Pooled-descriptor 7x7 convolution producing one gate per pixel.
template <typename T>
struct SpatialGateParams {
  Var<T> w, b;
};

/// Efficient (linear-cost) self-attention over the spatial tokens of F.
///
/// With X the N x C token matrix: Q = X Wq, K = X Wk, V = X Wv; K is normalized
/// by a softmax over the token axis, the C x C context G = softmax(K)^T V is
/// formed, and the result is Q G reshaped back to (B, C, h, w). No N x N
/// affinity is ever built.
template <typename T>
Var<T> efficient_attention(const Var<T>& features, const AttentionProjection<T>& proj) {
  const std::size_t h = features.dim(2), w = features.dim(3);
  const Var<T> tokens = ops::to_tokens(features);
  const Var<T> q = ops::linear(tokens, proj.w_q, proj.b_q);
  const Var<T> k = ops::softmax_tokens(ops::linear(tokens, proj.w_k, proj.b_k));
  const Var<T> v = ops::linear(tokens, proj.w_v, proj.b_v);
  const Var<T> context = ops::bmm(k, v, /*trans_a=*/true);
  return ops::from_tokens(ops::bmm(q, context), h, w);
}

/// F + F * A: element-wise reinforcement with a residual path.
template <typename T>
Var<T> strengthen(const Var<T>& features, const Var<T>& attention) {
  return ops::add(features, ops::mul(features, attention));
}

/// Channel gate map (B, C, h, w) with one sigmoid weight per channel.
template <typename T>
Var<T> channel_gate(const Var<T>& features, const ChannelGateParams<T>& p) {
  const Var<T> pooled = ops::global_avg_pool(features);
  const Var<T> hidden = ops::relu(ops::linear(pooled, p.w1, p.b1));
  const Var<T> gate = ops::sigmoid(ops::linear(hidden, p.w2, p.b2));
  return ops::expand_channel_gate(gate, features.dim(2), features.dim(3));
}

/// Spatial gate (B, 1, h, w) from channel mean/max descriptors.
template <typename T>
Var<T> spatial_gate(const Var<T>& features, const SpatialGateParams<T>& p) {
  return ops::sigmoid(ops::conv2d(ops::channel_mean_max(features), p.w, p.b, 3));
}

template <typename T>
struct GateParams {
  AttentionVariant variant = AttentionVariant::SLA;
  AttentionProjection<T> sla;
  ChannelGateParams<T> cha;
  SpatialGateParams<T> spa;
};

template <typename T>
using StrengthenFn = std::function<Var<T>(const Var<T>&)>;

/// Strengthening function of one fusion-block branch for the configured variant.
template <typename T>
StrengthenFn<T> make_variant(const GateParams<T>& params) {
  switch (params.variant) {
    case AttentionVariant::SLA:
      return [p = params.sla](const Var<T>& f) { return strengthen(f, efficient_attention(f, p)); };
    case AttentionVariant::CHA:
      return [p = params.cha](const Var<T>& f) { return strengthen(f, channel_gate(f, p)); };
    case AttentionVariant::SPA:
      return [p = params.spa](const Var<T>& f) {
        return strengthen(f, ops::expand_spatial_gate(spatial_gate(f, p), f.dim(1)));
      };
    case AttentionVariant::NONE:
      return [](const Var<T>& f) { return f; };
  }
  throw ConfigError("unknown attention variant");
}

inline std::size_t channel_gate_hidden(std::size_t channels) { return std::max<std::size_t>(1, channels / 4); }

/// Registers the parameters of one branch's gate under `prefix`.
template <typename T>
GateParams<T> make_gate_params(AttentionVariant variant, std::size_t channels, const std::string& prefix,
                               ParameterSet<T>& params, Rng& rng) {
  GateParams<T> g;
  g.variant = variant;
  const std::size_t c = channels;
  switch (variant) {
    case AttentionVariant::SLA:
      g.sla.w_q = params.add(prefix + ".q.weight", fan_in_uniform<T>({c, c}, c, rng));
      g.sla.b_q = params.add(prefix + ".q.bias", Tensor<T>({c}));
      g.sla.w_k = params.add(prefix + ".k.weight", fan_in_uniform<T>({c, c}, c, rng));
      g.sla.b_k = params.add(prefix + ".k.bias", Tensor<T>({c}));
      g.sla.w_v = params.add(prefix + ".v.weight", fan_in_uniform<T>({c, c}, c, rng));
      g.sla.b_v = params.add(prefix + ".v.bias", Tensor<T>({c}));
      break;
    case AttentionVariant::CHA: {
      const std::size_t hidden = channel_gate_hidden(c);
      g.cha.w1 = params.add(prefix + ".fc1.weight", fan_in_uniform<T>({c, hidden}, c, rng, leaky_gain(0.0)));
      g.cha.b1 = params.add(prefix + ".fc1.bias", Tensor<T>({hidden}));
      g.cha.w2 = params.add(prefix + ".fc2.weight", fan_in_uniform<T>({hidden, c}, hidden, rng));
      g.cha.b2 = params.add(prefix + ".fc2.bias", Tensor<T>({c}));
      break;
    }
    case AttentionVariant::SPA:
      g.spa.w = params.add(prefix + ".conv.weight", fan_in_uniform<T>({1, 2, 7, 7}, 2 * 49, rng));
      g.spa.b = params.add(prefix + ".conv.bias", Tensor<T>({1}));
      break;
    case AttentionVariant::NONE:
      break;
  }
  return g;
}

}  // namespace semfuse
