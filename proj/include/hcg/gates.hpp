#pragma once

#include <functional>
#include <string>

#include "hcg/conv.hpp"
#include "hcg/norm.hpp"
#include "hcg/ops.hpp"

namespace hcg {

// ---------------------------------------------------------------------------
// Initialisation: Gaussian with std = sqrt(2 / fan_out). For convolutions the
// fan-out counts each weight's outgoing connections, kh*kw*out/groups; for
// dense layers it is the output width. Biases start at zero.
// ---------------------------------------------------------------------------

template <typename T>
void init_conv_weight(Tensor<T>& w, const ConvSpec& sp, Rng& rng) {
  const double fan_out =
      static_cast<double>(sp.kh * sp.kw * sp.out_channels / sp.groups);
  fill_normal(w, std::sqrt(2.0 / fan_out), rng);
}

template <typename T>
void init_fc_weight(Tensor<T>& w, Rng& rng) {
  fill_normal(w, std::sqrt(2.0 / static_cast<double>(w.n())), rng);
}

/// Update gate: pools each excitation branch through its own spatial
/// attention, mixes the two descriptors through a bottleneck FC, and emits a
/// per-channel binary softmax over the branches plus the reweighted sum v.
template <typename T>
struct UpdateGateParams {
  std::int64_t channels = 0, hidden = 0;
  Tensor<T> ws33, ws55;            // (1,C,1,1): 1x1 attention convs per branch
  Tensor<T> W, b;                  // (hid,2C,1,1), (1,hid,1,1); b applied after bn
  BNState<T> bn;                   // over the hidden width
  Tensor<T> W33, b33, W55, b55;    // (C,hid,1,1) + (1,C,1,1) per branch
};

template <typename T>
UpdateGateParams<T> make_update_gate(std::int64_t channels, std::int64_t ru, Rng& rng) {
  check(channels >= 1 && ru >= 1, "make_update_gate: bad sizes");
  UpdateGateParams<T> p;
  p.channels = channels;
  p.hidden = std::max<std::int64_t>(1, 2 * channels / ru);
  p.ws33 = Tensor<T>(1, channels, 1, 1);
  p.ws55 = Tensor<T>(1, channels, 1, 1);
  init_conv_weight(p.ws33, ConvSpec::k1x1(channels, 1), rng);
  init_conv_weight(p.ws55, ConvSpec::k1x1(channels, 1), rng);
  p.W = Tensor<T>(p.hidden, 2 * channels, 1, 1);
  init_fc_weight(p.W, rng);
  p.b = Tensor<T>(1, p.hidden, 1, 1);
  p.bn = BNState<T>::init(p.hidden);
  p.W33 = Tensor<T>(channels, p.hidden, 1, 1);
  p.W55 = Tensor<T>(channels, p.hidden, 1, 1);
  init_fc_weight(p.W33, rng);
  init_fc_weight(p.W55, rng);
  p.b33 = Tensor<T>(1, channels, 1, 1);
  p.b55 = Tensor<T>(1, channels, 1, 1);
  return p;
}

/// Forget gate: one spatial-attention descriptor, bottleneck FC (bias before
/// the norm here, unlike the update gate), sigmoid back to C channels.
template <typename T>
struct ForgetGateParams {
  std::int64_t channels = 0, hidden = 0;
  Tensor<T> wsf;        // (1,C,1,1)
  Tensor<T> W1, b1;     // (hid,C,1,1), (1,hid,1,1); b1 applied before bn
  BNState<T> bn;        // over the hidden width
  Tensor<T> W2, b2;     // (C,hid,1,1), (1,C,1,1)
};

template <typename T>
ForgetGateParams<T> make_forget_gate(std::int64_t channels, std::int64_t rf, Rng& rng) {
  check(channels >= 1 && rf >= 1, "make_forget_gate: bad sizes");
  ForgetGateParams<T> p;
  p.channels = channels;
  p.hidden = std::max<std::int64_t>(1, channels / rf);
  p.wsf = Tensor<T>(1, channels, 1, 1);
  init_conv_weight(p.wsf, ConvSpec::k1x1(channels, 1), rng);
  p.W1 = Tensor<T>(p.hidden, channels, 1, 1);
  init_fc_weight(p.W1, rng);
  p.b1 = Tensor<T>(1, p.hidden, 1, 1);
  p.bn = BNState<T>::init(p.hidden);
  p.W2 = Tensor<T>(channels, p.hidden, 1, 1);
  init_fc_weight(p.W2, rng);
  p.b2 = Tensor<T>(1, channels, 1, 1);
  return p;
}

/// Global descriptor of x under a learned spatial attention: a 1x1 conv
/// produces one logit per position, softmax over H*W turns those into weights,
/// and each channel is the attention-weighted sum of its plane.
template <typename T>
Tensor<T> spatial_attention_pool(const Tensor<T>& x, const Tensor<T>& ws,
                                 GradTape<T>* tape = nullptr) {
  auto smap = conv2d(x, ws, ConvSpec::k1x1(x.c(), 1), tape);
  auto attn = softmax_over(smap, SoftmaxAxis::Spatial, tape);
  return spatial_sum(mul(x, attn, tape), tape);
}

template <typename T>
struct UpdateGateOut {
  Tensor<T> v;          // (N,C,1,1) branch-blended descriptor
  Tensor<T> u33, u55;   // (N,C,1,1) softmax weights, u33 + u55 == 1
  Tensor<T> z33, z55;   // pooled branch descriptors (handy for oracles)
};

template <typename T>
UpdateGateOut<T> update_gate(const Tensor<T>& y33, const Tensor<T>& y55,
                             UpdateGateParams<T>& p, RunMode mode,
                             GradTape<T>* tape = nullptr) {
  const std::int64_t C = p.channels;
  check(y33.c() == C && y55.c() == C, "update_gate: branch channels must equal " +
                                          std::to_string(C));
  UpdateGateOut<T> out;
  out.z33 = spatial_attention_pool(y33, p.ws33, tape);
  out.z55 = spatial_attention_pool(y55, p.ws55, tape);
  auto zcat = concat_channels(out.z33, out.z55, tape);
  auto pre = fully_connected(zcat, p.W, nullptr, tape);
  auto h = tanh_act(add(batch_norm(pre, p.bn, mode, tape), p.b, tape), tape);
  auto l33 = fully_connected(h, p.W33, &p.b33, tape);
  auto l55 = fully_connected(h, p.W55, &p.b55, tape);
  auto u = softmax_over(concat_channels(l33, l55, tape), SoftmaxAxis::Branch, tape);
  out.u33 = slice_channels(u, 0, C, tape);
  out.u55 = slice_channels(u, C, 2 * C, tape);
  out.v = add(mul(out.u33, out.z33, tape), mul(out.u55, out.z55, tape), tape);
  return out;
}

template <typename T>
Tensor<T> forget_gate(const Tensor<T>& x, ForgetGateParams<T>& p, RunMode mode,
                      GradTape<T>* tape = nullptr) {
  check(x.c() == p.channels, "forget_gate: input channels must equal " +
                                 std::to_string(p.channels));
  auto z = spatial_attention_pool(x, p.wsf, tape);
  auto pre = fully_connected(z, p.W1, &p.b1, tape);
  auto h = tanh_act(batch_norm(pre, p.bn, mode, tape), tape);
  return sigmoid(fully_connected(h, p.W2, &p.b2, tape), tape);
}

// Visit every trainable tensor (weights, biases, norm scale/shift — not the
// running statistics) under dotted names matching the model's export scheme.
template <typename T>
void for_each_param(UpdateGateParams<T>& p, const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn(prefix + ".ws33", p.ws33);
  fn(prefix + ".ws55", p.ws55);
  fn(prefix + ".W", p.W);
  fn(prefix + ".b", p.b);
  fn(prefix + ".bn.gamma", p.bn.gamma);
  fn(prefix + ".bn.beta", p.bn.beta);
  fn(prefix + ".W33", p.W33);
  fn(prefix + ".b33", p.b33);
  fn(prefix + ".W55", p.W55);
  fn(prefix + ".b55", p.b55);
}

template <typename T>
void for_each_param(ForgetGateParams<T>& p, const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn(prefix + ".wsf", p.wsf);
  fn(prefix + ".W1", p.W1);
  fn(prefix + ".b1", p.b1);
  fn(prefix + ".bn.gamma", p.bn.gamma);
  fn(prefix + ".bn.beta", p.bn.beta);
  fn(prefix + ".W2", p.W2);
  fn(prefix + ".b2", p.b2);
}

}  // namespace hcg
