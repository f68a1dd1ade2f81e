#pragma once

#include "hcg/gates.hpp"

namespace hcg {

/// Geometry of one squeeze–multiscale–gate module. The squeeze cell first
/// widens the input to floor(alpha * out_channels) with a 1x1 conv, then maps
/// to out_channels with a grouped 3x3 conv carrying the module's stride.
struct SMGConfig {
  std::int64_t in_channels = 0;   // concatenated input width
  std::int64_t out_channels = 0;  // module output width
  double alpha = 4.0;
  std::int64_t groups = 4;
  std::int64_t stride = 1;
  std::int64_t ru = 2, rf = 2;

  std::int64_t mid_channels() const {
    return static_cast<std::int64_t>(alpha * static_cast<double>(out_channels));
  }

  void validate() const {
    check(in_channels >= 1 && out_channels >= 1, "SMGConfig: channels must be positive");
    check(alpha > 0 && mid_channels() >= 1, "SMGConfig: alpha too small");
    check(stride == 1 || stride == 2, "SMGConfig: stride must be 1 or 2");
    check(ru >= 1 && rf >= 1, "SMGConfig: reduction ratios must be positive");
    check(groups >= 1 && out_channels >= groups,
          "SMGConfig: out_channels=" + std::to_string(out_channels) +
              " must be at least groups=" + std::to_string(groups));
    check(mid_channels() % groups == 0 && out_channels % groups == 0,
          "SMGConfig: grouped conv needs widths divisible by groups=" +
              std::to_string(groups) + " (mid=" + std::to_string(mid_channels()) +
              ", out=" + std::to_string(out_channels) + ")");
  }

  ConvSpec conv1_spec() const { return ConvSpec::k1x1(in_channels, mid_channels()); }
  ConvSpec conv2_spec() const {
    return ConvSpec::k3x3(mid_channels(), out_channels, stride, groups);
  }
  ConvSpec conv33_spec() const {
    return ConvSpec::k3x3(out_channels, out_channels, 1, out_channels);
  }
  ConvSpec conv55_spec() const {
    return ConvSpec::k3x3(out_channels, out_channels, 1, out_channels, /*dilation=*/2);
  }
};

template <typename T>
struct SMGParams {
  SMGConfig cfg;
  BNState<T> bn1;
  Tensor<T> conv1;  // 1x1, in -> mid
  BNState<T> bn2;
  Tensor<T> conv2;  // grouped 3x3 with the stride, mid -> out
  BNState<T> bn33, bn55;
  Tensor<T> conv33, conv55;  // depthwise 3x3; the 55 branch dilates to a 5x5 field
  UpdateGateParams<T> update;
  ForgetGateParams<T> forget;
};

template <typename T>
SMGParams<T> make_smg_params(const SMGConfig& cfg, Rng& rng) {
  cfg.validate();
  SMGParams<T> p;
  p.cfg = cfg;
  p.bn1 = BNState<T>::init(cfg.in_channels);
  p.conv1 = Tensor<T>(cfg.conv1_spec().weight_shape());
  init_conv_weight(p.conv1, cfg.conv1_spec(), rng);
  p.bn2 = BNState<T>::init(cfg.mid_channels());
  p.conv2 = Tensor<T>(cfg.conv2_spec().weight_shape());
  init_conv_weight(p.conv2, cfg.conv2_spec(), rng);
  p.bn33 = BNState<T>::init(cfg.out_channels);
  p.bn55 = BNState<T>::init(cfg.out_channels);
  p.conv33 = Tensor<T>(cfg.conv33_spec().weight_shape());
  p.conv55 = Tensor<T>(cfg.conv55_spec().weight_shape());
  init_conv_weight(p.conv33, cfg.conv33_spec(), rng);
  init_conv_weight(p.conv55, cfg.conv55_spec(), rng);
  p.update = make_update_gate<T>(cfg.out_channels, cfg.ru, rng);
  p.forget = make_forget_gate<T>(cfg.out_channels, cfg.rf, rng);
  return p;
}

/// Pre-activated double conv: BN-ReLU-1x1 widening, BN-ReLU-grouped-3x3 with
/// the module stride. Both convolutions are bias-free.
template <typename T>
Tensor<T> squeeze_cell(const Tensor<T>& x, SMGParams<T>& p, RunMode mode,
                       GradTape<T>* tape = nullptr) {
  auto t = relu(batch_norm(x, p.bn1, mode, tape), tape);
  t = conv2d(t, p.conv1, p.cfg.conv1_spec(), tape);
  t = relu(batch_norm(t, p.bn2, mode, tape), tape);
  return conv2d(t, p.conv2, p.cfg.conv2_spec(), tape);
}

/// The two depthwise branches (3x3, and 3x3 dilated to a 5x5 field), each with
/// its own BN-ReLU pre-activation, blended by the update gate into v.
template <typename T>
UpdateGateOut<T> multiscale_excitation(const Tensor<T>& xp, SMGParams<T>& p,
                                       RunMode mode, GradTape<T>* tape = nullptr) {
  auto y33 = conv2d(relu(batch_norm(xp, p.bn33, mode, tape), tape), p.conv33,
                    p.cfg.conv33_spec(), tape);
  auto y55 = conv2d(relu(batch_norm(xp, p.bn55, mode, tape), tape), p.conv55,
                    p.cfg.conv55_spec(), tape);
  return update_gate(y33, y55, p.update, mode, tape);
}

template <typename T>
struct SMGOut {
  Tensor<T> out;      // f * xprime + v, the module output
  Tensor<T> xprime;   // squeeze-cell output the gates modulate
  Tensor<T> f;        // forget weights in (0,1)
  UpdateGateOut<T> u; // update-gate internals
};

template <typename T>
SMGOut<T> smg_forward(const Tensor<T>& x, SMGParams<T>& p, RunMode mode,
                      GradTape<T>* tape = nullptr) {
  SMGOut<T> o;
  o.xprime = squeeze_cell(x, p, mode, tape);
  o.u = multiscale_excitation(o.xprime, p, mode, tape);
  o.f = forget_gate(o.xprime, p.forget, mode, tape);
  o.out = add(mul(o.f, o.xprime, tape), o.u.v, tape);
  return o;
}

template <typename T>
void for_each_param(SMGParams<T>& p, const std::string& prefix,
                    const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn(prefix + ".squeeze.bn1.gamma", p.bn1.gamma);
  fn(prefix + ".squeeze.bn1.beta", p.bn1.beta);
  fn(prefix + ".squeeze.conv1", p.conv1);
  fn(prefix + ".squeeze.bn2.gamma", p.bn2.gamma);
  fn(prefix + ".squeeze.bn2.beta", p.bn2.beta);
  fn(prefix + ".squeeze.conv2", p.conv2);
  fn(prefix + ".excite.bn33.gamma", p.bn33.gamma);
  fn(prefix + ".excite.bn33.beta", p.bn33.beta);
  fn(prefix + ".excite.conv33", p.conv33);
  fn(prefix + ".excite.bn55.gamma", p.bn55.gamma);
  fn(prefix + ".excite.bn55.beta", p.bn55.beta);
  fn(prefix + ".excite.conv55", p.conv55);
  for_each_param(p.update, prefix + ".update", fn);
  for_each_param(p.forget, prefix + ".forget", fn);
}

/// Every BN state in the module, for tests that need to seed running stats.
template <typename T>
void for_each_bn(SMGParams<T>& p, const std::function<void(BNState<T>&)>& fn) {
  fn(p.bn1);
  fn(p.bn2);
  fn(p.bn33);
  fn(p.bn55);
  fn(p.update.bn);
  fn(p.forget.bn);
}

}  // namespace hcg
