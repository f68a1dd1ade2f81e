#pragma once

#include <Eigen/Core>

#include "hcg/tape.hpp"
#include "hcg/tensor.hpp"

namespace hcg {

/// 2-D convolution geometry. Weights are laid out
/// (out_channels, in_channels/groups, kh, kw); depthwise convolution is the
/// groups == in_channels == out_channels case.
struct ConvSpec {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kh = 1, kw = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
  bool bias_enabled = false;

  static ConvSpec k1x1(std::int64_t in, std::int64_t out) {
    return {in, out, 1, 1, 1, 0, 1, 1, false};
  }
  static ConvSpec k3x3(std::int64_t in, std::int64_t out, std::int64_t stride = 1,
                       std::int64_t groups = 1, std::int64_t dilation = 1) {
    return {in, out, 3, 3, stride, dilation, dilation, groups, false};
  }

  std::int64_t out_dim(std::int64_t in) const {
    return (in + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  }
  std::int64_t out_dim_w(std::int64_t in) const {
    return (in + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  }

  Shape weight_shape() const {
    return {out_channels, in_channels / groups, kh, kw};
  }

  void validate() const {
    check(in_channels >= 1 && out_channels >= 1, "ConvSpec: channels must be positive");
    check(kh >= 1 && kw >= 1 && stride >= 1 && dilation >= 1 && padding >= 0,
          "ConvSpec: invalid geometry");
    check(groups >= 1 && in_channels % groups == 0 && out_channels % groups == 0,
          "ConvSpec: channel counts must be divisible by groups (in=" +
              std::to_string(in_channels) + ", out=" + std::to_string(out_channels) +
              ", groups=" + std::to_string(groups) + ")");
  }
};

enum class ConvAlgo { Auto, Direct, Im2col };

namespace detail {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using ConstRowMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using RowMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline void conv_check_shapes(const Shape& x, const Shape& w, const ConvSpec& spec) {
  spec.validate();
  check(x.c == spec.in_channels,
        "conv2d: input has " + std::to_string(x.c) + " channels, spec expects " +
            std::to_string(spec.in_channels));
  check(w == spec.weight_shape(),
        "conv2d: weight shape " + w.str() + " does not match spec " +
            spec.weight_shape().str());
  check(spec.out_dim(x.h) >= 1 && spec.out_dim_w(x.w) >= 1,
        "conv2d: non-positive output spatial dims for input " + x.str());
}

template <typename T>
void conv2d_direct_into(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                        const ConvSpec& spec, Tensor<T>& y) {
  const std::int64_t N = x.n(), H = x.h(), W = x.w();
  const std::int64_t OH = y.h(), OW = y.w();
  const std::int64_t icpg = spec.in_channels / spec.groups;
  const std::int64_t ocpg = spec.out_channels / spec.groups;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t oc = 0; oc < spec.out_channels; ++oc) {
      const std::int64_t g = oc / ocpg;
      const T b = bias ? (*bias)[oc] : T(0);
      for (std::int64_t oh = 0; oh < OH; ++oh) {
        for (std::int64_t ow = 0; ow < OW; ++ow) {
          T acc = b;
          for (std::int64_t ic = 0; ic < icpg; ++ic) {
            for (std::int64_t r = 0; r < spec.kh; ++r) {
              const std::int64_t ih = oh * spec.stride - spec.padding + r * spec.dilation;
              if (ih < 0 || ih >= H) continue;
              for (std::int64_t s = 0; s < spec.kw; ++s) {
                const std::int64_t iw = ow * spec.stride - spec.padding + s * spec.dilation;
                if (iw < 0 || iw >= W) continue;
                acc += x(n, g * icpg + ic, ih, iw) * w(oc, ic, r, s);
              }
            }
          }
          y(n, oc, oh, ow) = acc;
        }
      }
    }
  }
}

// Column matrix: row = (ic*kh + r)*kw + s (ic global, so group blocks are
// contiguous), column = (n*OH + oh)*OW + ow.
template <typename T>
MatX<T> im2col(const Tensor<T>& x, const ConvSpec& spec, std::int64_t OH,
               std::int64_t OW) {
  const std::int64_t N = x.n(), H = x.h(), W = x.w();
  const std::int64_t rows = spec.in_channels * spec.kh * spec.kw;
  MatX<T> col(rows, N * OH * OW);
  std::int64_t j = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t oh = 0; oh < OH; ++oh) {
      for (std::int64_t ow = 0; ow < OW; ++ow, ++j) {
        T* cj = col.data() + j * rows;
        std::int64_t row = 0;
        for (std::int64_t ic = 0; ic < spec.in_channels; ++ic) {
          for (std::int64_t r = 0; r < spec.kh; ++r) {
            const std::int64_t ih = oh * spec.stride - spec.padding + r * spec.dilation;
            const bool hin = ih >= 0 && ih < H;
            const T* xr = hin ? x.data() + ((n * x.c() + ic) * H + ih) * W : nullptr;
            for (std::int64_t s = 0; s < spec.kw; ++s, ++row) {
              const std::int64_t iw = ow * spec.stride - spec.padding + s * spec.dilation;
              cj[row] = (hin && iw >= 0 && iw < W) ? xr[iw] : T(0);
            }
          }
        }
      }
    }
  }
  return col;
}

template <typename T>
void conv2d_im2col_into(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                        const ConvSpec& spec, Tensor<T>& y) {
  const std::int64_t N = x.n(), OH = y.h(), OW = y.w();
  const std::int64_t icpg = spec.in_channels / spec.groups;
  const std::int64_t ocpg = spec.out_channels / spec.groups;
  const std::int64_t Kg = icpg * spec.kh * spec.kw;
  const MatX<T> col = im2col(x, spec, OH, OW);
  MatX<T> out(spec.out_channels, N * OH * OW);
  for (std::int64_t g = 0; g < spec.groups; ++g) {
    ConstRowMap<T> wg(w.data() + g * ocpg * Kg, ocpg, Kg);
    out.middleRows(g * ocpg, ocpg).noalias() = wg * col.middleRows(g * Kg, Kg);
  }
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oc = 0; oc < spec.out_channels; ++oc) {
      const T b = bias ? (*bias)[oc] : T(0);
      T* yr = y.data() + (n * spec.out_channels + oc) * OH * OW;
      for (std::int64_t p = 0; p < OH * OW; ++p) yr[p] = out(oc, n * OH * OW + p) + b;
    }
}

inline bool conv_prefer_direct(const ConvSpec& spec) {
  // Depthwise kernels are cheap enough that GEMM setup dominates.
  return spec.groups == spec.in_channels;
}

}  // namespace detail

template <typename T>
struct ConvGrads {
  Tensor<T> dx, dw, dbias;
};

/// Gradients of conv2d with respect to input, weight, and bias; GEMM-based
/// (dW = dOut · colᵀ, dcol = Wᵀ · dOut followed by col2im scatter).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w,
                             const ConvSpec& spec, const Tensor<T>& dout,
                             bool want_dx, bool want_dw, bool want_dbias) {
  using detail::MatX;
  const std::int64_t N = x.n(), H = x.h(), W = x.w();
  const std::int64_t OH = dout.h(), OW = dout.w();
  const std::int64_t icpg = spec.in_channels / spec.groups;
  const std::int64_t ocpg = spec.out_channels / spec.groups;
  const std::int64_t Kg = icpg * spec.kh * spec.kw;

  MatX<T> dY(spec.out_channels, N * OH * OW);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oc = 0; oc < spec.out_channels; ++oc) {
      const T* dr = dout.data() + (n * spec.out_channels + oc) * OH * OW;
      for (std::int64_t p = 0; p < OH * OW; ++p) dY(oc, n * OH * OW + p) = dr[p];
    }

  ConvGrads<T> grads;
  if (want_dbias) {
    grads.dbias = Tensor<T>(1, spec.out_channels, 1, 1);
    for (std::int64_t oc = 0; oc < spec.out_channels; ++oc)
      grads.dbias[oc] = dY.row(oc).sum();
  }
  if (want_dw || want_dx) {
    const MatX<T> col = detail::im2col(x, spec, OH, OW);
    if (want_dw) {
      grads.dw = Tensor<T>(spec.weight_shape());
      for (std::int64_t g = 0; g < spec.groups; ++g) {
        detail::RowMap<T> dwg(grads.dw.data() + g * ocpg * Kg, ocpg, Kg);
        dwg.noalias() =
            dY.middleRows(g * ocpg, ocpg) * col.middleRows(g * Kg, Kg).transpose();
      }
    }
    if (want_dx) {
      MatX<T> dcol(col.rows(), col.cols());
      for (std::int64_t g = 0; g < spec.groups; ++g) {
        detail::ConstRowMap<T> wg(w.data() + g * ocpg * Kg, ocpg, Kg);
        dcol.middleRows(g * Kg, Kg).noalias() =
            wg.transpose() * dY.middleRows(g * ocpg, ocpg);
      }
      grads.dx = Tensor<T>(x.shape());
      std::int64_t j = 0;
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t oh = 0; oh < OH; ++oh)
          for (std::int64_t ow = 0; ow < OW; ++ow, ++j) {
            const T* cj = dcol.data() + j * dcol.rows();
            std::int64_t row = 0;
            for (std::int64_t ic = 0; ic < spec.in_channels; ++ic)
              for (std::int64_t r = 0; r < spec.kh; ++r) {
                const std::int64_t ih = oh * spec.stride - spec.padding + r * spec.dilation;
                if (ih < 0 || ih >= H) {
                  row += spec.kw;
                  continue;
                }
                for (std::int64_t s = 0; s < spec.kw; ++s, ++row) {
                  const std::int64_t iw =
                      ow * spec.stride - spec.padding + s * spec.dilation;
                  if (iw >= 0 && iw < W) grads.dx(n, ic, ih, iw) += cj[row];
                }
              }
          }
    }
  }
  return grads;
}

/// 2-D convolution over NCHW input. `bias` may be null; when given it is a
/// (1,out_channels,1,1) descriptor. The direct and im2col paths agree to
/// 1e-12 in double precision; Auto picks direct for depthwise shapes.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>* bias, const ConvSpec& spec,
                 ConvAlgo algo = ConvAlgo::Auto, GradTape<T>* tape = nullptr) {
  detail::conv_check_shapes(input.shape(), weight.shape(), spec);
  if (bias)
    check(bias->shape() == Shape{1, spec.out_channels, 1, 1},
          "conv2d: bias must be a (1,out_channels,1,1) descriptor");

  Tensor<T> y(input.n(), spec.out_channels, spec.out_dim(input.h()),
              spec.out_dim_w(input.w()));
  const bool direct =
      algo == ConvAlgo::Direct ||
      (algo == ConvAlgo::Auto && detail::conv_prefer_direct(spec));
  if (direct)
    detail::conv2d_direct_into(input, weight, bias, spec, y);
  else
    detail::conv2d_im2col_into(input, weight, bias, spec, y);

  if (tape && (input.grad_id >= 0 || weight.grad_id >= 0 ||
               (bias && bias->grad_id >= 0))) {
    const int xid = input.grad_id, wid = weight.grad_id;
    const int bid = bias ? bias->grad_id : kNoGrad;
    Tensor<T> xs = input, ws = weight;
    y.grad_id = tape->record(y.shape(), [xs, ws, spec, xid, wid, bid](
                                            const Tensor<T>& dout, GradTape<T>& t) {
      ConvGrads<T> g =
          conv2d_backward(xs, ws, spec, dout, xid >= 0, wid >= 0, bid >= 0);
      if (xid >= 0) t.accumulate(xid, g.dx);
      if (wid >= 0) t.accumulate(wid, g.dw);
      if (bid >= 0) t.accumulate(bid, g.dbias);
    });
  }
  return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                 GradTape<T>* tape = nullptr) {
  return conv2d(input, weight, static_cast<const Tensor<T>*>(nullptr), spec,
                ConvAlgo::Auto, tape);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::nullptr_t,
                 const ConvSpec& spec, ConvAlgo algo = ConvAlgo::Auto,
                 GradTape<T>* tape = nullptr) {
  return conv2d(input, weight, static_cast<const Tensor<T>*>(nullptr), spec, algo, tape);
}

}  // namespace hcg
