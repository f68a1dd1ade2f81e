#pragma once

#include <cmath>

#include "hcg/tape.hpp"
#include "hcg/tensor.hpp"

namespace hcg {

/// Per-channel batch normalisation state: learnable scale/shift plus running
/// statistics. All four live in (1,C,1,1) descriptors.
template <typename T>
struct BNState {
  Tensor<T> gamma, beta, running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  static BNState init(std::int64_t channels) {
    BNState s;
    s.gamma = Tensor<T>::full({1, channels, 1, 1}, T(1));
    s.beta = Tensor<T>(1, channels, 1, 1);
    s.running_mean = Tensor<T>(1, channels, 1, 1);
    s.running_var = Tensor<T>::full({1, channels, 1, 1}, T(1));
    return s;
  }

  std::int64_t channels() const { return gamma.c(); }
};

namespace detail {

template <typename T>
void bn_channel_stats(const Tensor<T>& x, Tensor<T>& mu, Tensor<T>& var) {
  const std::int64_t C = x.c(), plane = x.h() * x.w();
  const std::int64_t m = x.n() * plane;
  for (std::int64_t c = 0; c < C; ++c) {
    T sum = 0;
    for (std::int64_t n = 0; n < x.n(); ++n) {
      const T* p = x.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
    }
    mu[c] = sum / T(m);
    T sq = 0;
    for (std::int64_t n = 0; n < x.n(); ++n) {
      const T* p = x.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T d = p[i] - mu[c];
        sq += d * d;
      }
    }
    var[c] = sq / T(m);  // biased: matches the normalisation actually applied
  }
}

template <typename T>
Tensor<T> bn_apply(const Tensor<T>& x, const Tensor<T>& mu, const Tensor<T>& var,
                   const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::int64_t C = x.c(), plane = x.h() * x.w();
  Tensor<T> y(x.shape());
  for (std::int64_t c = 0; c < C; ++c) {
    const T inv = T(1) / std::sqrt(var[c] + eps);
    for (std::int64_t n = 0; n < x.n(); ++n) {
      const T* p = x.data() + (n * C + c) * plane;
      T* q = y.data() + (n * C + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) q[i] = gamma[c] * (p[i] - mu[c]) * inv + beta[c];
    }
  }
  return y;
}

}  // namespace detail

/// Batch normalisation over the channel axis of an NCHW tensor. Train mode
/// normalises with batch statistics (biased variance) and folds them into the
/// running averages with `momentum`; Inference mode normalises with the
/// running statistics and leaves the state untouched.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BNState<T>& state, RunMode mode,
                     GradTape<T>* tape = nullptr) {
  const std::int64_t C = state.channels();
  check(x.c() == C, "batch_norm: input has " + std::to_string(x.c()) +
                        " channels, state has " + std::to_string(C));
  const Shape ps{1, C, 1, 1};
  check(state.beta.shape() == ps && state.running_mean.shape() == ps &&
            state.running_var.shape() == ps && state.gamma.shape() == ps,
        "batch_norm: state descriptors must all be (1,C,1,1)");

  Tensor<T> mu(1, C, 1, 1), var(1, C, 1, 1);
  if (mode == RunMode::Train) {
    detail::bn_channel_stats(x, mu, var);
    for (std::int64_t c = 0; c < C; ++c) {
      state.running_mean[c] =
          (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
      state.running_var[c] =
          (T(1) - state.momentum) * state.running_var[c] + state.momentum * var[c];
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }
  Tensor<T> y = detail::bn_apply(x, mu, var, state.gamma, state.beta, state.eps);

  const int xid = x.grad_id, gid = state.gamma.grad_id, bid = state.beta.grad_id;
  if (tape && (xid >= 0 || gid >= 0 || bid >= 0)) {
    Tensor<T> xs = x, gs = state.gamma;
    const T eps = state.eps;
    if (mode == RunMode::Train) {
      y.grad_id = tape->record(
          y.shape(), [xs, gs, mu, var, eps, xid, gid, bid](const Tensor<T>& dy,
                                                          GradTape<T>& t) {
            const std::int64_t C = gs.c(), plane = xs.h() * xs.w();
            const std::int64_t m = xs.n() * plane;
            Tensor<T> dx(xs.shape()), dgamma(1, C, 1, 1), dbeta(1, C, 1, 1);
            for (std::int64_t c = 0; c < C; ++c) {
              const T inv = T(1) / std::sqrt(var[c] + eps);
              // Accumulate sums of dy and dy*xhat, then apply the closed-form
              // train-mode backward that routes through mean and variance.
              T sum_dy = 0, sum_dy_xhat = 0;
              for (std::int64_t n = 0; n < xs.n(); ++n) {
                const T* xp = xs.data() + (n * C + c) * plane;
                const T* dp = dy.data() + (n * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                  sum_dy += dp[i];
                  sum_dy_xhat += dp[i] * (xp[i] - mu[c]) * inv;
                }
              }
              dgamma[c] = sum_dy_xhat;
              dbeta[c] = sum_dy;
              if (xid >= 0) {
                for (std::int64_t n = 0; n < xs.n(); ++n) {
                  const T* xp = xs.data() + (n * C + c) * plane;
                  const T* dp = dy.data() + (n * C + c) * plane;
                  T* op = dx.data() + (n * C + c) * plane;
                  for (std::int64_t i = 0; i < plane; ++i) {
                    const T xhat = (xp[i] - mu[c]) * inv;
                    op[i] = gs[c] * inv *
                            (dp[i] - sum_dy / T(m) - xhat * sum_dy_xhat / T(m));
                  }
                }
              }
            }
            if (xid >= 0) t.accumulate(xid, dx);
            if (gid >= 0) t.accumulate(gid, dgamma);
            if (bid >= 0) t.accumulate(bid, dbeta);
          });
    } else {
      y.grad_id = tape->record(
          y.shape(), [xs, gs, mu, var, eps, xid, gid, bid](const Tensor<T>& dy,
                                                          GradTape<T>& t) {
            const std::int64_t C = gs.c(), plane = xs.h() * xs.w();
            Tensor<T> dx(xs.shape()), dgamma(1, C, 1, 1), dbeta(1, C, 1, 1);
            for (std::int64_t c = 0; c < C; ++c) {
              const T inv = T(1) / std::sqrt(var[c] + eps);
              for (std::int64_t n = 0; n < xs.n(); ++n) {
                const T* xp = xs.data() + (n * C + c) * plane;
                const T* dp = dy.data() + (n * C + c) * plane;
                T* op = dx.data() + (n * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                  dgamma[c] += dp[i] * (xp[i] - mu[c]) * inv;
                  dbeta[c] += dp[i];
                  op[i] = gs[c] * inv * dp[i];
                }
              }
            }
            if (xid >= 0) t.accumulate(xid, dx);
            if (gid >= 0) t.accumulate(gid, dgamma);
            if (bid >= 0) t.accumulate(bid, dbeta);
          });
    }
  }
  return y;
}

}  // namespace hcg
