#pragma once

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <vector>

#include "hcg/tape.hpp"
#include "hcg/tensor.hpp"

namespace hcg {

namespace detail {

// Size-1 axes broadcast against anything; all other axes must match.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto axis = [](std::int64_t x, std::int64_t y, const char* name) {
    check(x == y || x == 1 || y == 1,
          std::string("broadcast: incompatible ") + name + " axis (" +
              std::to_string(x) + " vs " + std::to_string(y) + ")");
    return x == 1 ? y : x;
  };
  return {axis(a.n, b.n, "n"), axis(a.c, b.c, "c"), axis(a.h, b.h, "h"),
          axis(a.w, b.w, "w")};
}

// Flat index into a tensor of shape `s` for logical coordinates that may
// exceed size-1 axes of `s` (those axes clamp to 0).
inline std::int64_t bcast_index(const Shape& s, std::int64_t n, std::int64_t c,
                                std::int64_t h, std::int64_t w) {
  return ((std::min(n, s.n - 1) * s.c + std::min(c, s.c - 1)) * s.h +
          std::min(h, s.h - 1)) *
             s.w +
         std::min(w, s.w - 1);
}

}  // namespace detail

/// Elementwise sum with size-1 broadcasting on any axis.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, GradTape<T>* tape = nullptr) {
  const Shape os = detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> y(os);
  std::int64_t j = 0;
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t c = 0; c < os.c; ++c)
      for (std::int64_t h = 0; h < os.h; ++h)
        for (std::int64_t w = 0; w < os.w; ++w, ++j)
          y[j] = a[detail::bcast_index(a.shape(), n, c, h, w)] +
                 b[detail::bcast_index(b.shape(), n, c, h, w)];
  if (tape && (a.grad_id >= 0 || b.grad_id >= 0)) {
    const int aid = a.grad_id, bid = b.grad_id;
    const Shape as = a.shape(), bs = b.shape();
    y.grad_id = tape->record(os, [aid, bid, as, bs, os](const Tensor<T>& dy,
                                                        GradTape<T>& t) {
      Tensor<T> da(as), db(bs);
      std::int64_t j = 0;
      for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t c = 0; c < os.c; ++c)
          for (std::int64_t h = 0; h < os.h; ++h)
            for (std::int64_t w = 0; w < os.w; ++w, ++j) {
              if (aid >= 0) da[detail::bcast_index(as, n, c, h, w)] += dy[j];
              if (bid >= 0) db[detail::bcast_index(bs, n, c, h, w)] += dy[j];
            }
      if (aid >= 0) t.accumulate(aid, da);
      if (bid >= 0) t.accumulate(bid, db);
    });
  }
  return y;
}

/// Elementwise (Hadamard) product with size-1 broadcasting on any axis.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, GradTape<T>* tape = nullptr) {
  const Shape os = detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> y(os);
  std::int64_t j = 0;
  for (std::int64_t n = 0; n < os.n; ++n)
    for (std::int64_t c = 0; c < os.c; ++c)
      for (std::int64_t h = 0; h < os.h; ++h)
        for (std::int64_t w = 0; w < os.w; ++w, ++j)
          y[j] = a[detail::bcast_index(a.shape(), n, c, h, w)] *
                 b[detail::bcast_index(b.shape(), n, c, h, w)];
  if (tape && (a.grad_id >= 0 || b.grad_id >= 0)) {
    const int aid = a.grad_id, bid = b.grad_id;
    Tensor<T> as = a, bs = b;
    y.grad_id = tape->record(os, [aid, bid, as, bs, os](const Tensor<T>& dy,
                                                        GradTape<T>& t) {
      Tensor<T> da(as.shape()), db(bs.shape());
      std::int64_t j = 0;
      for (std::int64_t n = 0; n < os.n; ++n)
        for (std::int64_t c = 0; c < os.c; ++c)
          for (std::int64_t h = 0; h < os.h; ++h)
            for (std::int64_t w = 0; w < os.w; ++w, ++j) {
              const std::int64_t ia = detail::bcast_index(as.shape(), n, c, h, w);
              const std::int64_t ib = detail::bcast_index(bs.shape(), n, c, h, w);
              if (aid >= 0) da[ia] += dy[j] * bs[ib];
              if (bid >= 0) db[ib] += dy[j] * as[ia];
            }
      if (aid >= 0) t.accumulate(aid, da);
      if (bid >= 0) t.accumulate(bid, db);
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    Tensor<T> xs = x;
    y.grad_id = tape->record(y.shape(), [xs, xid](const Tensor<T>& dy, GradTape<T>& t) {
      Tensor<T> dx(xs.shape());
      for (std::int64_t i = 0; i < xs.numel(); ++i)
        dx[i] = xs[i] > T(0) ? dy[i] : T(0);
      t.accumulate(xid, dx);
    });
  }
  return y;
}

template <typename T>
Tensor<T> tanh_act(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = std::tanh(x[i]);
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    Tensor<T> ys = y;
    y.grad_id = tape->record(y.shape(), [ys, xid](const Tensor<T>& dy, GradTape<T>& t) {
      Tensor<T> dx(ys.shape());
      for (std::int64_t i = 0; i < ys.numel(); ++i) dx[i] = dy[i] * (T(1) - ys[i] * ys[i]);
      t.accumulate(xid, dx);
    });
  }
  return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    // Evaluate through exp of a non-positive argument for stability.
    const T v = x[i];
    y[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                     : std::exp(v) / (T(1) + std::exp(v));
  }
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    Tensor<T> ys = y;
    y.grad_id = tape->record(y.shape(), [ys, xid](const Tensor<T>& dy, GradTape<T>& t) {
      Tensor<T> dx(ys.shape());
      for (std::int64_t i = 0; i < ys.numel(); ++i) dx[i] = dy[i] * ys[i] * (T(1) - ys[i]);
      t.accumulate(xid, dx);
    });
  }
  return y;
}

/// Which index set a softmax normalises over.
///  - Spatial: all H*W positions of each (n, c) plane sum to one.
///  - Branch:  channels are two stacked halves [a | b]; each pair
///             {c, c + C/2} at the same (n, h, w) forms a binary softmax.
///  - Channel: all channels at one (n, h, w) position; turns logits into
///             class probabilities.
enum class SoftmaxAxis { Spatial, Branch, Channel };

template <typename T>
Tensor<T> softmax_over(const Tensor<T>& x, SoftmaxAxis axis,
                       GradTape<T>* tape = nullptr) {
  Tensor<T> y(x.shape());
  const std::int64_t C = x.c(), plane = x.h() * x.w();
  if (axis == SoftmaxAxis::Spatial) {
    for (std::int64_t n = 0; n < x.n(); ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const T* p = x.data() + (n * C + c) * plane;
        T* q = y.data() + (n * C + c) * plane;
        T m = p[0];
        for (std::int64_t i = 1; i < plane; ++i) m = std::max(m, p[i]);
        T sum = 0;
        for (std::int64_t i = 0; i < plane; ++i) {
          q[i] = std::exp(p[i] - m);
          sum += q[i];
        }
        for (std::int64_t i = 0; i < plane; ++i) q[i] /= sum;
      }
  } else if (axis == SoftmaxAxis::Channel) {
    for (std::int64_t n = 0; n < x.n(); ++n)
      for (std::int64_t i = 0; i < plane; ++i) {
        auto at = [&](std::int64_t c) { return (n * C + c) * plane + i; };
        T m = x[at(0)];
        for (std::int64_t c = 1; c < C; ++c) m = std::max(m, x[at(c)]);
        T sum = 0;
        for (std::int64_t c = 0; c < C; ++c) {
          y[at(c)] = std::exp(x[at(c)] - m);
          sum += y[at(c)];
        }
        for (std::int64_t c = 0; c < C; ++c) y[at(c)] /= sum;
      }
  } else {
    check(C % 2 == 0, "softmax_over: Branch axis needs an even channel count, got " +
                          std::to_string(C));
    const std::int64_t Cb = C / 2;
    for (std::int64_t n = 0; n < x.n(); ++n)
      for (std::int64_t c = 0; c < Cb; ++c)
        for (std::int64_t i = 0; i < plane; ++i) {
          const std::int64_t i1 = (n * C + c) * plane + i;
          const std::int64_t i2 = (n * C + c + Cb) * plane + i;
          const T m = std::max(x[i1], x[i2]);
          const T e1 = std::exp(x[i1] - m), e2 = std::exp(x[i2] - m);
          y[i1] = e1 / (e1 + e2);
          y[i2] = e2 / (e1 + e2);
        }
  }
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    Tensor<T> ys = y;
    y.grad_id = tape->record(
        y.shape(), [ys, axis, xid](const Tensor<T>& dy, GradTape<T>& t) {
          Tensor<T> dx(ys.shape());
          const std::int64_t C = ys.c(), plane = ys.h() * ys.w();
          if (axis == SoftmaxAxis::Spatial) {
            for (std::int64_t n = 0; n < ys.n(); ++n)
              for (std::int64_t c = 0; c < C; ++c) {
                const std::int64_t off = (n * C + c) * plane;
                T dot = 0;
                for (std::int64_t i = 0; i < plane; ++i) dot += dy[off + i] * ys[off + i];
                for (std::int64_t i = 0; i < plane; ++i)
                  dx[off + i] = ys[off + i] * (dy[off + i] - dot);
              }
          } else if (axis == SoftmaxAxis::Channel) {
            for (std::int64_t n = 0; n < ys.n(); ++n)
              for (std::int64_t i = 0; i < plane; ++i) {
                auto at = [&](std::int64_t c) { return (n * C + c) * plane + i; };
                T dot = 0;
                for (std::int64_t c = 0; c < C; ++c) dot += dy[at(c)] * ys[at(c)];
                for (std::int64_t c = 0; c < C; ++c)
                  dx[at(c)] = ys[at(c)] * (dy[at(c)] - dot);
              }
          } else {
            const std::int64_t Cb = C / 2;
            for (std::int64_t n = 0; n < ys.n(); ++n)
              for (std::int64_t c = 0; c < Cb; ++c)
                for (std::int64_t i = 0; i < plane; ++i) {
                  const std::int64_t i1 = (n * C + c) * plane + i;
                  const std::int64_t i2 = (n * C + c + Cb) * plane + i;
                  const T dot = dy[i1] * ys[i1] + dy[i2] * ys[i2];
                  dx[i1] = ys[i1] * (dy[i1] - dot);
                  dx[i2] = ys[i2] * (dy[i2] - dot);
                }
          }
          t.accumulate(xid, dx);
        });
  }
  return y;
}

/// Concatenate along the channel axis; inputs must agree on n/h/w.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs,
                          GradTape<T>* tape = nullptr) {
  check(!xs.empty(), "concat_channels: no inputs");
  const Shape s0 = xs[0]->shape();
  std::int64_t C = 0;
  for (const Tensor<T>* x : xs) {
    check(x->n() == s0.n && x->h() == s0.h && x->w() == s0.w,
          "concat_channels: mismatched n/h/w between inputs");
    C += x->c();
  }
  Tensor<T> y(s0.n, C, s0.h, s0.w);
  const std::int64_t plane = s0.h * s0.w;
  for (std::int64_t n = 0; n < s0.n; ++n) {
    std::int64_t co = 0;
    for (const Tensor<T>* x : xs) {
      std::copy(x->data() + n * x->c() * plane, x->data() + (n + 1) * x->c() * plane,
                y.data() + (n * C + co) * plane);
      co += x->c();
    }
  }
  bool tracked = false;
  for (const Tensor<T>* x : xs) tracked = tracked || x->grad_id >= 0;
  if (tape && tracked) {
    std::vector<int> ids;
    std::vector<std::int64_t> chans;
    for (const Tensor<T>* x : xs) {
      ids.push_back(x->grad_id);
      chans.push_back(x->c());
    }
    y.grad_id = tape->record(
        y.shape(), [ids, chans, s0, C, plane](const Tensor<T>& dy, GradTape<T>& t) {
          std::int64_t co = 0;
          for (std::size_t k = 0; k < ids.size(); ++k) {
            if (ids[k] >= 0) {
              Tensor<T> dx(s0.n, chans[k], s0.h, s0.w);
              for (std::int64_t n = 0; n < s0.n; ++n)
                std::copy(dy.data() + (n * C + co) * plane,
                          dy.data() + (n * C + co + chans[k]) * plane,
                          dx.data() + n * chans[k] * plane);
              t.accumulate(ids[k], dx);
            }
            co += chans[k];
          }
        });
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b,
                          GradTape<T>* tape = nullptr) {
  return concat_channels<T>({&a, &b}, tape);
}

/// Keep channels [c0, c1) of the input.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t c0, std::int64_t c1,
                         GradTape<T>* tape = nullptr) {
  check(0 <= c0 && c0 < c1 && c1 <= x.c(),
        "slice_channels: range [" + std::to_string(c0) + "," + std::to_string(c1) +
            ") invalid for " + std::to_string(x.c()) + " channels");
  const std::int64_t plane = x.h() * x.w(), C = x.c();
  Tensor<T> y(x.n(), c1 - c0, x.h(), x.w());
  for (std::int64_t n = 0; n < x.n(); ++n)
    std::copy(x.data() + (n * C + c0) * plane, x.data() + (n * C + c1) * plane,
              y.data() + n * (c1 - c0) * plane);
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    const Shape xsh = x.shape();
    y.grad_id = tape->record(
        y.shape(), [xid, xsh, c0, c1, plane](const Tensor<T>& dy, GradTape<T>& t) {
          Tensor<T> dx(xsh);
          for (std::int64_t n = 0; n < xsh.n; ++n)
            std::copy(dy.data() + n * (c1 - c0) * plane,
                      dy.data() + (n + 1) * (c1 - c0) * plane,
                      dx.data() + (n * xsh.c + c0) * plane);
          t.accumulate(xid, dx);
        });
  }
  return y;
}

/// Max pooling with square window; ties resolve to the first position in
/// row-major window order. Padded positions never win.
template <typename T>
Tensor<T> max_pool(const Tensor<T>& x, std::int64_t k, std::int64_t stride,
                   std::int64_t padding, GradTape<T>* tape = nullptr) {
  check(k >= 1 && stride >= 1 && padding >= 0 && padding < k,
        "max_pool: invalid window geometry");
  const std::int64_t OH = (x.h() + 2 * padding - k) / stride + 1;
  const std::int64_t OW = (x.w() + 2 * padding - k) / stride + 1;
  check(OH >= 1 && OW >= 1, "max_pool: non-positive output dims for input " +
                                x.shape().str());
  Tensor<T> y(x.n(), x.c(), OH, OW);
  std::vector<std::int64_t> arg(static_cast<std::size_t>(y.numel()));
  std::int64_t j = 0;
  for (std::int64_t n = 0; n < x.n(); ++n)
    for (std::int64_t c = 0; c < x.c(); ++c)
      for (std::int64_t oh = 0; oh < OH; ++oh)
        for (std::int64_t ow = 0; ow < OW; ++ow, ++j) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t bi = -1;
          for (std::int64_t r = 0; r < k; ++r) {
            const std::int64_t ih = oh * stride - padding + r;
            if (ih < 0 || ih >= x.h()) continue;
            for (std::int64_t s = 0; s < k; ++s) {
              const std::int64_t iw = ow * stride - padding + s;
              if (iw < 0 || iw >= x.w()) continue;
              const std::int64_t ii = x.index(n, c, ih, iw);
              if (x[ii] > best) {
                best = x[ii];
                bi = ii;
              }
            }
          }
          y[j] = best;
          arg[static_cast<std::size_t>(j)] = bi;
        }
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    const Shape xsh = x.shape();
    y.grad_id = tape->record(y.shape(), [xid, xsh, arg](const Tensor<T>& dy,
                                                        GradTape<T>& t) {
      Tensor<T> dx(xsh);
      for (std::int64_t j = 0; j < dy.numel(); ++j)
        dx[arg[static_cast<std::size_t>(j)]] += dy[j];
      t.accumulate(xid, dx);
    });
  }
  return y;
}

namespace detail {

template <typename T, bool Mean>
Tensor<T> plane_reduce(const Tensor<T>& x, GradTape<T>* tape) {
  const std::int64_t plane = x.h() * x.w();
  Tensor<T> y(x.n(), x.c(), 1, 1);
  for (std::int64_t nc = 0; nc < x.n() * x.c(); ++nc) {
    T sum = 0;
    const T* p = x.data() + nc * plane;
    for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
    y[nc] = Mean ? sum / T(plane) : sum;
  }
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    const Shape xsh = x.shape();
    y.grad_id = tape->record(y.shape(), [xid, xsh, plane](const Tensor<T>& dy,
                                                          GradTape<T>& t) {
      Tensor<T> dx(xsh);
      for (std::int64_t nc = 0; nc < xsh.n * xsh.c; ++nc) {
        const T g = Mean ? dy[nc] / T(plane) : dy[nc];
        T* p = dx.data() + nc * plane;
        for (std::int64_t i = 0; i < plane; ++i) p[i] = g;
      }
      t.accumulate(xid, dx);
    });
  }
  return y;
}

}  // namespace detail

/// (N,C,H,W) -> (N,C,1,1) mean over each spatial plane.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
  return detail::plane_reduce<T, true>(x, tape);
}

/// (N,C,H,W) -> (N,C,1,1) sum over each spatial plane.
template <typename T>
Tensor<T> spatial_sum(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
  return detail::plane_reduce<T, false>(x, tape);
}

/// Dense layer on channel vectors: input (N,C,1,1), weight (O,C,1,1), optional
/// bias (1,O,1,1); output (N,O,1,1).
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight,
                          const Tensor<T>* bias, GradTape<T>* tape = nullptr) {
  check(x.h() == 1 && x.w() == 1, "fully_connected: input must be (N,C,1,1), got " +
                                      x.shape().str());
  const std::int64_t N = x.n(), C = x.c(), O = weight.n();
  check(weight.shape() == Shape{O, C, 1, 1},
        "fully_connected: weight shape " + weight.shape().str() +
            " does not match input channels " + std::to_string(C));
  if (bias)
    check(bias->shape() == Shape{1, O, 1, 1},
          "fully_connected: bias must be (1,out,1,1)");
  using RM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RM> X(x.data(), N, C), W(weight.data(), O, C);
  Tensor<T> y(N, O, 1, 1);
  Eigen::Map<RM> Y(y.data(), N, O);
  Y.noalias() = X * W.transpose();
  if (bias)
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t o = 0; o < O; ++o) y[n * O + o] += (*bias)[o];

  const int xid = x.grad_id, wid = weight.grad_id;
  const int bid = bias ? bias->grad_id : kNoGrad;
  if (tape && (xid >= 0 || wid >= 0 || bid >= 0)) {
    Tensor<T> xs = x, ws = weight;
    y.grad_id = tape->record(
        y.shape(), [xs, ws, xid, wid, bid](const Tensor<T>& dy, GradTape<T>& t) {
          const std::int64_t N = xs.n(), C = xs.c(), O = ws.n();
          Eigen::Map<const RM> X(xs.data(), N, C), W(ws.data(), O, C),
              dY(dy.data(), N, O);
          if (xid >= 0) {
            Tensor<T> dx(N, C, 1, 1);
            Eigen::Map<RM>(dx.data(), N, C).noalias() = dY * W;
            t.accumulate(xid, dx);
          }
          if (wid >= 0) {
            Tensor<T> dw(O, C, 1, 1);
            Eigen::Map<RM>(dw.data(), O, C).noalias() = dY.transpose() * X;
            t.accumulate(wid, dw);
          }
          if (bid >= 0) {
            Tensor<T> db(1, O, 1, 1);
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t o = 0; o < O; ++o) db[o] += dy[n * O + o];
            t.accumulate(bid, db);
          }
        });
  }
  return y;
}

template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& weight, std::nullptr_t,
                          GradTape<T>* tape = nullptr) {
  return fully_connected(x, weight, static_cast<const Tensor<T>*>(nullptr), tape);
}

/// Sum of every element, as a (1,1,1,1) scalar.
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x, GradTape<T>* tape = nullptr) {
  Tensor<T> y(1, 1, 1, 1);
  for (std::int64_t i = 0; i < x.numel(); ++i) y[0] += x[i];
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    const Shape xsh = x.shape();
    y.grad_id = tape->record(y.shape(), [xid, xsh](const Tensor<T>& dy, GradTape<T>& t) {
      t.accumulate(xid, Tensor<T>::full(xsh, dy[0]));
    });
  }
  return y;
}

/// Mean softmax cross-entropy of (N,K,1,1) logits against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::int64_t>& labels,
                        GradTape<T>* tape = nullptr) {
  const std::int64_t N = logits.n(), K = logits.c();
  check(logits.h() == 1 && logits.w() == 1,
        "cross_entropy: logits must be (N,K,1,1), got " + logits.shape().str());
  check(static_cast<std::int64_t>(labels.size()) == N,
        "cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
            std::to_string(N));
  Tensor<T> probs(N, K, 1, 1);
  T loss = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    check(labels[n] >= 0 && labels[n] < K, "cross_entropy: label out of range");
    const T* p = logits.data() + n * K;
    T m = p[0];
    for (std::int64_t k = 1; k < K; ++k) m = std::max(m, p[k]);
    T sum = 0;
    for (std::int64_t k = 0; k < K; ++k) {
      probs[n * K + k] = std::exp(p[k] - m);
      sum += probs[n * K + k];
    }
    for (std::int64_t k = 0; k < K; ++k) probs[n * K + k] /= sum;
    loss += std::log(sum) + m - p[labels[n]];
  }
  Tensor<T> y = Tensor<T>::scalar(loss / T(N));
  if (tape && logits.grad_id >= 0) {
    const int xid = logits.grad_id;
    y.grad_id = tape->record(y.shape(), [probs, labels, xid](const Tensor<T>& dy,
                                                             GradTape<T>& t) {
      const std::int64_t N = probs.n(), K = probs.c();
      Tensor<T> dx(N, K, 1, 1);
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t k = 0; k < K; ++k)
          dx[n * K + k] = dy[0] *
                          (probs[n * K + k] - (labels[n] == k ? T(1) : T(0))) / T(N);
      t.accumulate(xid, dx);
    });
  }
  return y;
}

/// Inverted dropout: in Train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); in Inference mode it is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, RunMode mode, Rng& rng,
                  GradTape<T>* tape = nullptr) {
  check(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0,1)");
  if (mode == RunMode::Inference || rate == 0.0) return x;
  Tensor<T> mask(x.shape());
  const T keep_scale = T(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * mask[i];
  if (tape && x.grad_id >= 0) {
    const int xid = x.grad_id;
    y.grad_id = tape->record(y.shape(), [mask, xid](const Tensor<T>& dy, GradTape<T>& t) {
      Tensor<T> dx(mask.shape());
      for (std::int64_t i = 0; i < mask.numel(); ++i) dx[i] = dy[i] * mask[i];
      t.accumulate(xid, dx);
    });
  }
  return y;
}

}  // namespace hcg
