#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace hcg {

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Rank-4 (batch, channel, height, width) extents. Gate descriptors use H=W=1.
struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }
  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

constexpr int kNoGrad = -1;

/// Whether stateful ops (batch norm, dropout) use batch statistics / random
/// masking (Train) or their frozen inference behaviour.
enum class RunMode { Train, Inference };

/// Dense NCHW tensor, row-major with width innermost. The value buffer is
/// contiguous; `grad_id` optionally links the tensor to a GradTape node.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires a real scalar");

 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s) {
    check(s.valid(), "Tensor: all shape entries must be >= 1, got " + s.str());
    data_.assign(static_cast<std::size_t>(s.numel()), T(0));
  }
  Tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
      : Tensor(Shape{n, c, h, w}) {}

  static Tensor full(Shape s, T value) {
    Tensor t(s);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }
  static Tensor scalar(T value) { return full({1, 1, 1, 1}, value); }

  const Shape& shape() const { return shape_; }
  std::int64_t n() const { return shape_.n; }
  std::int64_t c() const { return shape_.c; }
  std::int64_t h() const { return shape_.h; }
  std::int64_t w() const { return shape_.w; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::int64_t index(std::int64_t n, std::int64_t c, std::int64_t h,
                     std::int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& operator()(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(index(n, c, h, w))];
  }
  T operator()(std::int64_t n, std::int64_t c, std::int64_t h,
               std::int64_t w) const {
    return data_[static_cast<std::size_t>(index(n, c, h, w))];
  }

  /// Tape-node id of the op that produced this tensor, or kNoGrad.
  int grad_id = kNoGrad;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Seeded randomness. All initialization flows through Rng so that runs are
// reproducible from a single 64-bit seed.
// ---------------------------------------------------------------------------

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 step over seed^salt
  std::uint64_t z = seed ^ (salt + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(gen_); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
  }
  std::mt19937_64& gen() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(stddev * rng.normal());
}

template <typename T>
void fill_uniform(Tensor<T>& t, double lo, double hi, Rng& rng) {
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
Tensor<T> random_normal(Shape s, double stddev, Rng& rng) {
  Tensor<T> t(s);
  fill_normal(t, stddev, rng);
  return t;
}

// Seed-taking conveniences for one-off tensors (tests, fixed fixtures).
template <typename T>
void fill_normal(Tensor<T>& t, std::uint64_t seed) {
  Rng rng(seed);
  fill_normal(t, 1.0, rng);
}

template <typename T>
void fill_uniform(Tensor<T>& t, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  fill_uniform(t, lo, hi, rng);
}

template <typename T>
Tensor<T> random_normal(Shape s, std::uint64_t seed) {
  Tensor<T> t(s);
  fill_normal(t, seed);
  return t;
}

}  // namespace hcg
