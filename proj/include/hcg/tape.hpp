#pragma once

#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hcg/tensor.hpp"

namespace hcg {

/// Reverse-mode autodiff tape. Forward ops append one record per evaluation;
/// records are therefore already topologically ordered and replaying them in
/// reverse yields exact gradients for every tracked leaf.
///
/// A tape is confined to one forward/backward pair: leaves are tracked, the
/// forward pass is run with the tape passed to each op, and backward() seeds
/// the scalar loss with 1. backward() can be called repeatedly; records are
/// pure with respect to their saved state.
template <typename T>
class GradTape {
 public:
  using PullFn = std::function<void(const Tensor<T>& dout, GradTape<T>&)>;

  /// Registers `t` as a differentiable leaf and assigns its grad_id.
  int leaf(Tensor<T>& t) {
    const int id = fresh(t.shape());
    t.grad_id = id;
    leaf_ids_.push_back(id);
    return id;
  }

  /// Records an op. `ins` lists the grad_ids of tracked inputs (untracked
  /// inputs are simply omitted by the caller's pull function).
  int record(Shape out_shape, PullFn pull) {
    const int id = fresh(out_shape);
    records_.push_back({id, std::move(pull)});
    return id;
  }

  bool known(int id) const { return id >= 0 && id < next_id_; }
  const Shape& shape_of(int id) const { return shapes_[static_cast<std::size_t>(id)]; }
  const std::vector<int>& leaf_ids() const { return leaf_ids_; }

  /// Accumulates a gradient contribution during backward().
  void accumulate(int id, const Tensor<T>& g) {
    Tensor<T>& slot = grads_[static_cast<std::size_t>(id)];
    if (slot.empty()) {
      slot = g;
    } else {
      for (std::int64_t i = 0; i < slot.numel(); ++i) slot[i] += g[i];
    }
  }

  bool has_grad(int id) const {
    return known(id) && !grads_[static_cast<std::size_t>(id)].empty();
  }
  const Tensor<T>& grad(int id) const { return grads_[static_cast<std::size_t>(id)]; }

  /// Runs reverse-mode accumulation from the scalar `loss_id` and returns the
  /// gradient of every tracked leaf (zeros for leaves the loss does not
  /// reach). The seed must be a (1,1,1,1) tensor.
  std::unordered_map<int, Tensor<T>> backward(int loss_id) {
    check(known(loss_id), "backward: unknown tensor id " + std::to_string(loss_id));
    const Shape& ls = shape_of(loss_id);
    check(ls == Shape{1, 1, 1, 1},
          "backward: loss must be scalar-shaped (1,1,1,1), got " + ls.str());

    grads_.assign(static_cast<std::size_t>(next_id_), Tensor<T>{});
    grads_[static_cast<std::size_t>(loss_id)] = Tensor<T>::scalar(T(1));

    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      const Tensor<T>& dout = grads_[static_cast<std::size_t>(it->out)];
      if (!dout.empty()) it->pull(dout, *this);
    }

    std::unordered_map<int, Tensor<T>> out;
    for (int id : leaf_ids_) {
      Tensor<T>& g = grads_[static_cast<std::size_t>(id)];
      out.emplace(id, g.empty() ? Tensor<T>(shape_of(id)) : std::move(g));
    }
    grads_.clear();
    return out;
  }

 private:
  struct Record {
    int out;
    PullFn pull;
  };

  int fresh(Shape s) {
    shapes_.push_back(s);
    return next_id_++;
  }

  int next_id_ = 0;
  std::vector<Shape> shapes_;
  std::vector<Record> records_;
  std::vector<int> leaf_ids_;
  std::vector<Tensor<T>> grads_;  // live only inside backward()
};

}  // namespace hcg
