#pragma once

#include <unordered_map>

#include "hcg/graph.hpp"
#include "hcg/norm.hpp"

namespace hcg {

/// Instantiated parameters of a graph: plain tensors plus batch-norm states,
/// keyed by declaration name. The graph pointer fixes iteration order.
template <typename T>
struct ParamStore {
  const ModelGraph* graph = nullptr;
  std::unordered_map<std::string, Tensor<T>> tensors;
  std::unordered_map<std::string, BNState<T>> bns;

  /// Visits weights/biases, then batch-norm scale/shift, in declaration order.
  void for_each_trainable(
      const std::function<void(const std::string&, Tensor<T>&)>& fn) {
    for (const ParamDecl& p : graph->params) fn(p.name, tensors.at(p.name));
    for (const BnDecl& b : graph->bns) {
      fn(b.name + ".gamma", bns.at(b.name).gamma);
      fn(b.name + ".beta", bns.at(b.name).beta);
    }
  }

  std::int64_t trainable_count() {
    std::int64_t total = 0;
    for_each_trainable([&](const std::string&, Tensor<T>& t) { total += t.numel(); });
    return total;
  }
};

/// Materialise parameters. Each tensor draws from its own stream seeded by
/// (seed, name-hash), so values do not depend on declaration order.
template <typename T>
ParamStore<T> instantiate(const ModelGraph& g, std::uint64_t seed) {
  ParamStore<T> st;
  st.graph = &g;
  for (const ParamDecl& p : g.params) {
    Tensor<T> t(p.shape);
    if (p.init_std > 0.0) {
      Rng rng(mix_seed(seed, fnv1a64(p.name)));
      fill_normal(t, p.init_std, rng);
    }
    st.tensors.emplace(p.name, std::move(t));
  }
  for (const BnDecl& b : g.bns) st.bns.emplace(b.name, BNState<T>::init(b.channels));
  return st;
}

template <typename T>
void register_leaves(ParamStore<T>& st, GradTape<T>& tape) {
  st.for_each_trainable([&](const std::string&, Tensor<T>& t) { tape.leaf(t); });
}

template <typename T>
struct ExecOptions {
  RunMode mode = RunMode::Inference;
  GradTape<T>* tape = nullptr;
  std::uint64_t dropout_seed = 0;
  bool capture_gates = false;   // keep softmax/sigmoid outputs for invariants
  bool probabilities = false;   // softmax the logits over the class axis
};

template <typename T>
struct GateCapture {
  int node = -1;
  std::string label;
  NodeKind kind = NodeKind::Softmax;
  SoftmaxAxis axis = SoftmaxAxis::Spatial;
  Tensor<T> value;
};

template <typename T>
struct ExecResult {
  Tensor<T> output;
  std::vector<Shape> node_shapes;        // actual shape of every node's value
  std::vector<GateCapture<T>> gates;
};

/// Interpret the graph on `input`. Intermediate values are freed as soon as
/// their last consumer has run; with a tape attached the op closures keep the
/// copies they need for the backward pass.
template <typename T>
ExecResult<T> forward(const ModelGraph& g, ParamStore<T>& store,
                      const Tensor<T>& input, const ExecOptions<T>& opts = {}) {
  check(store.graph == &g, "forward: parameter store built for another graph");
  check(input.c() == g.input.c, "forward: input has " + std::to_string(input.c()) +
                                    " channels, model expects " +
                                    std::to_string(g.input.c));
  const int N = static_cast<int>(g.nodes.size());
  std::vector<int> remaining(static_cast<std::size_t>(N), 0);
  for (const Node& n : g.nodes)
    for (int in : n.inputs) ++remaining[static_cast<std::size_t>(in)];
  ++remaining[static_cast<std::size_t>(g.output)];  // never freed

  GradTape<T>* tape = opts.tape;
  std::vector<Tensor<T>> values(static_cast<std::size_t>(N));
  ExecResult<T> res;
  res.node_shapes.resize(static_cast<std::size_t>(N));

  for (int i = 0; i < N; ++i) {
    const Node& n = g.nodes[static_cast<std::size_t>(i)];
    auto in = [&](std::size_t k) -> const Tensor<T>& {
      return values[static_cast<std::size_t>(n.inputs[k])];
    };
    Tensor<T> val;
    switch (n.kind) {
      case NodeKind::Input:
        val = input;
        break;
      case NodeKind::Conv: {
        if (n.even_input)
          check(in(0).h() % 2 == 0 && in(0).w() % 2 == 0,
                "'" + n.label + "': downsampling needs even spatial dims, got " +
                    in(0).shape().str());
        const Tensor<T>* b = n.bias.empty() ? nullptr : &store.tensors.at(n.bias);
        val = conv2d(in(0), store.tensors.at(n.weight), b, n.conv, ConvAlgo::Auto,
                     tape);
        break;
      }
      case NodeKind::BatchNorm:
        val = batch_norm(in(0), store.bns.at(n.bn), opts.mode, tape);
        break;
      case NodeKind::Relu:
        val = relu(in(0), tape);
        break;
      case NodeKind::Tanh:
        val = tanh_act(in(0), tape);
        break;
      case NodeKind::Sigmoid:
        val = sigmoid(in(0), tape);
        break;
      case NodeKind::Softmax:
        val = softmax_over(in(0), n.axis, tape);
        break;
      case NodeKind::Concat: {
        std::vector<const Tensor<T>*> xs;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) xs.push_back(&in(k));
        val = concat_channels(xs, tape);
        break;
      }
      case NodeKind::Slice:
        val = slice_channels(in(0), n.c0, n.c1, tape);
        break;
      case NodeKind::Add:
        val = add(in(0), in(1), tape);
        break;
      case NodeKind::Mul:
        val = mul(in(0), in(1), tape);
        break;
      case NodeKind::BiasAdd:
        val = add(in(0), store.tensors.at(n.bias), tape);
        break;
      case NodeKind::MaxPool:
        val = max_pool(in(0), n.k, n.s, n.p, tape);
        break;
      case NodeKind::GlobalAvgPool:
        val = global_avg_pool(in(0), tape);
        break;
      case NodeKind::SpatialSum:
        val = spatial_sum(in(0), tape);
        break;
      case NodeKind::FullyConnected: {
        const Tensor<T>* b = n.bias.empty() ? nullptr : &store.tensors.at(n.bias);
        val = fully_connected(in(0), store.tensors.at(n.weight), b, tape);
        break;
      }
      case NodeKind::Dropout: {
        Rng rng(mix_seed(opts.dropout_seed, static_cast<std::uint64_t>(i)));
        val = dropout(in(0), n.rate, opts.mode, rng, tape);
        break;
      }
    }
    res.node_shapes[static_cast<std::size_t>(i)] = val.shape();
    if (opts.capture_gates &&
        (n.kind == NodeKind::Softmax || n.kind == NodeKind::Sigmoid))
      res.gates.push_back({i, n.label, n.kind, n.axis, val});
    values[static_cast<std::size_t>(i)] = std::move(val);
    for (int src : n.inputs)
      if (--remaining[static_cast<std::size_t>(src)] == 0)
        values[static_cast<std::size_t>(src)] = Tensor<T>();
  }
  res.output = std::move(values[static_cast<std::size_t>(g.output)]);
  if (opts.probabilities)
    res.output = softmax_over(res.output, SoftmaxAxis::Channel, tape);
  return res;
}

}  // namespace hcg
