#pragma once

#include <cmath>
#include <set>
#include <unordered_map>

#include "hcg/analysis.hpp"
#include "hcg/arch.hpp"
#include "hcg/gradcheck.hpp"
#include "hcg/graph_exec.hpp"
#include "hcg/smg.hpp"

namespace hcg {

// ---------------------------------------------------------------------------
// Invariant suite: structural and numerical properties every built model must
// satisfy, measured on an actual forward pass. Failures are reported, not
// thrown, so a single run surfaces everything at once.
// ---------------------------------------------------------------------------

struct InvariantCheck {
  std::string name;
  bool pass = false;
  double residual = 0.0;  // worst measured violation, 0 when clean
  std::string detail;
};

struct InvariantReport {
  std::vector<InvariantCheck> checks;
  bool all_pass() const {
    for (const InvariantCheck& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

/// Scores a captured forward pass against the gate and bookkeeping
/// invariants. Split from `run_invariant_suite` so tests can corrupt the
/// captures and prove the checks actually fire.
inline InvariantReport evaluate_invariants(const ModelGraph& g,
                                           const ExecResult<double>& res,
                                           const std::vector<Shape>& inferred) {
  check(res.node_shapes.size() == g.nodes.size() &&
            inferred.size() == g.nodes.size(),
        "evaluate_invariants: results do not match the graph");
  InvariantReport rep;

  {  // spatial attention maps integrate to one
    double worst = 0.0;
    std::int64_t maps = 0;
    for (const GateCapture<double>& gc : res.gates) {
      if (gc.kind != NodeKind::Softmax || gc.axis != SoftmaxAxis::Spatial) continue;
      const Tensor<double>& y = gc.value;
      const std::int64_t plane = y.h() * y.w();
      for (std::int64_t nc = 0; nc < y.n() * y.c(); ++nc, ++maps) {
        double sum = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) sum += y.data()[nc * plane + i];
        worst = std::max(worst, std::abs(sum - 1.0));
      }
    }
    rep.checks.push_back({"softmax-normalization", worst <= 1e-12, worst,
                          std::to_string(maps) + " attention maps"});
  }

  {  // the two update-gate branch weights sum to one per channel
    double worst = 0.0;
    std::int64_t pairs = 0;
    for (const GateCapture<double>& gc : res.gates) {
      if (gc.kind != NodeKind::Softmax || gc.axis != SoftmaxAxis::Branch) continue;
      const Tensor<double>& y = gc.value;
      const std::int64_t Cb = y.c() / 2, plane = y.h() * y.w();
      for (std::int64_t n = 0; n < y.n(); ++n)
        for (std::int64_t c = 0; c < Cb; ++c)
          for (std::int64_t i = 0; i < plane; ++i, ++pairs) {
            const double a = y.data()[(n * y.c() + c) * plane + i];
            const double b = y.data()[(n * y.c() + c + Cb) * plane + i];
            worst = std::max(worst, std::abs(a + b - 1.0));
          }
    }
    rep.checks.push_back({"branch-sum-to-one", worst <= 1e-12, worst,
                          std::to_string(pairs) + " branch pairs"});
  }

  {  // forget weights stay strictly inside (0,1)
    double lo = 1.0, hi = 0.0;
    std::int64_t vals = 0;
    for (const GateCapture<double>& gc : res.gates) {
      if (gc.kind != NodeKind::Sigmoid) continue;
      for (std::int64_t i = 0; i < gc.value.numel(); ++i, ++vals) {
        lo = std::min(lo, gc.value[i]);
        hi = std::max(hi, gc.value[i]);
      }
    }
    const bool pass = vals == 0 || (lo > 0.0 && hi < 1.0);
    const double residual = std::max({0.0, -lo, hi - 1.0});
    rep.checks.push_back({"forget-range", pass, residual,
                          std::to_string(vals) + " forget weights"});
  }

  {  // dense-connectivity channel arithmetic holds at every module boundary
    std::int64_t bad = 0;
    std::string first;
    for (const ModuleInfo& m : g.modules) {
      const Shape in = res.node_shapes[static_cast<std::size_t>(m.in_node)];
      const Shape out = res.node_shapes[static_cast<std::size_t>(m.out_node)];
      if (in.c != m.expected_in || out.c != m.expected_out) {
        ++bad;
        if (first.empty()) first = m.path;
      }
    }
    rep.checks.push_back({"channel-bookkeeping", bad == 0,
                          static_cast<double>(bad),
                          bad == 0 ? std::to_string(g.modules.size()) + " modules"
                                   : "first mismatch at " + first});
  }

  {  // every executed shape equals the statically inferred one
    std::int64_t bad = 0;
    std::string first;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      if (!(res.node_shapes[i] == inferred[i])) {
        ++bad;
        if (first.empty()) first = g.nodes[i].label;
      }
    }
    rep.checks.push_back({"shape-ladder", bad == 0, static_cast<double>(bad),
                          bad == 0 ? std::to_string(g.nodes.size()) + " nodes"
                                   : "first mismatch at " + first});
  }

  return rep;
}

/// Instantiates the model with seeded parameters, runs one seeded batch with
/// gate capture, and evaluates the invariant suite on the result.
inline InvariantReport run_invariant_suite(const ModelGraph& g, std::uint64_t seed) {
  g.validate();
  ParamStore<double> store = instantiate<double>(g, seed);
  Tensor<double> x(1, g.input.c, g.input.h, g.input.w);
  Rng rng(mix_seed(seed, 0xda7aull));
  fill_normal(x, 1.0, rng);
  ExecOptions<double> opts;
  opts.capture_gates = true;
  const ExecResult<double> res = forward(g, store, x, opts);
  return evaluate_invariants(g, res, infer_shapes(g));
}

// ---------------------------------------------------------------------------
// Gradient-check battery: one finite-difference scenario per op kind that
// appears in the built models, plus one full gated module. Double precision
// only — the check types are built on double tensors by construction.
// ---------------------------------------------------------------------------

struct BatteryCase {
  GradCheckCase check;
  std::vector<NodeKind> covers;  // node kinds this scenario exercises
};

namespace detail {

/// Projects a tensor to a scalar against a fixed seeded direction; rebuilt
/// from the seed on every call so the closure stays pure.
inline Tensor<double> score(const Tensor<double>& y, std::uint64_t salt,
                            GradTape<double>* t) {
  return sum_all(mul(y, random_normal<double>(y.shape(), salt), t), t);
}

inline BatteryCase smg_battery_case() {
  const SMGConfig cfg{16, 8, 4.0, 4, 1, 2, 2};
  BatteryCase bc;
  bc.check.name = "smg-module";
  Rng rng(10);
  auto proto = make_smg_params<double>(cfg, rng);
  auto input = random_normal<double>({2, 16, 6, 6}, 202);
  // Calibrate the norm layers' running statistics with one train-mode pass
  // (momentum 1 copies the batch statistics), then check in inference mode.
  // Arbitrary running stats leave channels dead or units saturated, whose
  // true gradients drown in finite-difference cancellation noise.
  for_each_bn<double>(proto, [](BNState<double>& st) { st.momentum = 1.0; });
  smg_forward(input, proto, RunMode::Train);
  for_each_bn<double>(proto, [](BNState<double>& st) { st.momentum = 0.1; });

  bc.check.leaves.push_back(input);
  for_each_param<double>(proto, "m", [&](const std::string&, Tensor<double>& t) {
    bc.check.leaves.push_back(t);
  });
  std::vector<Tensor<double>> rms, rvs;
  for_each_bn<double>(proto, [&](BNState<double>& st) {
    rms.push_back(st.running_mean);
    rvs.push_back(st.running_var);
  });
  bc.check.forward = [cfg, rms, rvs](std::vector<Tensor<double>>& L,
                                     GradTape<double>* t) {
    Rng dummy(0);
    auto p = make_smg_params<double>(cfg, dummy);
    std::size_t k = 1;
    for_each_param<double>(p, "m", [&](const std::string&, Tensor<double>& dst) {
      dst = L[k++];
    });
    std::size_t j = 0;
    for_each_bn<double>(p, [&](BNState<double>& st) {
      st.running_mean = rms[j];
      st.running_var = rvs[j];
      ++j;
    });
    auto o = smg_forward(L[0], p, RunMode::Inference, t);
    return score(o.out, 203, t);
  };
  return bc;
}

}  // namespace detail

inline std::vector<BatteryCase> gradcheck_battery() {
  std::vector<BatteryCase> bat;
  auto push = [&](const std::string& name, std::vector<Tensor<double>> leaves,
                 std::function<Tensor<double>(std::vector<Tensor<double>>&,
                                              GradTape<double>*)>
                     fwd,
                 std::vector<NodeKind> covers) {
    BatteryCase bc;
    bc.check.name = name;
    bc.check.leaves = std::move(leaves);
    bc.check.forward = std::move(fwd);
    bc.covers = std::move(covers);
    bat.push_back(std::move(bc));
  };

  {  // plain 3x3, the stem configuration; input leaf stands in for Input feeds
    const ConvSpec sp = ConvSpec::k3x3(3, 4);
    push("conv3x3",
        {random_normal<double>({2, 3, 5, 5}, 301),
         random_normal<double>(sp.weight_shape(), 302)},
        [sp](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(conv2d(L[0], L[1], sp, t), 303, t);
        },
        {NodeKind::Input, NodeKind::Conv});
  }
  {  // 1x1 squeeze configuration
    const ConvSpec sp = ConvSpec::k1x1(4, 2);
    push("conv1x1",
        {random_normal<double>({2, 4, 3, 3}, 304),
         random_normal<double>(sp.weight_shape(), 305)},
        [sp](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(conv2d(L[0], L[1], sp, t), 306, t);
        },
        {NodeKind::Conv});
  }
  {  // grouped + strided, the transition configuration
    const ConvSpec sp = ConvSpec::k3x3(4, 6, 2, 2);
    push("conv-grouped-strided",
        {random_normal<double>({1, 4, 6, 6}, 307),
         random_normal<double>(sp.weight_shape(), 308)},
        [sp](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(conv2d(L[0], L[1], sp, t), 309, t);
        },
        {NodeKind::Conv});
  }
  {  // depthwise dilated, the wide excitation branch
    const ConvSpec sp = ConvSpec::k3x3(4, 4, 1, 4, 2);
    push("conv-depthwise-dilated",
        {random_normal<double>({1, 4, 6, 6}, 310),
         random_normal<double>(sp.weight_shape(), 311)},
        [sp](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(conv2d(L[0], L[1], sp, t), 312, t);
        },
        {NodeKind::Conv});
  }
  {  // grouped and dilated together
    const ConvSpec sp = ConvSpec::k3x3(4, 4, 1, 2, 2);
    push("conv-grouped-dilated",
        {random_normal<double>({1, 4, 6, 6}, 355),
         random_normal<double>(sp.weight_shape(), 356)},
        [sp](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(conv2d(L[0], L[1], sp, t), 357, t);
        },
        {NodeKind::Conv});
  }
  {  // bias-carrying convolution
    ConvSpec sp = ConvSpec::k1x1(3, 2);
    sp.bias_enabled = true;
    push("conv-bias",
        {random_normal<double>({1, 3, 4, 4}, 313),
         random_normal<double>(sp.weight_shape(), 314),
         random_normal<double>({1, 2, 1, 1}, 315)},
        [sp](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(conv2d(L[0], L[1], &L[2], sp, ConvAlgo::Auto, t),
                               316, t);
        },
        {NodeKind::Conv});
  }

  push("batchnorm-train",
      {random_normal<double>({3, 4, 3, 3}, 317), random_normal<double>({1, 4, 1, 1}, 318),
       random_normal<double>({1, 4, 1, 1}, 319)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        BNState<double> st = BNState<double>::init(4);
        st.gamma = L[1];
        st.beta = L[2];
        return detail::score(batch_norm(L[0], st, RunMode::Train, t), 320, t);
      },
      {NodeKind::BatchNorm});
  {
    const Tensor<double> rm = random_normal<double>({1, 4, 1, 1}, 321);
    Tensor<double> rv(1, 4, 1, 1);
    fill_uniform(rv, 322, 0.5, 1.5);
    push("batchnorm-inference",
        {random_normal<double>({3, 4, 3, 3}, 323),
         random_normal<double>({1, 4, 1, 1}, 324),
         random_normal<double>({1, 4, 1, 1}, 325)},
        [rm, rv](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          BNState<double> st = BNState<double>::init(4);
          st.gamma = L[1];
          st.beta = L[2];
          st.running_mean = rm;
          st.running_var = rv;
          return detail::score(batch_norm(L[0], st, RunMode::Inference, t), 326, t);
        },
        {NodeKind::BatchNorm});
  }

  {
    Tensor<double> x = random_normal<double>({2, 4, 3, 3}, 327);
    for (std::int64_t i = 0; i < x.numel(); ++i)
      x[i] += x[i] >= 0 ? 0.25 : -0.25;  // clear of the kink
    push("relu", {x},
        [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(relu(L[0], t), 328, t);
        },
        {NodeKind::Relu});
  }
  push("tanh", {random_normal<double>({2, 4, 3, 3}, 329)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(tanh_act(L[0], t), 330, t);
      },
      {NodeKind::Tanh});
  push("sigmoid", {random_normal<double>({2, 4, 3, 3}, 331)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(sigmoid(L[0], t), 332, t);
      },
      {NodeKind::Sigmoid});

  const std::pair<SoftmaxAxis, const char*> axes[] = {
      {SoftmaxAxis::Spatial, "softmax-spatial"},
      {SoftmaxAxis::Branch, "softmax-branch"},
      {SoftmaxAxis::Channel, "softmax-channel"},
  };
  for (const auto& [axis, name] : axes)
    push(name, {random_normal<double>({2, 4, 3, 3}, 333)},
        [axis](std::vector<Tensor<double>>& L, GradTape<double>* t) {
          return detail::score(softmax_over(L[0], axis, t), 334, t);
        },
        {NodeKind::Softmax});

  push("maxpool3x3s2p1", {random_normal<double>({2, 3, 7, 7}, 335)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(max_pool(L[0], 3, 2, 1, t), 336, t);
      },
      {NodeKind::MaxPool});
  push("global-avg-pool", {random_normal<double>({2, 5, 3, 3}, 337)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(global_avg_pool(L[0], t), 338, t);
      },
      {NodeKind::GlobalAvgPool});
  push("spatial-sum", {random_normal<double>({2, 5, 3, 3}, 339)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(spatial_sum(L[0], t), 340, t);
      },
      {NodeKind::SpatialSum});

  push("concat-slice",
      {random_normal<double>({2, 3, 4, 4}, 341), random_normal<double>({2, 4, 4, 4}, 342)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(slice_channels(concat_channels(L[0], L[1], t), 1, 5, t),
                             343, t);
      },
      {NodeKind::Concat, NodeKind::Slice});

  push("add-mul-broadcast",
      {random_normal<double>({2, 4, 3, 3}, 344), random_normal<double>({1, 4, 1, 1}, 345),
       random_normal<double>({2, 1, 1, 1}, 346)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(mul(add(L[0], L[1], t), L[2], t), 347, t);
      },
      {NodeKind::Add, NodeKind::Mul, NodeKind::BiasAdd});

  push("fully-connected",
      {random_normal<double>({3, 6, 1, 1}, 348), random_normal<double>({4, 6, 1, 1}, 349),
       random_normal<double>({1, 4, 1, 1}, 350)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return detail::score(fully_connected(L[0], L[1], &L[2], t), 351, t);
      },
      {NodeKind::FullyConnected});

  push("dropout-train", {random_normal<double>({2, 4, 4, 4}, 352)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        Rng rng(777);  // rebuilt every call: the mask must be reproducible
        return detail::score(dropout(L[0], 0.3, RunMode::Train, rng, t), 353, t);
      },
      {NodeKind::Dropout});

  push("cross-entropy", {random_normal<double>({4, 5, 1, 1}, 354)},
      [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
        return cross_entropy(L[0], {0, 2, 4, 1}, t);
      },
      {});

  bat.push_back(detail::smg_battery_case());
  return bat;
}

/// Node kinds appearing in `g` that no battery case claims to exercise.
inline std::vector<NodeKind> battery_uncovered_kinds(
    const std::vector<BatteryCase>& bat, const ModelGraph& g) {
  std::set<int> covered;
  for (const BatteryCase& bc : bat)
    for (NodeKind k : bc.covers) covered.insert(static_cast<int>(k));
  std::set<int> missing;
  std::vector<NodeKind> out;
  for (const Node& n : g.nodes) {
    const int k = static_cast<int>(n.kind);
    if (!covered.count(k) && missing.insert(k).second) out.push_back(n.kind);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy overfit: full-batch SGD with momentum on seeded synthetic data. Proves
// the whole stack trains end to end; deliberately tiny and deterministic.
// ---------------------------------------------------------------------------

/// Two blocks of two modules, growth 8 then 16, 8x8 inputs, 10 classes.
/// Dropout off so reruns are governed by the seed alone.
inline MacroConfig tiny_overfit_config() {
  MacroConfig c;
  c.name = "tiny";
  c.stem = StemKind::Cifar;
  c.classes = 10;
  c.input = {1, 3, 8, 8};
  c.blocks = {{2, 8}, {2, 16}};
  c.dropout = 0.0;
  return c;
}

struct OverfitOptions {
  MacroConfig model = tiny_overfit_config();
  std::int64_t samples = 32;
  std::int64_t steps = 500;
  double lr = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct OverfitResult {
  std::vector<double> loss;      // cross-entropy before each update
  std::vector<double> accuracy;  // batch argmax accuracy at the same points
  double final_accuracy = 0.0;
  bool diverged = false;
  std::int64_t diverged_step = -1;
};

/// Share of argmax rows in a (N,K,1,1) logit tensor matching the labels.
inline double argmax_accuracy(const Tensor<double>& logits,
                              const std::vector<std::int64_t>& labels) {
  std::int64_t correct = 0;
  for (std::int64_t n = 0; n < logits.n(); ++n) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < logits.c(); ++c)
      if (logits(n, c, 0, 0) > logits(n, best, 0, 0)) best = c;
    if (best == labels[static_cast<std::size_t>(n)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.n());
}

/// Argmax accuracy of a fresh inference-mode forward pass.
inline double training_accuracy(const ModelGraph& g, ParamStore<double>& store,
                                const Tensor<double>& X,
                                const std::vector<std::int64_t>& labels) {
  return argmax_accuracy(forward(g, store, X).output, labels);
}

inline OverfitResult overfit_toy(const OverfitOptions& opt = {}) {
  const ModelGraph g = build_model(opt.model);
  ParamStore<double> store = instantiate<double>(g, mix_seed(opt.seed, 0x9a9aull));

  Tensor<double> X(opt.samples, g.input.c, g.input.h, g.input.w);
  Rng drng(mix_seed(opt.seed, 0xda7aull));
  fill_normal(X, 1.0, drng);
  std::vector<std::int64_t> labels(static_cast<std::size_t>(opt.samples));
  Rng lrng(mix_seed(opt.seed, 0x1abe1ull));
  for (auto& l : labels) l = lrng.uniform_int(0, g.num_classes - 1);

  std::unordered_map<std::string, Tensor<double>> velocity;
  store.for_each_trainable([&](const std::string& name, Tensor<double>& t) {
    velocity.emplace(name, Tensor<double>(t.shape()));
  });

  OverfitResult res;
  for (std::int64_t step = 0; step < opt.steps; ++step) {
    GradTape<double> tape;
    register_leaves(store, tape);
    ExecOptions<double> eo;
    eo.mode = RunMode::Train;
    eo.tape = &tape;
    eo.dropout_seed = mix_seed(opt.seed, static_cast<std::uint64_t>(step));
    const ExecResult<double> out = forward(g, store, X, eo);
    const Tensor<double> loss = cross_entropy(out.output, labels, &tape);
    res.loss.push_back(loss[0]);
    res.accuracy.push_back(argmax_accuracy(out.output, labels));
    if (!std::isfinite(loss[0])) {
      res.diverged = true;
      res.diverged_step = step;
      return res;
    }
    const auto grads = tape.backward(loss.grad_id);
    store.for_each_trainable([&](const std::string& name, Tensor<double>& t) {
      const Tensor<double>& gr = grads.at(t.grad_id);
      Tensor<double>& v = velocity.at(name);
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        v[i] = opt.momentum * v[i] + gr[i];
        t[i] -= opt.lr * v[i];
      }
      t.grad_id = kNoGrad;
    });
  }
  res.final_accuracy = training_accuracy(g, store, X, labels);
  return res;
}

/// Trailing moving average (window shrinks at the start).
inline std::vector<double> moving_average(const std::vector<double>& x,
                                          std::int64_t window) {
  check(window >= 1, "moving_average: window must be positive");
  std::vector<double> out(x.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    acc += x[i];
    if (i >= static_cast<std::size_t>(window)) acc -= x[i - static_cast<std::size_t>(window)];
    const auto n = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    out[i] = acc / static_cast<double>(n);
  }
  return out;
}

inline bool non_increasing(const std::vector<double>& x, double slack = 0.0) {
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[i - 1] + slack) return false;
  return true;
}

}  // namespace hcg
