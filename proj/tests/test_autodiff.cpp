#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hcg/conv.hpp"
#include "hcg/gradcheck.hpp"
#include "hcg/norm.hpp"
#include "hcg/ops.hpp"
#include "oracles.hpp"

using namespace hcg;

namespace {

// Scalar loss <y, R> with a fixed random weighting R, so that every output
// coordinate contributes a distinct gradient signal.
Tensor<double> dot_loss(const Tensor<double>& y, const Tensor<double>& r,
                        GradTape<double>* tape) {
  return sum_all(mul(y, r, tape), tape);
}

void expect_pass(GradCheckCase& cse) {
  GradCheckResult res = run_gradcheck(cse);
  INFO(cse.name << ": max_rel_err=" << res.max_rel_err << " worst=" << res.worst);
  CHECK(res.pass);
  CHECK(res.coords_checked > 0);
}

}  // namespace

TEST_CASE("tape basics: accumulation, unreachable leaves, seed validation") {
  GradTape<double> tape;
  auto x = random_normal<double>({1, 1, 2, 2}, 1);
  auto unused = random_normal<double>({1, 1, 1, 3}, 2);
  tape.leaf(x);
  tape.leaf(unused);
  auto y = add(x, x, &tape);
  auto loss = sum_all(y, &tape);
  auto grads = tape.backward(loss.grad_id);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(grads.at(x.grad_id)[i] == 2.0);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(grads.at(unused.grad_id)[i] == 0.0);

  GradTape<double> t2;
  auto a = random_normal<double>({1, 1, 2, 2}, 3);
  t2.leaf(a);
  auto b = relu(a, &t2);
  CHECK_THROWS_AS(t2.backward(b.grad_id), std::invalid_argument);  // non-scalar seed
  CHECK_THROWS_AS(t2.backward(9999), std::invalid_argument);
}

TEST_CASE("identical tapes give identical gradients") {
  auto run = [] {
    GradTape<double> tape;
    auto x = random_normal<double>({2, 3, 5, 5}, 42);
    auto w = random_normal<double>({4, 3, 3, 3}, 43);
    tape.leaf(x);
    tape.leaf(w);
    ConvSpec sp{3, 4, 3, 3, 1, 1, 1, 1, false};
    auto y = conv2d(x, w, nullptr, sp, ConvAlgo::Im2col, &tape);
    auto r = random_normal<double>(y.shape(), 44);
    auto loss = dot_loss(y, r, &tape);
    auto grads = tape.backward(loss.grad_id);
    return std::make_pair(grads.at(x.grad_id), grads.at(w.grad_id));
  };
  auto [dx1, dw1] = run();
  auto [dx2, dw2] = run();
  CHECK(oracle::exactly_equal(dx1, dx2));
  CHECK(oracle::exactly_equal(dw1, dw2));
}

TEST_CASE("gradcheck: convolution variants") {
  auto conv_case = [](const std::string& name, ConvSpec sp, std::int64_t h,
                      std::int64_t w, ConvAlgo algo, bool bias,
                      std::uint64_t seed) {
    GradCheckCase cse;
    cse.name = name;
    cse.leaves.push_back(random_normal<double>({2, sp.in_channels, h, w}, seed));
    cse.leaves.push_back(random_normal<double>(sp.weight_shape(), seed + 1));
    if (bias)
      cse.leaves.push_back(random_normal<double>({1, sp.out_channels, 1, 1}, seed + 2));
    const Shape os{2, sp.out_channels, sp.out_dim(h), sp.out_dim_w(w)};
    auto r = random_normal<double>(os, seed + 3);
    cse.forward = [sp, algo, bias, r](std::vector<Tensor<double>>& L,
                                      GradTape<double>* t) {
      auto y = conv2d(L[0], L[1], bias ? &L[2] : nullptr, sp, algo, t);
      return dot_loss(y, r, t);
    };
    return cse;
  };

  auto cases = std::vector<GradCheckCase>{
      conv_case("conv3x3-direct", {3, 4, 3, 3, 1, 1, 1, 1, false}, 6, 6,
                ConvAlgo::Direct, false, 10),
      conv_case("conv3x3-gemm", {3, 4, 3, 3, 1, 1, 1, 1, false}, 6, 6,
                ConvAlgo::Im2col, false, 20),
      conv_case("conv1x1", ConvSpec::k1x1(5, 3), 4, 4, ConvAlgo::Im2col, false, 30),
      conv_case("conv-stride2-groups2", {4, 6, 3, 3, 2, 1, 1, 2, false}, 7, 7,
                ConvAlgo::Im2col, false, 40),
      conv_case("conv-dilation2-groups2", {4, 4, 3, 3, 1, 2, 2, 2, false}, 8, 8,
                ConvAlgo::Im2col, false, 50),
      conv_case("conv-depthwise", {4, 4, 3, 3, 1, 1, 1, 4, false}, 6, 6,
                ConvAlgo::Auto, false, 60),
      conv_case("conv-bias", {3, 4, 3, 3, 1, 1, 1, 1, true}, 5, 5, ConvAlgo::Auto,
                true, 70),
  };
  for (auto& cse : cases) expect_pass(cse);
}

TEST_CASE("gradcheck: batch norm in both modes") {
  const std::int64_t C = 3;
  auto r = random_normal<double>({2, C, 4, 4}, 80);

  GradCheckCase train;
  train.name = "batchnorm-train";
  train.leaves.push_back(random_normal<double>({2, C, 4, 4}, 81));
  train.leaves.push_back(random_normal<double>({1, C, 1, 1}, 82));
  train.leaves.push_back(random_normal<double>({1, C, 1, 1}, 83));
  train.forward = [C, r](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    auto st = BNState<double>::init(C);  // fresh running stats: keep the closure pure
    st.gamma = L[1];
    st.beta = L[2];
    auto y = batch_norm(L[0], st, RunMode::Train, t);
    return dot_loss(y, r, t);
  };
  expect_pass(train);

  GradCheckCase inf;
  inf.name = "batchnorm-inference";
  inf.leaves = train.leaves;
  auto rm = random_normal<double>({1, C, 1, 1}, 84);
  Tensor<double> rv(1, C, 1, 1);
  fill_uniform(rv, 85, 0.5, 1.5);
  inf.forward = [C, r, rm, rv](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    auto st = BNState<double>::init(C);
    st.gamma = L[1];
    st.beta = L[2];
    st.running_mean = rm;
    st.running_var = rv;
    auto y = batch_norm(L[0], st, RunMode::Inference, t);
    return dot_loss(y, r, t);
  };
  expect_pass(inf);
}

TEST_CASE("gradcheck: activations and softmaxes") {
  auto r = random_normal<double>({2, 4, 3, 3}, 90);

  GradCheckCase rl;
  rl.name = "relu";
  rl.leaves.push_back(random_normal<double>({2, 4, 3, 3}, 91));
  // keep inputs away from the kink at zero so central differences are valid
  for (std::int64_t i = 0; i < rl.leaves[0].numel(); ++i)
    rl.leaves[0][i] += rl.leaves[0][i] >= 0 ? 0.25 : -0.25;
  rl.forward = [r](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(relu(L[0], t), r, t);
  };
  expect_pass(rl);

  for (int which = 0; which < 2; ++which) {
    GradCheckCase cse;
    cse.name = which == 0 ? "tanh" : "sigmoid";
    cse.leaves.push_back(random_normal<double>({2, 4, 3, 3}, 92 + which));
    cse.forward = [r, which](std::vector<Tensor<double>>& L, GradTape<double>* t) {
      auto y = which == 0 ? tanh_act(L[0], t) : sigmoid(L[0], t);
      return dot_loss(y, r, t);
    };
    expect_pass(cse);
  }

  GradCheckCase sp;
  sp.name = "softmax-spatial";
  sp.leaves.push_back(random_normal<double>({2, 4, 3, 3}, 94));
  sp.forward = [r](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(softmax_over(L[0], SoftmaxAxis::Spatial, t), r, t);
  };
  expect_pass(sp);

  GradCheckCase br;
  br.name = "softmax-branch";
  br.leaves.push_back(random_normal<double>({2, 4, 3, 3}, 95));
  br.forward = [r](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(softmax_over(L[0], SoftmaxAxis::Branch, t), r, t);
  };
  expect_pass(br);

  GradCheckCase ch;
  ch.name = "softmax-channel";
  ch.leaves.push_back(random_normal<double>({2, 4, 3, 3}, 96));
  ch.forward = [r](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(softmax_over(L[0], SoftmaxAxis::Channel, t), r, t);
  };
  expect_pass(ch);
}

TEST_CASE("gradcheck: pooling, reshaping, arithmetic") {
  GradCheckCase mp;
  mp.name = "maxpool3x3s2p1";
  mp.leaves.push_back(random_normal<double>({2, 3, 7, 7}, 100));
  auto rp = random_normal<double>({2, 3, 4, 4}, 101);
  mp.forward = [rp](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(max_pool(L[0], 3, 2, 1, t), rp, t);
  };
  expect_pass(mp);

  GradCheckCase gap;
  gap.name = "global-avg-pool";
  gap.leaves.push_back(random_normal<double>({2, 5, 4, 4}, 102));
  auto rg = random_normal<double>({2, 5, 1, 1}, 103);
  gap.forward = [rg](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(global_avg_pool(L[0], t), rg, t);
  };
  expect_pass(gap);

  GradCheckCase ss;
  ss.name = "spatial-sum";
  ss.leaves.push_back(random_normal<double>({2, 5, 4, 4}, 104));
  ss.forward = [rg](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(spatial_sum(L[0], t), rg, t);
  };
  expect_pass(ss);

  GradCheckCase cc;
  cc.name = "concat-slice";
  cc.leaves.push_back(random_normal<double>({2, 3, 4, 4}, 105));
  cc.leaves.push_back(random_normal<double>({2, 2, 4, 4}, 106));
  cc.leaves.push_back(random_normal<double>({2, 4, 4, 4}, 107));
  auto rc = random_normal<double>({2, 5, 4, 4}, 108);
  cc.forward = [rc](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    auto y = concat_channels<double>({&L[0], &L[1], &L[2]}, t);
    return dot_loss(slice_channels(y, 2, 7, t), rc, t);
  };
  expect_pass(cc);

  GradCheckCase bc;
  bc.name = "broadcast-add-mul";
  bc.leaves.push_back(random_normal<double>({2, 3, 4, 4}, 109));
  bc.leaves.push_back(random_normal<double>({1, 3, 1, 1}, 110));
  bc.leaves.push_back(random_normal<double>({2, 3, 1, 1}, 111));
  auto rb = random_normal<double>({2, 3, 4, 4}, 112);
  bc.forward = [rb](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(add(mul(L[0], L[2], t), L[1], t), rb, t);
  };
  expect_pass(bc);
}

TEST_CASE("gradcheck: dense head ops") {
  GradCheckCase fc;
  fc.name = "fully-connected";
  fc.leaves.push_back(random_normal<double>({3, 7, 1, 1}, 120));
  fc.leaves.push_back(random_normal<double>({4, 7, 1, 1}, 121));
  fc.leaves.push_back(random_normal<double>({1, 4, 1, 1}, 122));
  auto rf = random_normal<double>({3, 4, 1, 1}, 123);
  fc.forward = [rf](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return dot_loss(fully_connected(L[0], L[1], &L[2], t), rf, t);
  };
  expect_pass(fc);

  GradCheckCase ce;
  ce.name = "cross-entropy";
  ce.leaves.push_back(random_normal<double>({4, 6, 1, 1}, 124));
  ce.forward = [](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    return cross_entropy(L[0], {1, 0, 5, 3}, t);
  };
  expect_pass(ce);

  GradCheckCase dr;
  dr.name = "dropout-train";
  dr.leaves.push_back(random_normal<double>({2, 3, 5, 5}, 125));
  auto rd = random_normal<double>({2, 3, 5, 5}, 126);
  dr.forward = [rd](std::vector<Tensor<double>>& L, GradTape<double>* t) {
    Rng rng(777);  // rebuilt every call: the mask must be identical across evals
    return dot_loss(dropout(L[0], 0.3, RunMode::Train, rng, t), rd, t);
  };
  expect_pass(dr);
}
