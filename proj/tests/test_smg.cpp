#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "hcg/gradcheck.hpp"
#include "hcg/smg.hpp"
#include "oracles.hpp"

using namespace hcg;
using oracle::exactly_equal;
using oracle::max_abs_diff;

namespace {

void seed_all_running_stats(SMGParams<double>& p, std::uint64_t seed) {
  std::uint64_t k = 0;
  for_each_bn<double>(p, [&](BNState<double>& st) {
    fill_normal(st.running_mean, mix_seed(seed, k++));
    fill_uniform(st.running_var, mix_seed(seed, k++), 0.5, 1.5);
  });
}

std::int64_t count_params(SMGParams<double>& p, const std::string& within = "") {
  std::int64_t total = 0;
  for_each_param<double>(p, "m", [&](const std::string& name, Tensor<double>& t) {
    if (within.empty() || name.find(within) != std::string::npos) total += t.numel();
  });
  return total;
}

}  // namespace

TEST_CASE("config validation rejects impossible group layouts") {
  SMGConfig ok{16, 8, 4.0, 4, 1, 2, 2};
  CHECK_NOTHROW(ok.validate());
  SMGConfig narrow = ok;
  narrow.out_channels = 3;  // fewer channels than groups
  CHECK_THROWS_AS(narrow.validate(), std::invalid_argument);
  SMGConfig odd = ok;
  odd.out_channels = 6;  // mid = 24 divides by 4, but 6 does not
  CHECK_THROWS_AS(odd.validate(), std::invalid_argument);
  SMGConfig midbad{16, 4, 1.5, 4, 1, 2, 2};  // mid = 6, not divisible by 4
  CHECK_THROWS_AS(midbad.validate(), std::invalid_argument);
  SMGConfig stride3 = ok;
  stride3.stride = 3;
  CHECK_THROWS_AS(stride3.validate(), std::invalid_argument);
}

TEST_CASE("squeeze cell widths and parameter counts at the reference size") {
  // 96 -> (alpha=4, out=32) -> mid 128, grouped 3x3 with g=4
  SMGConfig cfg{96, 32, 4.0, 4, 1, 2, 2};
  CHECK(cfg.mid_channels() == 128);
  Rng rng(1);
  auto p = make_smg_params<double>(cfg, rng);
  CHECK(p.conv1.numel() + p.conv2.numel() == 21504);
  CHECK(count_params(p, ".squeeze.bn") == 448);
  auto x = random_normal<double>({1, 96, 8, 8}, 2);
  auto xp = squeeze_cell(x, p, RunMode::Inference);
  CHECK(xp.shape() == Shape{1, 32, 8, 8});
}

TEST_CASE("transition-style module halves channels and spatial size") {
  SMGConfig cfg{160, 80, 1.5, 1, 2, 4, 4};
  CHECK(cfg.mid_channels() == 120);
  Rng rng(3);
  auto p = make_smg_params<double>(cfg, rng);
  seed_all_running_stats(p, 31);
  auto x = random_normal<double>({1, 160, 56, 56}, 4);
  auto out = smg_forward(x, p, RunMode::Inference);
  CHECK(out.xprime.shape() == Shape{1, 80, 28, 28});
  CHECK(out.out.shape() == Shape{1, 80, 28, 28});
  CHECK(out.f.shape() == Shape{1, 80, 1, 1});
  CHECK(out.u.v.shape() == Shape{1, 80, 1, 1});
}

TEST_CASE("excitation branches preserve spatial dims and gate outputs are well formed") {
  SMGConfig cfg{16, 8, 4.0, 4, 1, 2, 2};
  Rng rng(5);
  auto p = make_smg_params<double>(cfg, rng);
  seed_all_running_stats(p, 51);
  auto x = random_normal<double>({2, 16, 6, 6}, 6);
  auto o = smg_forward(x, p, RunMode::Inference);
  CHECK(o.out.shape() == Shape{2, 8, 6, 6});
  for (std::int64_t i = 0; i < o.f.numel(); ++i) {
    CHECK(o.f[i] > 0.0);
    CHECK(o.f[i] < 1.0);
    CHECK(std::abs(o.u.u33[i] + o.u.u55[i] - 1.0) <= 1e-12);
  }
  // fusion is literally f * xprime + v, broadcast over space
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 8; ++c)
      for (std::int64_t h = 0; h < 6; ++h)
        for (std::int64_t w = 0; w < 6; ++w) {
          const double want =
              o.f(n, c, 0, 0) * o.xprime(n, c, h, w) + o.u.v(n, c, 0, 0);
          CHECK(std::abs(o.out(n, c, h, w) - want) <= 1e-15);
        }
}

TEST_CASE("module construction is seed-deterministic") {
  SMGConfig cfg{16, 8, 4.0, 4, 1, 2, 2};
  Rng a(77), b(77), c(78);
  auto pa = make_smg_params<double>(cfg, a);
  auto pb = make_smg_params<double>(cfg, b);
  auto pc = make_smg_params<double>(cfg, c);
  CHECK(exactly_equal(pa.conv2, pb.conv2));
  CHECK(exactly_equal(pa.update.W, pb.update.W));
  CHECK_FALSE(exactly_equal(pa.conv2, pc.conv2));
}

TEST_CASE("parameter names follow the dotted scheme") {
  SMGConfig cfg{16, 8, 4.0, 4, 1, 2, 2};
  Rng rng(9);
  auto p = make_smg_params<double>(cfg, rng);
  std::map<std::string, Shape> seen;
  for_each_param<double>(p, "block0.module1",
                         [&](const std::string& n, Tensor<double>& t) {
                           CHECK(seen.count(n) == 0);
                           seen[n] = t.shape();
                         });
  CHECK(seen.at("block0.module1.squeeze.conv1") == Shape{32, 16, 1, 1});
  CHECK(seen.at("block0.module1.squeeze.conv2") == Shape{8, 8, 3, 3});
  CHECK(seen.at("block0.module1.excite.conv55") == Shape{8, 1, 3, 3});
  CHECK(seen.at("block0.module1.update.W") == Shape{8, 16, 1, 1});
  CHECK(seen.at("block0.module1.update.b55") == Shape{1, 8, 1, 1});
  CHECK(seen.at("block0.module1.forget.W1") == Shape{4, 8, 1, 1});
  CHECK(seen.at("block0.module1.forget.bn.gamma") == Shape{1, 4, 1, 1});
}

TEST_CASE("gradcheck: a full module, every parameter plus the input") {
  SMGConfig cfg{16, 8, 4.0, 4, 1, 2, 2};
  GradCheckCase cse;
  cse.name = "smg-module";
  Rng rng(10);
  auto proto = make_smg_params<double>(cfg, rng);
  auto input = random_normal<double>({2, 16, 6, 6}, 102);
  // Calibrate running statistics with one train-mode pass (momentum 1 copies
  // the batch stats). Arbitrary running stats leave channels dead or units
  // saturated, whose true gradients sit below finite-difference noise.
  for_each_bn<double>(proto, [](BNState<double>& st) { st.momentum = 1.0; });
  smg_forward(input, proto, RunMode::Train);
  for_each_bn<double>(proto, [](BNState<double>& st) { st.momentum = 0.1; });
  cse.leaves.push_back(input);
  for_each_param<double>(proto, "m", [&](const std::string&, Tensor<double>& t) {
    cse.leaves.push_back(t);
  });
  std::vector<Tensor<double>> rms, rvs;
  for_each_bn<double>(proto, [&](BNState<double>& st) {
    rms.push_back(st.running_mean);
    rvs.push_back(st.running_var);
  });
  auto r = random_normal<double>({2, 8, 6, 6}, 103);
  cse.forward = [cfg, rms, rvs, r](std::vector<Tensor<double>>& L,
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
    return sum_all(mul(o.out, r, t), t);
  };
  auto res = run_gradcheck(cse);
  INFO("smg worst: " << res.worst << " max_rel_err=" << res.max_rel_err);
  CHECK(res.pass);
  CHECK(res.coords_checked > 500);
}
