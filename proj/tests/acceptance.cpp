// Acceptance gate: one pass/fail line per criterion, nonzero exit if any
// fails. Tolerances are pinned here, not taken from flags.

#include <iomanip>
#include <iostream>
#include <sstream>

#include "hcg/analysis.hpp"
#include "hcg/arch.hpp"
#include "hcg/cli.hpp"
#include "hcg/gates.hpp"
#include "hcg/verify.hpp"
#include "oracles.hpp"

using namespace hcg;

namespace {

constexpr double kTolParams = 0.05;   // relative band around parameter budgets
constexpr double kTolMacs = 0.15;     // relative band around MAC budgets
constexpr double kGateTol = 1e-12;    // |u33 + u55 - 1| bound
constexpr double kConvTol = 1e-12;    // conv vs naive-oracle bound
constexpr double kGradTol = 1e-4;     // finite-difference relative error bound
constexpr double kMinAccuracy = 0.95; // memorization bar
constexpr std::int64_t kOverfitSteps = 500;

struct Criterion {
  std::string title;
  bool pass = false;
  std::string detail;
};

std::string pct(double frac) {
  std::ostringstream os;
  os << (frac >= 0 ? "+" : "") << std::fixed << std::setprecision(2)
     << frac * 100.0 << "%";
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

// -- 1 & 2: parameter and MAC budgets ---------------------------------------

void budget_criteria(Criterion& params_c, Criterion& macs_c) {
  params_c.title = "parameter counts within 5% of the reference budgets";
  macs_c.title = "MAC counts within 15% of the reference budgets";
  params_c.pass = macs_c.pass = true;

  std::string worst_p_name, worst_m_name;
  double worst_p = 0.0, worst_m = 0.0;
  std::string fails_p, fails_m;
  for (const std::string& name : preset_names()) {
    const Summary s = summarize(build_model(preset_by_name(name)));
    const TargetCheck tc = check_targets(s, kTolParams, kTolMacs);
    if (!tc.has_targets) {
      params_c.pass = macs_c.pass = false;
      fails_p += " " + name + ":no-targets";
      continue;
    }
    if (std::abs(tc.params_dev) > std::abs(worst_p)) {
      worst_p = tc.params_dev;
      worst_p_name = name;
    }
    if (std::abs(tc.macs_dev) > std::abs(worst_m)) {
      worst_m = tc.macs_dev;
      worst_m_name = name;
    }
    if (!tc.params_ok) {
      params_c.pass = false;
      fails_p += (fails_p.empty() ? "" : ", ") + name + " " + pct(tc.params_dev);
    }
    if (!tc.macs_ok) {
      macs_c.pass = false;
      fails_m += (fails_m.empty() ? "" : ", ") + name + " " + pct(tc.macs_dev);
    }
  }
  params_c.detail = params_c.pass ? "worst " + worst_p_name + " " + pct(worst_p)
                                  : fails_p + " outside the band";
  macs_c.detail = macs_c.pass ? "worst " + worst_m_name + " " + pct(worst_m)
                              : fails_m + " outside the band";
}

// -- 3: resolution ladder of preset b at 224 --------------------------------

Criterion ladder_criterion() {
  Criterion c{"preset b ladder 224-112-56-28-14-7, static and executed", false, ""};
  const ModelGraph g = build_model(preset_by_name("b"));
  const std::vector<std::int64_t> expected = {224, 112, 56, 28, 14, 7};

  const auto ladder_of = [&](const std::vector<Shape>& shapes) {
    std::vector<std::int64_t> seq{g.input.h};
    for (const StageInfo& st : g.stages) {
      if (st.name == "head") continue;  // pooled away, not part of the ladder
      const std::int64_t h = shapes[static_cast<std::size_t>(st.node)].h;
      if (seq.back() != h) seq.push_back(h);
    }
    return seq;
  };

  const std::vector<std::int64_t> inferred = ladder_of(infer_shapes(g));

  ParamStore<float> store = instantiate<float>(g, 0);
  Tensor<float> x(1, g.input.c, g.input.h, g.input.w);
  Rng rng(0xacce55);
  fill_normal(x, 1.0f, rng);
  const std::vector<std::int64_t> executed = ladder_of(forward(g, store, x).node_shapes);

  c.pass = inferred == expected && executed == expected;
  std::ostringstream os;
  for (std::size_t i = 0; i < inferred.size(); ++i)
    os << (i ? "-" : "") << inferred[i];
  c.detail = "static " + os.str() + (executed == inferred ? ", executed identical"
                                                          : ", executed DIFFERS");
  return c;
}

// -- 4: gate normalization over seeded random evaluations -------------------

Criterion gates_criterion() {
  Criterion c{"gate normalization over 1000 seeded evaluations", false, ""};
  double worst_u = 0.0, f_lo = 1.0, f_hi = 0.0;
  std::int64_t evals = 0;
  for (int i = 0; i < 500; ++i) {
    Rng rng(mix_seed(0x9a7e5u, static_cast<std::uint64_t>(i)));
    const std::int64_t C = rng.uniform_int(2, 24);
    const std::int64_t N = rng.uniform_int(1, 3);
    const std::int64_t H = rng.uniform_int(2, 6), W = rng.uniform_int(2, 6);
    UpdateGateParams<double> up =
        make_update_gate<double>(C, rng.uniform_int(1, 4), rng);
    ForgetGateParams<double> fp =
        make_forget_gate<double>(C, rng.uniform_int(1, 4), rng);
    // move the zero-initialised biases and running stats off their defaults
    fill_normal(up.b, 0.5, rng);
    fill_normal(up.b33, 0.5, rng);
    fill_normal(up.b55, 0.5, rng);
    fill_normal(fp.b1, 0.5, rng);
    fill_normal(fp.b2, 0.5, rng);
    const RunMode mode = i % 2 ? RunMode::Train : RunMode::Inference;
    if (mode == RunMode::Inference) {
      fill_normal(up.bn.running_mean, 0.3, rng);
      fill_normal(fp.bn.running_mean, 0.3, rng);
      for (std::int64_t k = 0; k < up.bn.running_var.numel(); ++k)
        up.bn.running_var[k] = 0.5 + 0.1 * static_cast<double>(rng.uniform_int(0, 9));
      for (std::int64_t k = 0; k < fp.bn.running_var.numel(); ++k)
        fp.bn.running_var[k] = 0.5 + 0.1 * static_cast<double>(rng.uniform_int(0, 9));
    }

    Tensor<double> y33(N, C, H, W), y55(N, C, H, W), xin(N, C, H, W);
    fill_normal(y33, 1.0, rng);
    fill_normal(y55, 1.0, rng);
    fill_normal(xin, 1.0, rng);

    const UpdateGateOut<double> u = update_gate(y33, y55, up, mode);
    for (std::int64_t k = 0; k < u.u33.numel(); ++k)
      worst_u = std::max(worst_u, std::abs(u.u33[k] + u.u55[k] - 1.0));
    ++evals;

    const Tensor<double> f = forget_gate(xin, fp, mode);
    for (std::int64_t k = 0; k < f.numel(); ++k) {
      f_lo = std::min(f_lo, f[k]);
      f_hi = std::max(f_hi, f[k]);
    }
    ++evals;
  }
  c.pass = worst_u <= kGateTol && f_lo > 0.0 && f_hi < 1.0;
  c.detail = std::to_string(evals) + " evaluations, worst |u33+u55-1| = " +
             sci(worst_u) + ", forget range (" + sci(f_lo) + ", " + sci(f_hi) + ")";
  return c;
}

// -- 5: convolution oracle equivalence --------------------------------------

Criterion conv_oracle_criterion() {
  Criterion c{"conv matches the naive oracle; dilated == embedded 5x5 exactly",
              false, ""};
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(mix_seed(0xc04a1u, static_cast<std::uint64_t>(i)));
    const std::int64_t a = rng.uniform_int(1, 4), b = rng.uniform_int(1, 4);
    const std::int64_t C = rng.uniform_int(2, 8);
    ConvSpec sp;
    switch (i % 6) {  // every stride/padding/dilation/groups combo the presets use
      case 0: sp = ConvSpec::k1x1(rng.uniform_int(1, 8), rng.uniform_int(1, 8)); break;
      case 1: sp = ConvSpec::k3x3(rng.uniform_int(1, 8), rng.uniform_int(1, 8)); break;
      case 2: sp = ConvSpec::k3x3(rng.uniform_int(1, 8), rng.uniform_int(1, 8), 2); break;
      case 3: sp = ConvSpec::k3x3(4 * a, 4 * b, 1, 4); break;
      case 4: sp = ConvSpec::k3x3(C, C, 1, C); break;
      default: sp = ConvSpec::k3x3(C, C, 1, C, 2); break;
    }
    const std::int64_t N = rng.uniform_int(1, 2);
    const std::int64_t H = rng.uniform_int(3, 8), W = rng.uniform_int(3, 8);
    Tensor<double> x(N, sp.in_channels, H, W), w(sp.weight_shape());
    fill_normal(x, 1.0, rng);
    fill_normal(w, 1.0, rng);

    const Tensor<double>* no_bias = nullptr;
    const Tensor<double> ref = oracle::conv2d(x, w, no_bias, sp);
    worst = std::max(worst,
                     oracle::max_abs_diff(conv2d(x, w, nullptr, sp, ConvAlgo::Direct), ref));
    worst = std::max(worst,
                     oracle::max_abs_diff(conv2d(x, w, nullptr, sp, ConvAlgo::Im2col), ref));
  }

  bool embed_exact = true;
  for (int j = 0; j < 20; ++j) {
    Rng rng(mix_seed(0xe3bedu, static_cast<std::uint64_t>(j)));
    const std::int64_t C = rng.uniform_int(2, 6);
    const std::int64_t N = rng.uniform_int(1, 2);
    const std::int64_t H = rng.uniform_int(5, 9), W = rng.uniform_int(5, 9);
    Tensor<double> x(N, C, H, W), w3(C, 1, 3, 3);
    fill_normal(x, 1.0, rng);
    fill_normal(w3, 1.0, rng);
    const ConvSpec d2 = ConvSpec::k3x3(C, C, 1, C, 2);
    const ConvSpec s5{C, C, 5, 5, 1, 2, 1, C, false};
    const Tensor<double> w5 = oracle::embed_3x3_as_dilated_5x5(w3);
    embed_exact = embed_exact &&
                  oracle::exactly_equal(conv2d(x, w3, nullptr, d2, ConvAlgo::Direct),
                                        conv2d(x, w5, nullptr, s5, ConvAlgo::Direct));
  }

  c.pass = worst <= kConvTol && embed_exact;
  c.detail = "100 instances, worst |diff| = " + sci(worst) +
             (embed_exact ? ", embedding identity exact" : ", embedding identity BROKEN");
  return c;
}

// -- 6: finite-difference gradient battery ----------------------------------

Criterion gradcheck_criterion() {
  Criterion c{"finite-difference gradients for every op kind and a full module",
              false, ""};
  std::vector<BatteryCase> bat = gradcheck_battery();
  FDConfig cfg;
  cfg.tol = kGradTol;
  bool all = true, has_module = false;
  double worst = 0.0;
  std::string worst_name, fails;
  for (BatteryCase& bc : bat) {
    const GradCheckResult r = run_gradcheck(bc.check, cfg);
    if (r.name == "smg-module") has_module = true;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_name = r.name;
    }
    if (!r.pass) {
      all = false;
      fails += (fails.empty() ? "" : ", ") + r.name;
    }
  }
  bool covered = true;
  for (const std::string& p : preset_names())
    covered = covered &&
              battery_uncovered_kinds(bat, build_model(preset_by_name(p))).empty();

  c.pass = all && has_module && covered;
  c.detail = std::to_string(bat.size()) + " cases, worst " + worst_name + " " +
             sci(worst);
  if (!all) c.detail += "; FAILED: " + fails;
  if (!covered) c.detail += "; uncovered op kinds remain";
  return c;
}

// -- 7: toy memorization ----------------------------------------------------

Criterion overfit_criterion() {
  Criterion c{"tiny model memorizes 32 samples, monotone and reproducible", false, ""};
  OverfitOptions opt;
  opt.steps = kOverfitSteps;
  const OverfitResult r1 = overfit_toy(opt);
  const OverfitResult r2 = overfit_toy(opt);

  const bool identical = r1.loss == r2.loss && r1.accuracy == r2.accuracy &&
                         r1.final_accuracy == r2.final_accuracy;
  const bool monotone = non_increasing(moving_average(r1.loss, 20));
  c.pass = !r1.diverged && r1.final_accuracy >= kMinAccuracy && monotone &&
           identical && static_cast<std::int64_t>(r1.loss.size()) == kOverfitSteps;

  std::ostringstream os;
  os << "final accuracy " << std::fixed << std::setprecision(3) << r1.final_accuracy
     << " after " << r1.loss.size() << " steps, smoothed trace "
     << (monotone ? "monotone" : "NOT monotone") << ", reruns "
     << (identical ? "bit-identical" : "DIFFER");
  if (r1.diverged) os << ", diverged at step " << r1.diverged_step;
  c.detail = os.str();
  return c;
}

// -- 8: byte determinism of the reporting commands --------------------------

Criterion determinism_criterion() {
  Criterion c{"summarize and export outputs byte-identical across runs", false, ""};
  const auto invoke = [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    run_cli(args, out, err);
    return out.str();
  };
  const std::vector<std::vector<std::string>> invocations = {
      {"summarize", "--preset", "a2"},
      {"summarize", "--preset", "a2", "--format", "structured"},
      {"summarize", "--preset", "c", "--format", "structured"},
      {"export", "--preset", "a1"},
  };
  bool all = true;
  for (const auto& args : invocations) {
    const std::string first = invoke(args);
    all = all && !first.empty() && first == invoke(args);
  }
  c.pass = all;
  c.detail = std::to_string(invocations.size()) + " invocations repeated, " +
             (all ? "no byte drift" : "BYTE DRIFT DETECTED");
  return c;
}

}  // namespace

int main() {
  std::vector<Criterion> cs(2);
  budget_criteria(cs[0], cs[1]);
  cs.push_back(ladder_criterion());
  cs.push_back(gates_criterion());
  cs.push_back(conv_oracle_criterion());
  cs.push_back(gradcheck_criterion());
  cs.push_back(overfit_criterion());
  cs.push_back(determinism_criterion());

  std::cout << "acceptance criteria\n\n";
  int passed = 0;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (cs[i].pass) ++passed;
    std::cout << "[" << i + 1 << "] " << (cs[i].pass ? "PASS" : "FAIL") << "  "
              << cs[i].title << "  (" << cs[i].detail << ")\n";
  }
  std::cout << "\n" << passed << " of " << cs.size() << " criteria pass\n";
  return passed == static_cast<int>(cs.size()) ? 0 : 1;
}
