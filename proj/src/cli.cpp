#include "hcg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hcg/analysis.hpp"
#include "hcg/arch.hpp"
#include "hcg/config.hpp"
#include "hcg/verify.hpp"

namespace hcg {
namespace {

using ojson = nlohmann::ordered_json;

struct CliOptions {
  std::string preset;
  std::string config_path;
  std::string format = "text";
  std::string out_path;
  std::int64_t input = 0;  // 0 = keep the model's native resolution
  std::uint64_t seed = 0;
  double tol_params = 5.0;  // percent
  double tol_flops = 15.0;  // percent
};

MacroConfig resolve_model(const CliOptions& o) {
  MacroConfig cfg =
      o.preset.empty() ? load_config(o.config_path) : preset_by_name(o.preset);
  if (o.input > 0) cfg.input.h = cfg.input.w = o.input;
  return cfg;
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3) << v;
  return os.str();
}

std::string fixd(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

/// Routes a finished report to --out or the stream; only I/O failures return
/// nonzero.
int emit(const CliOptions& o, std::ostream& out, std::ostream& err,
         const std::string& body) {
  if (o.out_path.empty()) {
    out << body;
    return 0;
  }
  std::ofstream f(o.out_path, std::ios::binary);
  f << body;
  if (!f.good()) {
    err << "cannot write '" << o.out_path << "'\n";
    return 1;
  }
  return 0;
}

int cmd_summarize(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ModelGraph g = build_model(resolve_model(o));
  const Summary s = summarize(g);
  const TargetCheck tc =
      check_targets(s, o.tol_params / 100.0, o.tol_flops / 100.0);
  const std::string body = o.format == "structured"
                               ? summary_to_json(s, tc).dump(2) + "\n"
                               : format_summary_text(s, tc);
  if (const int rc = emit(o, out, err, body)) return rc;
  return tc.has_targets && !(tc.params_ok && tc.macs_ok) ? 3 : 0;
}

int cmd_verify(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ModelGraph g = build_model(resolve_model(o));
  const InvariantReport rep = run_invariant_suite(g, o.seed);

  std::string body;
  if (o.format == "structured") {
    ojson j;
    j["model"] = g.name;
    j["seed"] = o.seed;
    j["checks"] = ojson::array();
    for (const InvariantCheck& c : rep.checks)
      j["checks"].push_back({{"name", c.name},
                             {"pass", c.pass},
                             {"residual", c.residual},
                             {"detail", c.detail}});
    j["all_pass"] = rep.all_pass();
    body = j.dump(2) + "\n";
  } else {
    std::ostringstream os;
    os << "invariant suite  model " << g.name << "  seed " << o.seed << "\n\n";
    std::size_t w = 0;
    for (const InvariantCheck& c : rep.checks) w = std::max(w, c.name.size());
    std::int64_t failed = 0;
    for (const InvariantCheck& c : rep.checks) {
      if (!c.pass) ++failed;
      os << "  " << std::left << std::setw(static_cast<int>(w + 2)) << c.name
         << (c.pass ? "pass" : "FAIL") << "  residual " << sci(c.residual)
         << "  (" << c.detail << ")\n";
    }
    os << "\n";
    if (failed == 0)
      os << "all " << rep.checks.size() << " checks passed\n";
    else
      os << failed << " of " << rep.checks.size() << " checks FAILED\n";
    body = os.str();
  }
  if (const int rc = emit(o, out, err, body)) return rc;
  return rep.all_pass() ? 0 : 3;
}

int cmd_gradcheck(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ModelGraph g = build_model(resolve_model(o));
  std::vector<BatteryCase> bat = gradcheck_battery();
  std::vector<GradCheckResult> results;
  results.reserve(bat.size());
  for (BatteryCase& bc : bat) results.push_back(run_gradcheck(bc.check));
  const std::vector<NodeKind> uncovered = battery_uncovered_kinds(bat, g);

  std::int64_t failed = 0;
  for (const GradCheckResult& r : results)
    if (!r.pass) ++failed;

  std::string body;
  if (o.format == "structured") {
    ojson j;
    j["model"] = g.name;
    j["cases"] = ojson::array();
    for (const GradCheckResult& r : results) {
      ojson c = {{"name", r.name},
                 {"pass", r.pass},
                 {"max_rel_err", r.max_rel_err},
                 {"coords", r.coords_checked}};
      if (!r.pass) c["worst"] = r.worst;
      j["cases"].push_back(c);
    }
    j["uncovered"] = ojson::array();
    for (NodeKind k : uncovered) j["uncovered"].push_back(node_kind_name(k));
    j["all_pass"] = failed == 0 && uncovered.empty();
    body = j.dump(2) + "\n";
  } else {
    std::ostringstream os;
    os << "gradient battery  model " << g.name << "  " << results.size()
       << " cases\n\n";
    std::size_t w = 0;
    for (const GradCheckResult& r : results) w = std::max(w, r.name.size());
    for (const GradCheckResult& r : results) {
      os << "  " << std::left << std::setw(static_cast<int>(w + 2)) << r.name
         << (r.pass ? "pass" : "FAIL") << "  max rel err " << sci(r.max_rel_err)
         << "  (" << r.coords_checked << " coords)\n";
      if (!r.pass) os << "    worst: " << r.worst << "\n";
    }
    os << "\n";
    if (uncovered.empty()) {
      os << "coverage: every node kind in the model is exercised\n";
    } else {
      os << "coverage: MISSING kinds:";
      for (NodeKind k : uncovered) os << " " << node_kind_name(k);
      os << "\n";
    }
    if (failed == 0)
      os << "all " << results.size() << " cases passed\n";
    else
      os << failed << " of " << results.size() << " cases FAILED\n";
    body = os.str();
  }
  if (const int rc = emit(o, out, err, body)) return rc;
  return failed == 0 && uncovered.empty() ? 0 : 3;
}

int cmd_overfit(const CliOptions& o, std::ostream& out, std::ostream& err) {
  OverfitOptions op;
  op.model = resolve_model(o);
  // The memorization protocol is deterministic full-batch SGD; dropout noise
  // would make the smoothed-trace monotonicity criterion meaningless.
  op.model.dropout = 0.0;
  op.seed = o.seed;
  const OverfitResult r = overfit_toy(op);
  const bool monotone = non_increasing(moving_average(r.loss, 20));
  const bool ok = !r.diverged && monotone && r.final_accuracy >= 0.95;

  std::string body;
  if (o.format == "structured") {
    ojson j;
    j["model"] = op.model.name;
    j["samples"] = op.samples;
    j["steps"] = op.steps;
    j["lr"] = op.lr;
    j["momentum"] = op.momentum;
    j["seed"] = op.seed;
    j["loss"] = r.loss;
    j["batch_accuracy"] = r.accuracy;
    j["final_accuracy"] = r.final_accuracy;
    j["diverged"] = r.diverged;
    j["diverged_step"] = r.diverged_step;
    j["monotone_ma20"] = monotone;
    j["pass"] = ok;
    body = j.dump(2) + "\n";
  } else {
    std::ostringstream os;
    os << "overfit  model " << op.model.name << "  samples " << op.samples
       << "  steps " << op.steps << "  lr " << fixd(op.lr, 3) << "  momentum "
       << fixd(op.momentum, 3) << "  seed " << op.seed << "\n\n";
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < r.loss.size(); i += 50) rows.push_back(i);
    if (!r.loss.empty() && (rows.empty() || rows.back() != r.loss.size() - 1))
      rows.push_back(r.loss.size() - 1);
    for (std::size_t i : rows)
      os << "  step " << std::right << std::setw(4) << i << "  loss "
         << fixd(r.loss[i], 4) << "  batch acc " << fixd(r.accuracy[i], 3)
         << "\n";
    os << "\n";
    if (r.diverged)
      os << "diverged at step " << r.diverged_step << ": loss is not finite\n";
    os << "final accuracy " << fixd(r.final_accuracy, 3) << "\n";
    os << "smoothed loss monotone: " << (monotone ? "yes" : "NO") << "\n";
    os << "overfit check " << (ok ? "passed" : "FAILED") << "\n";
    body = os.str();
  }
  if (const int rc = emit(o, out, err, body)) return rc;
  return ok ? 0 : 3;
}

int cmd_export(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const ModelGraph g = build_model(resolve_model(o));
  return emit(o, out, err, export_graph(g).dump(2) + "\n");
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HCGNet shape, cost, and training verification tool", "hcgnet"};
  app.require_subcommand(1);
  app.add_subcommand("summarize", "layer shapes with parameter and MAC totals")
      ->fallthrough();
  app.add_subcommand("verify", "run the numerical invariant suite")->fallthrough();
  app.add_subcommand("gradcheck", "finite-difference checks for every operator")
      ->fallthrough();
  app.add_subcommand("overfit", "memorize a small synthetic batch with SGD")
      ->fallthrough();
  app.add_subcommand("export", "dump the model graph as JSON")->fallthrough();

  CliOptions o;
  CLI::Option* po = app.add_option("--preset", o.preset, "built-in model preset")
                        ->check(CLI::IsMember(preset_names()));
  CLI::Option* co =
      app.add_option("--config", o.config_path, "model config JSON file");
  po->excludes(co);
  co->excludes(po);
  app.add_option("--input", o.input, "square input resolution override")
      ->check(CLI::PositiveNumber);
  app.add_option("--format", o.format, "report format")
      ->check(CLI::IsMember(std::vector<std::string>{"text", "structured"}));
  app.add_option("--seed", o.seed, "seed for parameters, data, and dropout");
  app.add_option("--tol-params", o.tol_params,
                 "parameter budget tolerance in percent")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--tol-flops", o.tol_flops,
                 "multiply-accumulate budget tolerance in percent")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--out", o.out_path, "write the report to this file");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  }

  if (o.preset.empty() && o.config_path.empty()) {
    err << "usage error: exactly one of --preset or --config is required\n";
    return 1;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "summarize") return cmd_summarize(o, out, err);
    if (cmd == "verify") return cmd_verify(o, out, err);
    if (cmd == "gradcheck") return cmd_gradcheck(o, out, err);
    if (cmd == "overfit") return cmd_overfit(o, out, err);
    return cmd_export(o, out, err);
  } catch (const ConfigError& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  return run_cli(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace hcg
