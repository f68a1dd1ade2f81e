#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hcg/cli.hpp"

namespace {

struct CliRun {
  int rc;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int rc = hcg::run_cli(std::move(args), out, err);
  return {rc, out.str(), err.str()};
}

std::string temp_file(const std::string& name, const std::string& body) {
  const std::filesystem::path p = std::filesystem::temp_directory_path() / name;
  std::ofstream f(p, std::ios::binary);
  f << body;
  return p.string();
}

const char* kTinyConfig = R"({
  "name": "tiny",
  "stem": "cifar",
  "classes": 10,
  "input": 8,
  "blocks": [
    { "modules": 2, "growth": 8 },
    { "modules": 2, "growth": 16 }
  ]
})";

}  // namespace

TEST_CASE("summarize reports budgets and honors tolerance flags") {
  const CliRun ok = run({"summarize", "--preset", "a2"});
  CHECK(ok.rc == 0);
  CHECK(ok.err.empty());
  CHECK(ok.out.find("model a2") != std::string::npos);
  CHECK(ok.out.find("targets") != std::string::npos);
  CHECK(ok.out.find("OUT OF TOLERANCE") == std::string::npos);

  // a2 sits about +1% over its parameter budget, so a 0.5% band must fail
  const CliRun tight = run({"summarize", "--preset", "a2", "--tol-params", "0.5"});
  CHECK(tight.rc == 3);
  CHECK(tight.out.find("OUT OF TOLERANCE") != std::string::npos);

  const CliRun a1 = run({"summarize", "--preset", "a1"});
  CHECK(a1.rc == 3);  // its MAC count sits well under the reference budget
  CHECK(a1.out.find("OUT OF TOLERANCE") != std::string::npos);
  CHECK(run({"summarize", "--preset", "a1", "--tol-flops", "30"}).rc == 0);
}

TEST_CASE("structured summaries are byte-identical and machine-readable") {
  const std::vector<std::string> args = {"summarize", "--preset", "a2",
                                         "--format", "structured"};
  const CliRun r1 = run(args);
  const CliRun r2 = run(args);
  CHECK(r1.rc == 0);
  REQUIRE(r1.out == r2.out);

  const nlohmann::json j = nlohmann::json::parse(r1.out);
  CHECK(j.at("model") == "a2");
  CHECK(j.at("total").at("params") == 3133601);
  CHECK(j.at("total").at("macs") == 488668216);
  CHECK(j.at("targets").at("params_ok") == true);
  CHECK(j.at("targets").at("macs_ok") == true);
}

TEST_CASE("usage errors exit with code one") {
  const std::vector<std::vector<std::string>> bad = {
      {},                                              // no subcommand
      {"frobnicate"},                                  // unknown subcommand
      {"summarize"},                                   // no model selection
      {"summarize", "--preset", "a1", "--config", "x"},  // both selections
      {"summarize", "--preset", "z9"},                 // unknown preset
      {"summarize", "--preset", "a1", "--format", "xml"},
      {"summarize", "--preset", "a1", "--input", "0"},
      {"summarize", "--preset", "a1", "--bogus"},
  };
  for (const auto& args : bad) {
    const CliRun r = run(args);
    INFO("args: ", args.empty() ? std::string("<none>") : args[0]);
    CHECK(r.rc == 1);
    CHECK(r.err.find("usage error") != std::string::npos);
    CHECK(r.out.empty());
  }

  const CliRun help = run({"--help"});
  CHECK(help.rc == 0);
  CHECK(help.out.find("Usage") != std::string::npos);
  CHECK(help.out.find("summarize") != std::string::npos);
}

TEST_CASE("config files drive every subcommand") {
  const std::string path = temp_file("hcg_cli_tiny.json", kTinyConfig);

  const CliRun sum = run({"summarize", "--config", path});
  CHECK(sum.rc == 0);
  CHECK(sum.out.find("model tiny") != std::string::npos);
  CHECK(sum.out.find("classes 10") != std::string::npos);
  CHECK(sum.out.find("targets") == std::string::npos);  // no budget for customs

  const CliRun ver = run({"verify", "--config", path, "--seed", "3"});
  CHECK(ver.rc == 0);
  CHECK(ver.out.find("all 5 checks passed") != std::string::npos);

  const CliRun exp = run({"export", "--config", path});
  CHECK(exp.rc == 0);
  const nlohmann::json doc = nlohmann::json::parse(exp.out);
  CHECK(doc.at("model") == "tiny");
  CHECK(doc.at("nodes").size() > 100);
  CHECK(doc.at("classes") == 10);
}

TEST_CASE("omitted config keys fall back to stem-appropriate defaults") {
  const std::string cifar =
      temp_file("hcg_cli_min.json", R"({"blocks":[{"modules":2,"growth":8}]})");
  const CliRun r1 = run({"summarize", "--config", cifar});
  CHECK(r1.rc == 0);
  CHECK(r1.out.find("model custom") != std::string::npos);
  CHECK(r1.out.find("input (1,3,32,32)") != std::string::npos);
  CHECK(r1.out.find("classes 100") != std::string::npos);

  const std::string imagenet = temp_file(
      "hcg_cli_imgnet.json",
      R"({"stem":"imagenet","blocks":[{"modules":2,"growth":8}]})");
  const CliRun r2 = run({"summarize", "--config", imagenet});
  CHECK(r2.rc == 0);
  CHECK(r2.out.find("input (1,3,224,224)") != std::string::npos);
  CHECK(r2.out.find("classes 1000") != std::string::npos);
}

TEST_CASE("config errors carry the offending key path and exit with code two") {
  const auto expect_config_error = [](const std::string& body,
                                      const std::string& needle) {
    const std::string path = temp_file("hcg_cli_bad.json", body);
    const CliRun r = run({"summarize", "--config", path});
    INFO("body: ", body, "\nerr: ", r.err);
    CHECK(r.rc == 2);
    CHECK(r.err.find(needle) != std::string::npos);
  };

  expect_config_error(R"({"blocks":[{"modules":2,"growth":8}],"growht":1})",
                      "config key 'growht'");
  expect_config_error(R"({"blocks":[{"modules":2,"growth":8}],"hybrid":{"gg":1}})",
                      "config key 'hybrid.gg'");
  expect_config_error(R"({"name":"x"})", "config key 'blocks'");
  expect_config_error(R"({"blocks":[]})", "non-empty");
  expect_config_error(R"({"blocks":[{"modules":2}]})",
                      "config key 'blocks[0].growth'");
  expect_config_error(R"({"blocks":[{"modules":1,"growth":8}]})", "modules >= 2");
  expect_config_error(R"({"stem":"mnist","blocks":[{"modules":2,"growth":8}]})",
                      "config key 'stem'");
  expect_config_error(R"({"blocks":[{"modules":2,"growth":-3}]})",
                      "positive integer");
  expect_config_error("{ nope", "config:");

  const CliRun missing = run({"summarize", "--config", "/no/such/file.json"});
  CHECK(missing.rc == 2);
  CHECK(missing.err.find("cannot open") != std::string::npos);

  // a structurally valid model that cannot run at the requested resolution
  const std::string path = temp_file("hcg_cli_tiny2.json", kTinyConfig);
  const CliRun odd = run({"summarize", "--config", path, "--input", "7"});
  CHECK(odd.rc == 2);
  CHECK(odd.err.find("downsampling needs even spatial dims") != std::string::npos);
}

TEST_CASE("reports can be routed to files byte-for-byte") {
  const std::string out_path =
      (std::filesystem::temp_directory_path() / "hcg_cli_report.json").string();
  const CliRun to_file = run({"summarize", "--preset", "a3", "--format",
                              "structured", "--out", out_path});
  CHECK(to_file.rc == 0);
  CHECK(to_file.out.empty());  // everything went to the file

  std::ifstream f(out_path, std::ios::binary);
  std::stringstream file_body;
  file_body << f.rdbuf();
  const CliRun direct = run({"summarize", "--preset", "a3", "--format", "structured"});
  CHECK(file_body.str() == direct.out);

  const CliRun bad = run({"export", "--preset", "a1", "--out",
                          "/no_such_dir_zz/report.json"});
  CHECK(bad.rc == 1);
  CHECK(bad.err.find("cannot write") != std::string::npos);
}

TEST_CASE("input resolution overrides flow through the whole report") {
  const CliRun r = run({"summarize", "--preset", "b", "--input", "64"});
  // targets assume the native resolution, so the shrunken model misses them
  CHECK(r.rc == 3);
  CHECK(r.out.find("input (1,3,64,64)") != std::string::npos);
  CHECK(r.out.find("OUT OF TOLERANCE") != std::string::npos);
}

TEST_CASE("verification subcommands succeed and report structure") {
  const CliRun ver = run({"verify", "--preset", "a1", "--seed", "1",
                          "--format", "structured"});
  CHECK(ver.rc == 0);
  const nlohmann::json vj = nlohmann::json::parse(ver.out);
  CHECK(vj.at("all_pass") == true);
  CHECK(vj.at("checks").size() == 5);
  CHECK(vj.at("seed") == 1);

  const CliRun gc = run({"gradcheck", "--preset", "a1", "--format", "structured"});
  CHECK(gc.rc == 0);
  const nlohmann::json gj = nlohmann::json::parse(gc.out);
  CHECK(gj.at("all_pass") == true);
  CHECK(gj.at("cases").size() >= 20);
  CHECK(gj.at("uncovered").empty());

  const CliRun gt = run({"gradcheck", "--preset", "b"});
  CHECK(gt.rc == 0);
  CHECK(gt.out.find("every node kind in the model is exercised") != std::string::npos);
}

TEST_CASE("the overfit subcommand memorizes the sample batch") {
  const std::string path = temp_file("hcg_cli_tiny3.json", kTinyConfig);
  const CliRun r = run({"overfit", "--config", path});
  CHECK(r.rc == 0);
  CHECK(r.out.find("final accuracy 1.000") != std::string::npos);
  CHECK(r.out.find("smoothed loss monotone: yes") != std::string::npos);
  CHECK(r.out.find("overfit check passed") != std::string::npos);
}
