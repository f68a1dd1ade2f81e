#include "hcg/config.hpp"

#include <fstream>

namespace hcg {
namespace {

using json = nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw ConfigError("config key '" + path + "': " + what);
}

void expect_object(const json& j, const std::string& path,
                   std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed)
      if (it.key() == a) known = true;
    if (!known) bad(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
  }
}

std::int64_t get_count(const json& j, const std::string& path) {
  if (!j.is_number_integer()) bad(path, "expected an integer");
  const std::int64_t v = j.get<std::int64_t>();
  if (v < 1) bad(path, "expected a positive integer, got " + std::to_string(v));
  return v;
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) bad(path, "expected a number");
  return j.get<double>();
}

std::string get_string(const json& j, const std::string& path) {
  if (!j.is_string()) bad(path, "expected a string");
  return j.get<std::string>();
}

}  // namespace

MacroConfig config_from_json(const json& j) {
  expect_object(j, "", {"name", "stem", "classes", "input", "blocks", "hybrid",
                        "transition"});

  MacroConfig cfg;
  cfg.name = j.contains("name") ? get_string(j.at("name"), "name") : "custom";

  if (j.contains("stem")) {
    const std::string s = get_string(j.at("stem"), "stem");
    if (s == "cifar")
      cfg.stem = StemKind::Cifar;
    else if (s == "imagenet")
      cfg.stem = StemKind::ImageNet;
    else
      bad("stem", "expected \"cifar\" or \"imagenet\", got \"" + s + "\"");
  }

  const bool cifar = cfg.stem == StemKind::Cifar;
  cfg.classes = cifar ? 100 : 1000;
  if (j.contains("classes")) cfg.classes = get_count(j.at("classes"), "classes");
  std::int64_t res = cifar ? 32 : 224;
  if (j.contains("input")) res = get_count(j.at("input"), "input");
  cfg.input = {1, 3, res, res};

  if (!j.contains("blocks")) bad("blocks", "missing (a non-empty list is required)");
  const json& blocks = j.at("blocks");
  if (!blocks.is_array() || blocks.empty()) bad("blocks", "expected a non-empty list");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string bp = "blocks[" + std::to_string(i) + "]";
    expect_object(blocks[i], bp, {"modules", "growth"});
    if (!blocks[i].contains("modules")) bad(bp + ".modules", "missing");
    if (!blocks[i].contains("growth")) bad(bp + ".growth", "missing");
    cfg.blocks.push_back({get_count(blocks[i].at("modules"), bp + ".modules"),
                          get_count(blocks[i].at("growth"), bp + ".growth")});
  }

  if (j.contains("hybrid")) {
    const json& h = j.at("hybrid");
    expect_object(h, "hybrid", {"g", "alpha", "ru", "rf"});
    if (h.contains("g")) cfg.hybrid.groups = get_count(h.at("g"), "hybrid.g");
    if (h.contains("alpha")) cfg.hybrid.alpha = get_number(h.at("alpha"), "hybrid.alpha");
    if (h.contains("ru")) cfg.hybrid.ru = get_count(h.at("ru"), "hybrid.ru");
    if (h.contains("rf")) cfg.hybrid.rf = get_count(h.at("rf"), "hybrid.rf");
  }
  if (j.contains("transition")) {
    const json& t = j.at("transition");
    expect_object(t, "transition", {"g", "alpha", "ru", "rf", "theta"});
    if (t.contains("g")) cfg.transition.groups = get_count(t.at("g"), "transition.g");
    if (t.contains("alpha"))
      cfg.transition.alpha = get_number(t.at("alpha"), "transition.alpha");
    if (t.contains("ru")) cfg.transition.ru = get_count(t.at("ru"), "transition.ru");
    if (t.contains("rf")) cfg.transition.rf = get_count(t.at("rf"), "transition.rf");
    if (t.contains("theta"))
      cfg.transition.theta = get_number(t.at("theta"), "transition.theta");
  }

  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

MacroConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace hcg
