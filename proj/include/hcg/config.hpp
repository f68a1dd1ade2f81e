#pragma once

#include <json.hpp>
#include <stdexcept>

#include "hcg/arch.hpp"

namespace hcg {

/// Malformed or semantically invalid model description. The CLI maps this to
/// its config exit code, distinct from usage errors.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parse a model description. Schema (all keys optional except `blocks`):
///
///   {
///     "name": "custom",
///     "stem": "cifar" | "imagenet",
///     "classes": 100,
///     "input": 32,                          // square resolution
///     "blocks": [{"modules": 8, "growth": 12}, ...],
///     "hybrid": {"g": 4, "alpha": 4.0, "ru": 2, "rf": 2},
///     "transition": {"g": 1, "alpha": 1.5, "ru": 4, "rf": 4, "theta": 0.5}
///   }
///
/// Unknown keys are errors, reported with their full key path. Defaults for
/// classes/input follow the stem (cifar: 100 @32, imagenet: 1000 @224).
MacroConfig config_from_json(const nlohmann::ordered_json& j);

/// Read and parse a JSON model description from disk.
MacroConfig load_config(const std::string& path);

}  // namespace hcg
