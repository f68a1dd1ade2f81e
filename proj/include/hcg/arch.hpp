#pragma once

#include "hcg/graph.hpp"
#include "hcg/smg.hpp"

namespace hcg {

enum class StemKind { Cifar, ImageNet };

/// One dense block: `modules` squeeze-excite modules, each contributing
/// `growth` channels to the running concatenation.
struct BlockSpec {
  std::int64_t modules = 0;
  std::int64_t growth = 0;
};

/// Hyper-parameters shared by the in-block modules.
struct HybridHyper {
  std::int64_t groups = 4;
  double alpha = 4.0;
  std::int64_t ru = 2, rf = 2;
};

/// Transition modules additionally compress channels by theta and halve the
/// spatial resolution.
struct TransitionHyper {
  std::int64_t groups = 1;
  double alpha = 1.5;
  std::int64_t ru = 4, rf = 4;
  double theta = 0.5;
};

struct MacroConfig {
  std::string name;
  StemKind stem = StemKind::Cifar;
  std::int64_t classes = 100;
  Shape input{1, 3, 32, 32};
  std::vector<BlockSpec> blocks;
  HybridHyper hybrid;
  TransitionHyper transition;
  double dropout = 0.1;

  void validate() const;
};

MacroConfig preset_a1();
MacroConfig preset_a2();
MacroConfig preset_a3();
MacroConfig preset_b();
MacroConfig preset_c();

/// Lower-case preset lookup ("a1", "a2", "a3", "b", "c"); throws on others.
MacroConfig preset_by_name(const std::string& name);
std::vector<std::string> preset_names();

/// Emit the full primitive-op graph: stem, dense blocks of gated modules
/// joined by concatenation, strided transitions, classification head.
ModelGraph build_model(const MacroConfig& cfg);

}  // namespace hcg
