#pragma once

#include <string>
#include <vector>

#include "hcg/conv.hpp"
#include "hcg/ops.hpp"

namespace hcg {

enum class NodeKind {
  Input,
  Conv,
  BatchNorm,
  Relu,
  Tanh,
  Sigmoid,
  Softmax,
  Concat,
  Slice,
  Add,
  Mul,
  BiasAdd,
  MaxPool,
  GlobalAvgPool,
  SpatialSum,
  FullyConnected,
  Dropout,
};

const char* node_kind_name(NodeKind k);

/// One primitive operation. Only the fields relevant to `kind` are meaningful.
struct Node {
  NodeKind kind = NodeKind::Input;
  std::vector<int> inputs;
  std::string label;  // dotted path, e.g. "block0.module1.squeeze.conv2"

  ConvSpec conv;                          // Conv
  std::string weight, bias;               // Conv / FullyConnected / BiasAdd
  std::string bn;                         // BatchNorm state name
  SoftmaxAxis axis = SoftmaxAxis::Spatial;  // Softmax
  std::int64_t c0 = 0, c1 = 0;            // Slice bounds
  std::int64_t k = 0, s = 0, p = 0;       // MaxPool geometry
  double rate = 0.0;                      // Dropout
  // Strided squeeze convolutions additionally require even spatial dims so
  // that downsampling halves them exactly; checked at shape inference and
  // again at execution.
  bool even_input = false;
};

/// Trainable tensor declaration. `init_std` == 0 zero-fills (biases); weights
/// carry their fan-out Gaussian std computed at declaration time.
struct ParamDecl {
  std::string name;
  Shape shape;
  double init_std = 0.0;
};

/// Batch-norm state declaration (gamma, beta, running mean/var over channels).
struct BnDecl {
  std::string name;
  std::int64_t channels = 0;
};

/// Named tap for the resolution ladder (stem, each block, each transition...).
struct StageInfo {
  std::string name;
  int node = -1;
};

/// Bookkeeping for one squeeze-excite module: where it reads and writes, and
/// the channel widths the macro-architecture arithmetic predicts for it.
struct ModuleInfo {
  std::string path;
  int in_node = -1, out_node = -1;
  std::int64_t expected_in = 0, expected_out = 0;
};

struct ModelGraph {
  std::string name;
  Shape input{1, 3, 32, 32};
  std::int64_t num_classes = 0;
  std::vector<Node> nodes;  // in topological order by construction
  std::vector<ParamDecl> params;
  std::vector<BnDecl> bns;
  std::vector<StageInfo> stages;
  std::vector<ModuleInfo> modules;
  int output = -1;

  int add(Node n);
  const ParamDecl& param(const std::string& name) const;
  const BnDecl& bn_decl(const std::string& name) const;

  /// Structural checks: edges point backwards, parameter references resolve,
  /// declarations are unique, output is set.
  void validate() const;
};

/// Stable 64-bit name hash used to derive per-parameter init streams.
std::uint64_t fnv1a64(const std::string& s);

}  // namespace hcg
