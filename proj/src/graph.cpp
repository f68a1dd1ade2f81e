#include "hcg/graph.hpp"

#include <unordered_map>
#include <unordered_set>

namespace hcg {

const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "input";
    case NodeKind::Conv: return "conv";
    case NodeKind::BatchNorm: return "batch_norm";
    case NodeKind::Relu: return "relu";
    case NodeKind::Tanh: return "tanh";
    case NodeKind::Sigmoid: return "sigmoid";
    case NodeKind::Softmax: return "softmax";
    case NodeKind::Concat: return "concat";
    case NodeKind::Slice: return "slice";
    case NodeKind::Add: return "add";
    case NodeKind::Mul: return "mul";
    case NodeKind::BiasAdd: return "bias_add";
    case NodeKind::MaxPool: return "max_pool";
    case NodeKind::GlobalAvgPool: return "global_avg_pool";
    case NodeKind::SpatialSum: return "spatial_sum";
    case NodeKind::FullyConnected: return "fully_connected";
    case NodeKind::Dropout: return "dropout";
  }
  return "?";
}

int ModelGraph::add(Node n) {
  const int id = static_cast<int>(nodes.size());
  for (int in : n.inputs)
    check(in >= 0 && in < id,
          "graph: node '" + n.label + "' references a non-existing input");
  nodes.push_back(std::move(n));
  return id;
}

const ParamDecl& ModelGraph::param(const std::string& name) const {
  for (const ParamDecl& p : params)
    if (p.name == name) return p;
  throw std::invalid_argument("graph: unknown parameter '" + name + "'");
}

const BnDecl& ModelGraph::bn_decl(const std::string& name) const {
  for (const BnDecl& b : bns)
    if (b.name == name) return b;
  throw std::invalid_argument("graph: unknown batch-norm state '" + name + "'");
}

void ModelGraph::validate() const {
  check(!nodes.empty(), "graph: empty model");
  check(output >= 0 && output < static_cast<int>(nodes.size()),
        "graph: output node not set");
  check(nodes[0].kind == NodeKind::Input, "graph: first node must be the input");

  std::unordered_set<std::string> param_names, bn_names;
  for (const ParamDecl& p : params) {
    check(p.shape.valid(), "graph: parameter '" + p.name + "' has invalid shape");
    check(param_names.insert(p.name).second,
          "graph: duplicate parameter '" + p.name + "'");
  }
  for (const BnDecl& b : bns) {
    check(b.channels >= 1, "graph: batch-norm '" + b.name + "' has no channels");
    check(bn_names.insert(b.name).second,
          "graph: duplicate batch-norm state '" + b.name + "'");
  }

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    const std::string where = "graph: node '" + n.label + "': ";
    for (int in : n.inputs)
      check(in >= 0 && in < static_cast<int>(i), where + "edge points forward");
    auto need_inputs = [&](std::size_t k) {
      check(n.inputs.size() == k, where + "expected " + std::to_string(k) +
                                      " inputs, has " +
                                      std::to_string(n.inputs.size()));
    };
    switch (n.kind) {
      case NodeKind::Input:
        check(i == 0, where + "inner input node");
        break;
      case NodeKind::Conv:
        need_inputs(1);
        n.conv.validate();
        check(param_names.count(n.weight) == 1, where + "unresolved weight");
        check(n.bias.empty() || param_names.count(n.bias) == 1,
              where + "unresolved bias");
        break;
      case NodeKind::BatchNorm:
        need_inputs(1);
        check(bn_names.count(n.bn) == 1, where + "unresolved batch-norm state");
        break;
      case NodeKind::FullyConnected:
        need_inputs(1);
        check(param_names.count(n.weight) == 1, where + "unresolved weight");
        check(n.bias.empty() || param_names.count(n.bias) == 1,
              where + "unresolved bias");
        break;
      case NodeKind::BiasAdd:
        need_inputs(1);
        check(param_names.count(n.bias) == 1, where + "unresolved bias");
        break;
      case NodeKind::Concat:
        check(n.inputs.size() >= 2, where + "needs at least two inputs");
        break;
      case NodeKind::Add:
      case NodeKind::Mul:
        need_inputs(2);
        break;
      case NodeKind::Slice:
        need_inputs(1);
        check(0 <= n.c0 && n.c0 < n.c1, where + "bad slice bounds");
        break;
      case NodeKind::MaxPool:
        need_inputs(1);
        check(n.k >= 1 && n.s >= 1 && n.p >= 0, where + "bad pool geometry");
        break;
      case NodeKind::Dropout:
        need_inputs(1);
        check(n.rate >= 0.0 && n.rate < 1.0, where + "bad dropout rate");
        break;
      default:
        need_inputs(1);
        break;
    }
  }
  for (const StageInfo& s : stages)
    check(s.node >= 0 && s.node < static_cast<int>(nodes.size()),
          "graph: stage '" + s.name + "' points nowhere");
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace hcg
