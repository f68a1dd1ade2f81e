#include "hcg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

namespace hcg {
namespace {

[[noreturn]] void fail(const Node& n, const std::string& msg) {
  throw std::invalid_argument("'" + n.label + "': " + msg);
}

std::string segment_of(const std::string& label) {
  const auto dot = label.find('.');
  return dot == std::string::npos ? label : label.substr(0, dot);
}

std::string format_count(std::int64_t v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << v;
  return os.str();
}

std::string format_dev(double dev) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << std::showpos << dev * 100.0 << "%";
  return os.str();
}

nlohmann::ordered_json shape_json(const Shape& s) {
  return nlohmann::ordered_json::array({s.n, s.c, s.h, s.w});
}

}  // namespace

std::vector<Shape> infer_shapes(const ModelGraph& g) {
  return infer_shapes(g, g.input);
}

std::vector<Shape> infer_shapes(const ModelGraph& g, Shape input) {
  g.validate();
  check(input.valid(), "infer_shapes: invalid input shape " + input.str());
  check(input.c == g.input.c,
        "infer_shapes: input has " + std::to_string(input.c) +
            " channels, model expects " + std::to_string(g.input.c));

  std::vector<Shape> out(g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    auto in = [&](std::size_t k) -> const Shape& {
      return out[static_cast<std::size_t>(n.inputs[k])];
    };
    Shape s;
    switch (n.kind) {
      case NodeKind::Input:
        s = input;
        break;
      case NodeKind::Conv: {
        const Shape& x = in(0);
        if (x.c != n.conv.in_channels)
          fail(n, "input has " + std::to_string(x.c) + " channels, spec expects " +
                      std::to_string(n.conv.in_channels));
        if (n.even_input && (x.h % 2 != 0 || x.w % 2 != 0))
          fail(n, "downsampling needs even spatial dims, got " + x.str());
        const std::int64_t oh = n.conv.out_dim(x.h), ow = n.conv.out_dim_w(x.w);
        if (oh < 1 || ow < 1)
          fail(n, "non-positive output spatial dims for input " + x.str());
        s = {x.n, n.conv.out_channels, oh, ow};
        break;
      }
      case NodeKind::BatchNorm: {
        const Shape& x = in(0);
        const std::int64_t ch = g.bn_decl(n.bn).channels;
        if (x.c != ch)
          fail(n, "input has " + std::to_string(x.c) +
                      " channels, norm state expects " + std::to_string(ch));
        s = x;
        break;
      }
      case NodeKind::Relu:
      case NodeKind::Tanh:
      case NodeKind::Sigmoid:
      case NodeKind::Dropout:
        s = in(0);
        break;
      case NodeKind::Softmax:
        if (n.axis == SoftmaxAxis::Branch && in(0).c % 2 != 0)
          fail(n, "branch softmax needs an even channel count, got " +
                      std::to_string(in(0).c));
        s = in(0);
        break;
      case NodeKind::Concat: {
        s = in(0);
        for (std::size_t k = 1; k < n.inputs.size(); ++k) {
          const Shape& x = in(k);
          if (x.n != s.n || x.h != s.h || x.w != s.w)
            fail(n, "concat inputs disagree outside the channel axis: " + s.str() +
                        " vs " + x.str());
          s.c += x.c;
        }
        break;
      }
      case NodeKind::Slice: {
        const Shape& x = in(0);
        if (n.c1 > x.c)
          fail(n, "slice [" + std::to_string(n.c0) + ", " + std::to_string(n.c1) +
                      ") exceeds " + std::to_string(x.c) + " channels");
        s = {x.n, n.c1 - n.c0, x.h, x.w};
        break;
      }
      case NodeKind::Add:
      case NodeKind::Mul:
        try {
          s = detail::broadcast_shape(in(0), in(1));
        } catch (const std::invalid_argument& e) {
          fail(n, e.what());
        }
        break;
      case NodeKind::BiasAdd:
        try {
          s = detail::broadcast_shape(in(0), g.param(n.bias).shape);
        } catch (const std::invalid_argument& e) {
          fail(n, e.what());
        }
        break;
      case NodeKind::MaxPool: {
        const Shape& x = in(0);
        const std::int64_t oh = (x.h + 2 * n.p - n.k) / n.s + 1;
        const std::int64_t ow = (x.w + 2 * n.p - n.k) / n.s + 1;
        if (oh < 1 || ow < 1)
          fail(n, "non-positive output spatial dims for input " + x.str());
        s = {x.n, x.c, oh, ow};
        break;
      }
      case NodeKind::GlobalAvgPool:
      case NodeKind::SpatialSum:
        s = {in(0).n, in(0).c, 1, 1};
        break;
      case NodeKind::FullyConnected: {
        const Shape& x = in(0);
        const Shape& w = g.param(n.weight).shape;
        if (x.h != 1 || x.w != 1)
          fail(n, "expects pooled (N,C,1,1) input, got " + x.str());
        if (x.c != w.c)
          fail(n, "input has " + std::to_string(x.c) + " features, weight expects " +
                      std::to_string(w.c));
        s = {x.n, w.n, 1, 1};
        break;
      }
    }
    out[i] = s;
  }
  return out;
}

OpCounts count_ops(const ModelGraph& g) { return count_ops(g, infer_shapes(g)); }

namespace {

// Counting rules for a single node given the inferred shapes. Headline cost is
// multiply-accumulates of the weighted layers; everything pointwise
// (normalisation, activations, gates, pools) lands in `elementwise`.
OpCounts node_ops(const ModelGraph& g, const Node& n, const Shape& os,
                  const std::vector<Shape>& shapes) {
  auto in_shape = [&](std::size_t k) -> const Shape& {
    return shapes[static_cast<std::size_t>(n.inputs[k])];
  };
  OpCounts c;
  switch (n.kind) {
    case NodeKind::Input:
    case NodeKind::Concat:
    case NodeKind::Slice:
    case NodeKind::Dropout:
      break;
    case NodeKind::Conv:
      c.macs = os.n * os.h * os.w * n.conv.out_channels *
               (n.conv.in_channels / n.conv.groups) * n.conv.kh * n.conv.kw;
      if (!n.bias.empty()) c.elementwise = os.numel();
      break;
    case NodeKind::FullyConnected:
      c.macs = os.n * g.param(n.weight).shape.n * g.param(n.weight).shape.c;
      if (!n.bias.empty()) c.elementwise = os.numel();
      break;
    case NodeKind::BatchNorm:
      c.elementwise = 2 * os.numel();  // scale + shift per element
      break;
    case NodeKind::Relu:
    case NodeKind::Tanh:
    case NodeKind::Sigmoid:
      c.elementwise = os.numel();
      break;
    case NodeKind::Softmax:
      c.elementwise = 3 * os.numel();  // exp, reduce, divide
      break;
    case NodeKind::Add:
    case NodeKind::Mul:
    case NodeKind::BiasAdd:
      c.elementwise = os.numel();
      break;
    case NodeKind::MaxPool:
      c.elementwise = n.k * n.k * os.numel();
      break;
    case NodeKind::GlobalAvgPool:
    case NodeKind::SpatialSum:
      c.elementwise = in_shape(0).numel();
      break;
  }
  return c;
}

}  // namespace

OpCounts count_ops(const ModelGraph& g, const std::vector<Shape>& shapes) {
  check(shapes.size() == g.nodes.size(), "count_ops: shape list does not match graph");
  OpCounts total;
  for (const ParamDecl& p : g.params) total.params += p.shape.numel();
  for (const BnDecl& b : g.bns) total.params += 2 * b.channels;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const OpCounts c = node_ops(g, g.nodes[i], shapes[i], shapes);
    total.macs += c.macs;
    total.elementwise += c.elementwise;
  }
  return total;
}

Summary summarize(const ModelGraph& g) {
  const std::vector<Shape> shapes = infer_shapes(g);
  Summary s;
  s.name = g.name;
  s.input = g.input;
  s.classes = g.num_classes;
  s.total = count_ops(g, shapes);

  // Segment = first dotted component of a label ("block0", "head", ...), in
  // order of first appearance along the graph.
  std::vector<std::string> order;
  std::map<std::string, OpCounts> by_seg;
  auto seg_slot = [&](const std::string& seg) -> OpCounts& {
    if (by_seg.find(seg) == by_seg.end()) order.push_back(seg);
    return by_seg[seg];
  };
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    if (n.kind == NodeKind::Input) continue;
    const OpCounts c = node_ops(g, n, shapes[i], shapes);
    OpCounts& slot = seg_slot(segment_of(n.label));
    slot.macs += c.macs;
    slot.elementwise += c.elementwise;
  }
  for (const ParamDecl& p : g.params) seg_slot(segment_of(p.name)).params += p.shape.numel();
  for (const BnDecl& b : g.bns) seg_slot(segment_of(b.name)).params += 2 * b.channels;
  for (const std::string& seg : order) s.segments.push_back({seg, by_seg[seg]});

  for (const StageInfo& st : g.stages)
    s.stages.push_back({st.name, shapes[static_cast<std::size_t>(st.node)]});
  return s;
}

std::optional<ModelTargets> targets_for(const std::string& preset) {
  // Reference budgets, in millions of parameters and billions of
  // multiply-accumulates at each preset's native input resolution.
  if (preset == "a1") return ModelTargets{1.1, 0.2};
  if (preset == "a2") return ModelTargets{3.1, 0.5};
  if (preset == "a3") return ModelTargets{11.4, 2.0};
  if (preset == "b") return ModelTargets{12.9, 2.0};
  if (preset == "c") return ModelTargets{42.2, 7.1};
  return std::nullopt;
}

TargetCheck check_targets(const Summary& s, double tol_params, double tol_macs) {
  TargetCheck tc;
  const auto t = targets_for(s.name);
  if (!t) return tc;
  tc.has_targets = true;
  tc.target = *t;
  tc.params_dev =
      (static_cast<double>(s.total.params) - t->params_meg * 1e6) / (t->params_meg * 1e6);
  tc.macs_dev =
      (static_cast<double>(s.total.macs) - t->macs_gig * 1e9) / (t->macs_gig * 1e9);
  tc.params_ok = std::abs(tc.params_dev) <= tol_params;
  tc.macs_ok = std::abs(tc.macs_dev) <= tol_macs;
  return tc;
}

std::string format_summary_text(const Summary& s, const TargetCheck& tc) {
  std::ostringstream os;
  os << "model " << s.name << "  input " << s.input.str() << "  classes "
     << s.classes << "\n\n";

  std::size_t wname = 10;
  for (const SegmentRow& r : s.segments) wname = std::max(wname, r.name.size());
  os << std::left << std::setw(static_cast<int>(wname + 2)) << "segment" << std::right
     << std::setw(14) << "params" << std::setw(16) << "macs" << std::setw(16)
     << "elementwise" << "\n";
  auto row = [&](const std::string& name, const OpCounts& c) {
    os << std::left << std::setw(static_cast<int>(wname + 2)) << name << std::right
       << std::setw(14) << format_count(c.params) << std::setw(16)
       << format_count(c.macs) << std::setw(16) << format_count(c.elementwise)
       << "\n";
  };
  for (const SegmentRow& r : s.segments) row(r.name, r.ops);
  row("total", s.total);

  os << "\nstage ladder\n";
  std::size_t wstage = 10;
  for (const StageRow& r : s.stages) wstage = std::max(wstage, r.name.size());
  for (const StageRow& r : s.stages)
    os << "  " << std::left << std::setw(static_cast<int>(wstage + 2)) << r.name
       << r.shape.str() << "\n";

  if (tc.has_targets) {
    os << "\ntargets\n";
    os << "  params " << std::fixed << std::setprecision(3)
       << static_cast<double>(s.total.params) / 1e6 << "M vs " << std::setprecision(1)
       << tc.target.params_meg << "M  dev " << format_dev(tc.params_dev) << "  "
       << (tc.params_ok ? "ok" : "OUT OF TOLERANCE") << "\n";
    os << "  macs   " << std::setprecision(3)
       << static_cast<double>(s.total.macs) / 1e9 << "G vs " << std::setprecision(1)
       << tc.target.macs_gig << "G  dev " << format_dev(tc.macs_dev) << "  "
       << (tc.macs_ok ? "ok" : "OUT OF TOLERANCE") << "\n";
  }
  return os.str();
}

nlohmann::ordered_json summary_to_json(const Summary& s, const TargetCheck& tc) {
  nlohmann::ordered_json j;
  j["model"] = s.name;
  j["input"] = shape_json(s.input);
  j["classes"] = s.classes;
  j["total"] = {{"params", s.total.params},
                {"macs", s.total.macs},
                {"elementwise", s.total.elementwise}};
  j["segments"] = nlohmann::ordered_json::array();
  for (const SegmentRow& r : s.segments)
    j["segments"].push_back({{"name", r.name},
                             {"params", r.ops.params},
                             {"macs", r.ops.macs},
                             {"elementwise", r.ops.elementwise}});
  j["stages"] = nlohmann::ordered_json::array();
  for (const StageRow& r : s.stages)
    j["stages"].push_back({{"name", r.name}, {"shape", shape_json(r.shape)}});
  if (tc.has_targets) {
    j["targets"] = {{"params_meg", tc.target.params_meg},
                    {"macs_gig", tc.target.macs_gig},
                    {"params_dev", tc.params_dev},
                    {"macs_dev", tc.macs_dev},
                    {"params_ok", tc.params_ok},
                    {"macs_ok", tc.macs_ok}};
  }
  return j;
}

nlohmann::ordered_json export_graph(const ModelGraph& g) {
  const std::vector<Shape> shapes = infer_shapes(g);
  nlohmann::ordered_json j;
  j["model"] = g.name;
  j["input"] = shape_json(g.input);
  j["classes"] = g.num_classes;

  j["nodes"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    nlohmann::ordered_json nj;
    nj["id"] = i;
    nj["kind"] = node_kind_name(n.kind);
    nj["label"] = n.label;
    nj["inputs"] = n.inputs;
    nj["shape"] = shape_json(shapes[i]);
    switch (n.kind) {
      case NodeKind::Conv:
        nj["conv"] = {{"in", n.conv.in_channels},   {"out", n.conv.out_channels},
                      {"kh", n.conv.kh},            {"kw", n.conv.kw},
                      {"stride", n.conv.stride},    {"padding", n.conv.padding},
                      {"dilation", n.conv.dilation},{"groups", n.conv.groups}};
        nj["weight"] = n.weight;
        if (!n.bias.empty()) nj["bias"] = n.bias;
        break;
      case NodeKind::FullyConnected:
        nj["weight"] = n.weight;
        if (!n.bias.empty()) nj["bias"] = n.bias;
        break;
      case NodeKind::BiasAdd:
        nj["bias"] = n.bias;
        break;
      case NodeKind::BatchNorm:
        nj["norm_state"] = n.bn;
        break;
      case NodeKind::Softmax:
        nj["axis"] = n.axis == SoftmaxAxis::Spatial  ? "spatial"
                     : n.axis == SoftmaxAxis::Branch ? "branch"
                                                     : "channel";
        break;
      case NodeKind::Slice:
        nj["range"] = {n.c0, n.c1};
        break;
      case NodeKind::MaxPool:
        nj["pool"] = {{"k", n.k}, {"stride", n.s}, {"padding", n.p}};
        break;
      case NodeKind::Dropout:
        nj["rate"] = n.rate;
        break;
      default:
        break;
    }
    j["nodes"].push_back(std::move(nj));
  }

  j["params"] = nlohmann::ordered_json::array();
  for (const ParamDecl& p : g.params)
    j["params"].push_back({{"name", p.name},
                           {"shape", shape_json(p.shape)},
                           {"init_std", p.init_std}});
  j["norm_states"] = nlohmann::ordered_json::array();
  for (const BnDecl& b : g.bns)
    j["norm_states"].push_back({{"name", b.name}, {"channels", b.channels}});
  j["stages"] = nlohmann::ordered_json::array();
  for (const StageInfo& st : g.stages)
    j["stages"].push_back({{"name", st.name}, {"node", st.node}});
  j["modules"] = nlohmann::ordered_json::array();
  for (const ModuleInfo& m : g.modules)
    j["modules"].push_back({{"path", m.path},
                            {"in_node", m.in_node},
                            {"out_node", m.out_node},
                            {"channels_in", m.expected_in},
                            {"channels_out", m.expected_out}});
  return j;
}

}  // namespace hcg
