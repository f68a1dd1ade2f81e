#include "hcg/arch.hpp"

namespace hcg {

void MacroConfig::validate() const {
  check(!blocks.empty(), "config: at least one block is required");
  for (const BlockSpec& b : blocks)
    check(b.modules >= 2 && b.growth >= 1,
          "config: block entries need modules >= 2 and growth >= 1");
  check(classes >= 2, "config: need at least two classes");
  check(input.n == 1 && input.c >= 1 && input.h >= 1 && input.w >= 1,
        "config: input must be a (1,C,H,W) shape, got " + input.str());
  check(hybrid.groups >= 1 && hybrid.alpha > 0 && hybrid.ru >= 1 && hybrid.rf >= 1,
        "config: bad hybrid hyper-parameters");
  check(transition.groups >= 1 && transition.alpha > 0 && transition.ru >= 1 &&
            transition.rf >= 1,
        "config: bad transition hyper-parameters");
  check(transition.theta > 0.0 && transition.theta <= 1.0,
        "config: theta must lie in (0,1]");
  check(dropout >= 0.0 && dropout < 1.0, "config: dropout must lie in [0,1)");
}

namespace {

MacroConfig cifar_preset(std::string name, std::vector<BlockSpec> blocks) {
  MacroConfig c;
  c.name = std::move(name);
  c.stem = StemKind::Cifar;
  c.classes = 100;
  c.input = {1, 3, 32, 32};
  c.blocks = std::move(blocks);
  return c;
}

MacroConfig imagenet_preset(std::string name, std::vector<BlockSpec> blocks) {
  MacroConfig c;
  c.name = std::move(name);
  c.stem = StemKind::ImageNet;
  c.classes = 1000;
  c.input = {1, 3, 224, 224};
  c.blocks = std::move(blocks);
  return c;
}

}  // namespace

MacroConfig preset_a1() { return cifar_preset("a1", {{8, 12}, {8, 24}, {8, 36}}); }
MacroConfig preset_a2() { return cifar_preset("a2", {{8, 24}, {8, 36}, {8, 64}}); }
MacroConfig preset_a3() { return cifar_preset("a3", {{12, 36}, {12, 48}, {12, 80}}); }
MacroConfig preset_b() {
  return imagenet_preset("b", {{3, 32}, {6, 48}, {12, 64}, {8, 96}});
}
MacroConfig preset_c() {
  return imagenet_preset("c", {{6, 48}, {12, 56}, {18, 72}, {14, 112}});
}

MacroConfig preset_by_name(const std::string& name) {
  if (name == "a1") return preset_a1();
  if (name == "a2") return preset_a2();
  if (name == "a3") return preset_a3();
  if (name == "b") return preset_b();
  if (name == "c") return preset_c();
  throw std::invalid_argument("unknown preset '" + name +
                              "' (expected a1, a2, a3, b, or c)");
}

std::vector<std::string> preset_names() { return {"a1", "a2", "a3", "b", "c"}; }

namespace {

// Thin emission helpers over ModelGraph; every method returns the new node id.
struct Builder {
  ModelGraph g;

  double conv_std(const ConvSpec& sp) const {
    return std::sqrt(2.0 /
                     static_cast<double>(sp.kh * sp.kw * sp.out_channels / sp.groups));
  }

  int conv(int in, const std::string& pname, const ConvSpec& sp, bool even = false) {
    g.params.push_back({pname, sp.weight_shape(), conv_std(sp)});
    Node n;
    n.kind = NodeKind::Conv;
    n.inputs = {in};
    n.label = pname;
    n.conv = sp;
    n.weight = pname;
    n.even_input = even;
    return g.add(std::move(n));
  }

  int bn(int in, const std::string& name, std::int64_t channels) {
    g.bns.push_back({name, channels});
    Node n;
    n.kind = NodeKind::BatchNorm;
    n.inputs = {in};
    n.label = name;
    n.bn = name;
    return g.add(std::move(n));
  }

  int unary(NodeKind kind, int in, const std::string& label) {
    Node n;
    n.kind = kind;
    n.inputs = {in};
    n.label = label;
    return g.add(std::move(n));
  }

  int bn_relu(int in, const std::string& name, std::int64_t channels) {
    return unary(NodeKind::Relu, bn(in, name, channels), name + ".relu");
  }

  int fc(int in, const std::string& wname, const std::string& bname,
         std::int64_t out, std::int64_t in_c, const std::string& label) {
    g.params.push_back({wname, {out, in_c, 1, 1},
                        std::sqrt(2.0 / static_cast<double>(out))});
    if (!bname.empty()) g.params.push_back({bname, {1, out, 1, 1}, 0.0});
    Node n;
    n.kind = NodeKind::FullyConnected;
    n.inputs = {in};
    n.label = label;
    n.weight = wname;
    n.bias = bname;
    return g.add(std::move(n));
  }

  int bias_add(int in, const std::string& bname, std::int64_t channels,
               const std::string& label) {
    g.params.push_back({bname, {1, channels, 1, 1}, 0.0});
    Node n;
    n.kind = NodeKind::BiasAdd;
    n.inputs = {in};
    n.label = label;
    n.bias = bname;
    return g.add(std::move(n));
  }

  int softmax(int in, SoftmaxAxis axis, const std::string& label) {
    Node n;
    n.kind = NodeKind::Softmax;
    n.inputs = {in};
    n.label = label;
    n.axis = axis;
    return g.add(std::move(n));
  }

  int binary(NodeKind kind, int a, int b, const std::string& label) {
    Node n;
    n.kind = kind;
    n.inputs = {a, b};
    n.label = label;
    return g.add(std::move(n));
  }

  int concat(int a, int b, const std::string& label) {
    return binary(NodeKind::Concat, a, b, label);
  }

  int slice(int in, std::int64_t c0, std::int64_t c1, const std::string& label) {
    Node n;
    n.kind = NodeKind::Slice;
    n.inputs = {in};
    n.label = label;
    n.c0 = c0;
    n.c1 = c1;
    return g.add(std::move(n));
  }

  void stage(const std::string& name, int node) { g.stages.push_back({name, node}); }
};

// Attention pooling subgraph: 1x1 logits -> spatial softmax -> weight -> sum.
int emit_pool(Builder& b, const std::string& prefix, const std::string& wname,
              int src, std::int64_t channels) {
  int logits = b.conv(src, prefix + "." + wname, ConvSpec::k1x1(channels, 1));
  int attn = b.softmax(logits, SoftmaxAxis::Spatial, prefix + "." + wname + ".attn");
  int weighted = b.binary(NodeKind::Mul, src, attn, prefix + "." + wname + ".weighted");
  return b.unary(NodeKind::SpatialSum, weighted, prefix + "." + wname + ".pooled");
}

int emit_smg(Builder& b, const std::string& path, int in_node, const SMGConfig& cfg) {
  cfg.validate();
  const std::int64_t C = cfg.out_channels;

  int t = b.bn_relu(in_node, path + ".squeeze.bn1", cfg.in_channels);
  t = b.conv(t, path + ".squeeze.conv1", cfg.conv1_spec());
  t = b.bn_relu(t, path + ".squeeze.bn2", cfg.mid_channels());
  const int xp = b.conv(t, path + ".squeeze.conv2", cfg.conv2_spec(),
                        /*even=*/cfg.stride == 2);

  int a33 = b.bn_relu(xp, path + ".excite.bn33", C);
  const int y33 = b.conv(a33, path + ".excite.conv33", cfg.conv33_spec());
  int a55 = b.bn_relu(xp, path + ".excite.bn55", C);
  const int y55 = b.conv(a55, path + ".excite.conv55", cfg.conv55_spec());

  const std::string up = path + ".update";
  const int z33 = emit_pool(b, up, "ws33", y33, C);
  const int z55 = emit_pool(b, up, "ws55", y55, C);
  const int zcat = b.concat(z33, z55, up + ".zcat");
  const std::int64_t hu = std::max<std::int64_t>(1, 2 * C / cfg.ru);
  int h = b.fc(zcat, up + ".W", "", hu, 2 * C, up + ".mix");
  h = b.bn(h, up + ".bn", hu);
  h = b.bias_add(h, up + ".b", hu, up + ".b");
  h = b.unary(NodeKind::Tanh, h, up + ".tanh");
  const int l33 = b.fc(h, up + ".W33", up + ".b33", C, hu, up + ".logits33");
  const int l55 = b.fc(h, up + ".W55", up + ".b55", C, hu, up + ".logits55");
  const int u = b.softmax(b.concat(l33, l55, up + ".lcat"), SoftmaxAxis::Branch,
                          up + ".u");
  const int u33 = b.slice(u, 0, C, up + ".u33");
  const int u55 = b.slice(u, C, 2 * C, up + ".u55");
  const int v = b.binary(NodeKind::Add, b.binary(NodeKind::Mul, u33, z33, up + ".v33"),
                         b.binary(NodeKind::Mul, u55, z55, up + ".v55"), up + ".v");

  const std::string fp = path + ".forget";
  const std::int64_t hf = std::max<std::int64_t>(1, C / cfg.rf);
  const int zf = emit_pool(b, fp, "wsf", xp, C);
  int hfn = b.fc(zf, fp + ".W1", fp + ".b1", hf, C, fp + ".mix");
  hfn = b.bn(hfn, fp + ".bn", hf);
  hfn = b.unary(NodeKind::Tanh, hfn, fp + ".tanh");
  const int f = b.unary(NodeKind::Sigmoid,
                        b.fc(hfn, fp + ".W2", fp + ".b2", C, hf, fp + ".logits"),
                        fp + ".f");

  const int out = b.binary(NodeKind::Add, b.binary(NodeKind::Mul, f, xp, path + ".gated"),
                           v, path + ".out");
  b.g.modules.push_back({path, in_node, out, cfg.in_channels, C});
  return out;
}

}  // namespace

ModelGraph build_model(const MacroConfig& cfg) {
  cfg.validate();
  Builder b;
  b.g.name = cfg.name;
  b.g.input = cfg.input;
  b.g.num_classes = cfg.classes;

  Node in;
  in.kind = NodeKind::Input;
  in.label = "input";
  int x = b.g.add(std::move(in));

  std::int64_t C;
  if (cfg.stem == StemKind::Cifar) {
    C = 2 * cfg.blocks[0].growth;
    x = b.conv(x, "stem.conv", ConvSpec::k3x3(cfg.input.c, C));
    b.stage("stem", x);
  } else {
    x = b.conv(x, "stem.conv1", ConvSpec::k3x3(cfg.input.c, 32, 2));
    x = b.bn_relu(x, "stem.bn1", 32);
    b.stage("stem.conv1", x);
    x = b.conv(x, "stem.conv2", ConvSpec::k3x3(32, 32));
    x = b.bn_relu(x, "stem.bn2", 32);
    x = b.conv(x, "stem.conv3", ConvSpec::k3x3(32, 64));
    x = b.bn_relu(x, "stem.bn3", 64);
    Node pool;
    pool.kind = NodeKind::MaxPool;
    pool.inputs = {x};
    pool.label = "stem.pool";
    pool.k = 3;
    pool.s = 2;
    pool.p = 1;
    x = b.g.add(std::move(pool));
    C = 64;
    b.stage("stem", x);
  }

  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const BlockSpec& blk = cfg.blocks[i];
    const std::string bp = "block" + std::to_string(i);
    for (std::int64_t j = 0; j < blk.modules; ++j) {
      const std::string path = bp + ".module" + std::to_string(j);
      SMGConfig sc{C + j * blk.growth, blk.growth, cfg.hybrid.alpha,
                   cfg.hybrid.groups, 1, cfg.hybrid.ru, cfg.hybrid.rf};
      // The module reads the concatenation of the block input and all earlier
      // module outputs; `x` already holds exactly that.
      const int m = emit_smg(b, path, x, sc);
      x = b.concat(x, m, bp + ".concat" + std::to_string(j));
    }
    C += blk.modules * blk.growth;
    b.stage(bp, x);
    if (i + 1 < cfg.blocks.size()) {
      const std::string tp = "transition" + std::to_string(i);
      const std::int64_t Ct = static_cast<std::int64_t>(
          cfg.transition.theta * static_cast<double>(C));
      SMGConfig tc{C, Ct, cfg.transition.alpha, cfg.transition.groups, 2,
                   cfg.transition.ru, cfg.transition.rf};
      x = emit_smg(b, tp, x, tc);
      C = Ct;
      b.stage(tp, x);
    }
  }

  x = b.bn_relu(x, "head.bn", C);
  x = b.unary(NodeKind::GlobalAvgPool, x, "head.gap");
  Node drop;
  drop.kind = NodeKind::Dropout;
  drop.inputs = {x};
  drop.label = "head.dropout";
  drop.rate = cfg.dropout;
  x = b.g.add(std::move(drop));
  x = b.fc(x, "head.fc.W", "head.fc.b", cfg.classes, C, "head.fc");
  b.g.output = x;
  b.stage("head", x);

  b.g.validate();
  return b.g;
}

}  // namespace hcg
