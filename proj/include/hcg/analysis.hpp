#pragma once

#include <json.hpp>
#include <optional>

#include "hcg/graph.hpp"

namespace hcg {

/// Per-node output shapes from arithmetic alone (no tensors are allocated).
/// Throws with the node's dotted label when a shape is impossible, e.g. when a
/// downsampling module would receive odd spatial dims.
std::vector<Shape> infer_shapes(const ModelGraph& g);
std::vector<Shape> infer_shapes(const ModelGraph& g, Shape input);

struct OpCounts {
  std::int64_t params = 0;       // trainable scalars, batch-norm included
  std::int64_t macs = 0;         // multiply-accumulates of conv + dense layers
  std::int64_t elementwise = 0;  // activations, norms, pools, pointwise ops
};

/// Counts for a single-sample inference pass at the graph's configured input.
OpCounts count_ops(const ModelGraph& g);
OpCounts count_ops(const ModelGraph& g, const std::vector<Shape>& shapes);

struct SegmentRow {
  std::string name;  // "stem", "block0", "transition0", ..., "head"
  OpCounts ops;
};

struct StageRow {
  std::string name;
  Shape shape;
};

struct Summary {
  std::string name;
  Shape input;
  std::int64_t classes = 0;
  OpCounts total;
  std::vector<SegmentRow> segments;
  std::vector<StageRow> stages;
};

Summary summarize(const ModelGraph& g);

/// Reference budgets for the shipped presets (millions of parameters, billions
/// of multiply-accumulates at the preset's native input size).
struct ModelTargets {
  double params_meg = 0.0;
  double macs_gig = 0.0;
};

std::optional<ModelTargets> targets_for(const std::string& preset);

struct TargetCheck {
  bool has_targets = false;
  ModelTargets target;
  double params_dev = 0.0;  // signed relative deviation from the target
  double macs_dev = 0.0;
  bool params_ok = true;
  bool macs_ok = true;
};

TargetCheck check_targets(const Summary& s, double tol_params, double tol_macs);

std::string format_summary_text(const Summary& s, const TargetCheck& tc);
nlohmann::ordered_json summary_to_json(const Summary& s, const TargetCheck& tc);

/// Whole-graph structural document: nodes with kinds/edges/shapes, parameter
/// and norm-state declarations, stage taps.
nlohmann::ordered_json export_graph(const ModelGraph& g);

}  // namespace hcg
