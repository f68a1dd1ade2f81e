#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "hcg/tape.hpp"
#include "hcg/tensor.hpp"

namespace hcg {

/// Finite-difference comparison settings. Tensors smaller than
/// `full_check_below` elements are checked at every coordinate; larger ones at
/// `max_coords` seeded random coordinates.
struct FDConfig {
  double rel_step = 1e-6;
  double tol = 1e-4;
  std::int64_t full_check_below = 200;
  std::int64_t max_coords = 50;
  std::uint64_t seed = 0x5eed;
};

/// One differentiable scenario: a set of leaf tensors plus a forward closure
/// that maps them to a scalar (1,1,1,1) loss. The closure must be pure — any
/// mutable state (running statistics, dropout masks) has to be rebuilt inside
/// it — because the numeric side re-evaluates it under perturbed leaves.
struct GradCheckCase {
  std::string name;
  std::vector<Tensor<double>> leaves;
  std::function<Tensor<double>(std::vector<Tensor<double>>&, GradTape<double>*)> forward;
};

struct GradCheckResult {
  std::string name;
  bool pass = false;
  double max_rel_err = 0.0;
  std::int64_t coords_checked = 0;
  std::string worst;  // "leaf0[i=12] analytic=... numeric=..." for diagnostics
};

inline GradCheckResult run_gradcheck(GradCheckCase& cse, const FDConfig& cfg = {}) {
  GradCheckResult res;
  res.name = cse.name;

  GradTape<double> tape;
  for (Tensor<double>& leaf : cse.leaves) tape.leaf(leaf);
  Tensor<double> loss = cse.forward(cse.leaves, &tape);
  check(loss.shape() == Shape{1, 1, 1, 1},
        "run_gradcheck: forward must produce a scalar loss");
  check(loss.grad_id >= 0, "run_gradcheck: loss is not connected to any leaf");
  auto grads = tape.backward(loss.grad_id);

  auto eval = [&]() { return cse.forward(cse.leaves, nullptr)[0]; };
  res.pass = true;
  for (std::size_t li = 0; li < cse.leaves.size(); ++li) {
    Tensor<double>& leaf = cse.leaves[li];
    const Tensor<double>& g = grads.at(leaf.grad_id);

    std::vector<std::int64_t> coords;
    if (leaf.numel() < cfg.full_check_below) {
      coords.resize(static_cast<std::size_t>(leaf.numel()));
      for (std::int64_t i = 0; i < leaf.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      Rng rng(mix_seed(cfg.seed, 0xc0de00u + li));
      std::set<std::int64_t> picked;
      while (static_cast<std::int64_t>(picked.size()) < cfg.max_coords)
        picked.insert(rng.uniform_int(0, leaf.numel() - 1));
      coords.assign(picked.begin(), picked.end());
    }

    for (std::int64_t i : coords) {
      const double x0 = leaf[i];
      const double h = cfg.rel_step * std::max(std::abs(x0), 1.0);
      leaf[i] = x0 + h;
      const double fp = eval();
      leaf[i] = x0 - h;
      const double fm = eval();
      leaf[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = g[i];
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      ++res.coords_checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "leaf" + std::to_string(li) + "[i=" + std::to_string(i) +
                    "] analytic=" + std::to_string(analytic) +
                    " numeric=" + std::to_string(numeric);
      }
      if (rel >= cfg.tol) res.pass = false;
    }
  }
  return res;
}

}  // namespace hcg
