#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cdon/graph.hpp"

namespace cdon {

struct GradCheckOptions {
  real step = real(1e-5);
  real tol = real(1e-4);
  /// Probes whose one-sided slopes disagree by more than this (relative) are
  /// treated as sitting on a kink and skipped.
  real kink_tol = real(1e-2);
  /// Denominator floor of the relative error, so near-zero gradients are
  /// compared in absolute terms.
  real scale_floor = real(1e-3);
  /// 0 probes every element; otherwise an evenly strided subset per input.
  std::size_t max_probes_per_input = 0;
};

struct GradCheckEntry {
  std::size_t input = 0;
  std::size_t index = 0;
  real analytic = 0;
  real numeric = 0;
  real rel_error = 0;
  bool skipped = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  real max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  /// False when two evaluations at the same point disagree.
  bool reliable = true;
  bool passed = false;
};

/// Builds a scalar on a fresh graph from the given input nodes.
using ScalarClosure = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares backward() against central differences for every probed element
/// of every input.
GradCheckReport grad_check(const ScalarClosure& f, const std::vector<Tensor4>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace cdon
