#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdon/eval.hpp"
#include "cdon/network.hpp"
#include "cdon/scene.hpp"

namespace cdon {

/// Detections for every sample, in dataset order. Images run in parallel.
/// When `gates` is set it receives the first image's per-tap gate tensors.
std::vector<Detection> run_detector(Network& net, std::span<const Sample> data,
                                    std::vector<Tensor4>* gates = nullptr);

std::vector<ImageRecord> records_of(std::span<const Sample> data);

/// Curve for one subset, or the reason none exists.
struct SubsetResult {
  SubsetSpec spec;
  std::optional<EvalCurve> curve;
  std::string error;

  /// MR-2 in percent; NaN without a curve.
  real mr2() const;
};

SubsetResult evaluate_named(std::span<const ImageRecord> images, std::span<const Detection> dets,
                            const SubsetSpec& spec);

/// "<subset>,<MR-2 %>" or "<subset>,no evaluated ground truths".
std::string summary_line(const SubsetResult& r);

/// Rows: variants; columns: subsets. Cells hold MR-2 % or "n/a".
struct ComparisonTable {
  std::vector<std::string> subsets;
  std::vector<std::string> variants;
  std::vector<std::vector<SubsetResult>> cells;
};
void write_table_csv(std::ostream& out, const ComparisonTable& table);
void write_table_text(std::ostream& out, const ComparisonTable& table);

enum class AblationAxis { squeeze_ratio, gate_kind, deformable };
/// Accepts "squeeze_ratio" (or "squeeze"), "gate_kind" (or "gate"), "deformable".
AblationAxis parse_axis(const std::string& text);

struct Variant {
  std::string name;
  RunConfig config;
};

/// squeeze_ratio: r in {1,2,4,8,16,32}; gate_kind: spatio, channel, none
/// (none taps only block 5); deformable: on, off.
std::vector<Variant> ablation_variants(const RunConfig& base, AblationAxis axis);

struct LabelledCurve {
  std::string label;
  std::vector<CurvePoint> points;
};

/// Log-log miss-rate vs FPPI plot.
void write_curves_svg(std::ostream& out, std::span<const LabelledCurve> curves);

}  // namespace cdon
