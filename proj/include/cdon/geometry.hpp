#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cdon/common.hpp"

namespace cdon {

using Rng = std::mt19937_64;

/// Axis-aligned corner-coded box in image pixels.
struct Box {
  real x1 = 0;
  real y1 = 0;
  real x2 = 0;
  real y2 = 0;

  real width() const { return x2 - x1; }
  real height() const { return y2 - y1; }
  real area() const { return width() > 0 && height() > 0 ? width() * height() : real(0); }
  real cx() const { return (x1 + x2) / 2; }
  real cy() const { return (y1 + y2) / 2; }
  bool valid() const { return x2 >= x1 && y2 >= y1; }
  bool operator==(const Box&) const = default;
};

/// Ground-truth instance: full extent, visible part, and ignore flag.
struct Annotation {
  Box full;
  Box visible;
  real visibility = 1;
  bool ignore = false;

  /// Computes visibility = area(visible) / area(full).
  static Annotation make(const Box& full, const Box& visible, bool ignore = false);
};

struct AnchorConfig {
  real ratio = real(0.41);
  std::vector<real> scales = geometric_scales(32, 512, 9);
  int stride = 16;

  /// `count` heights from `lo` to `hi` with a constant ratio between neighbours.
  static std::vector<real> geometric_scales(real lo, real hi, int count);
  /// Throws ConfigError unless ratio > 0, stride > 0 and scales strictly increase.
  void validate() const;
};

enum class Label : int { negative = 0, positive = 1, ignore = -1 };

/// (dx, dy, dw, dh) in center / log-size parameterization.
using Deltas = std::array<real, 4>;

struct LabeledProposal {
  Box box;
  Label label = Label::negative;
  std::optional<std::size_t> matched_gt;
  std::optional<Deltas> target_deltas;
  real max_iou = 0;
};

struct AssignThresholds {
  real positive = real(0.7);
  real negative = real(0.3);
};

/// Intersection over union; 0 for disjoint or zero-area boxes.
real iou(const Box& a, const Box& b);

/// map_h * map_w * scales.size() anchors ordered by (row, column, scale), each
/// centred at ((j + 0.5) * stride, (i + 0.5) * stride) with height s and
/// width ratio * s.
std::vector<Box> generate_anchors(int map_h, int map_w, const AnchorConfig& cfg);

/// Binary labels by overlap with non-ignore ground truth:
///  - positive when IoU > thresholds.positive, or when the proposal attains
///    the best IoU (> 0) of some gt (all tied proposals);
///  - ignore when the best overlap is with an ignore region;
///  - negative when the max IoU < thresholds.negative;
///  - ignore otherwise.
/// matched_gt is the argmax gt (lowest index on ties).
std::vector<LabeledProposal> assign_labels(std::span<const Box> proposals,
                                           std::span<const Annotation> gts,
                                           const AssignThresholds& thresholds = {});

/// Throws DimensionError when either box has non-positive size.
Deltas encode_deltas(const Box& anchor, const Box& gt);
Box decode_deltas(const Box& anchor, const Deltas& d);

Box clip_box(const Box& b, real image_w, real image_h);

/// Greedy NMS by descending score (lower index first on ties). Returns kept
/// indices in selection order.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const real> scores,
                             real iou_thresh);

/// Random subset of at most `total` labelled proposals: positives capped at
/// ceil(pos_fraction * total), the rest negatives. Ignore labels are never
/// drawn. Returned indices are sorted ascending.
std::vector<std::size_t> sample_minibatch(std::span<const LabeledProposal> labeled,
                                          std::size_t total, real pos_fraction, Rng& rng);

}  // namespace cdon
