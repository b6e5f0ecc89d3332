#pragma once

#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cdon/geometry.hpp"

namespace cdon {

/// Thrown when a subset has no evaluated ground truth, so the miss rate is undefined.
class NoGroundTruthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Height (pixels, full box) and visibility ranges, both inclusive.
struct SubsetSpec {
  std::string name;
  real height_lo = 0;
  real height_hi = std::numeric_limits<real>::infinity();
  real vis_lo = 0;
  real vis_hi = 1;

  static SubsetSpec reasonable();
  static SubsetSpec small();
  static SubsetSpec occlusion();
  static SubsetSpec all();
  static SubsetSpec medium();
  static SubsetSpec heavy();
  /// Case-insensitive preset lookup. Throws ConfigError for unknown names.
  static SubsetSpec by_name(const std::string& name);
  static std::vector<SubsetSpec> presets();

  bool contains(const Annotation& a) const;
  void validate() const;
};

struct Detection {
  std::string image_id;
  Box box;
  real score = 0;
};

/// Ground truth of one image.
struct ImageRecord {
  std::string image_id;
  std::string file;
  int width = 0;
  int height = 0;
  std::vector<Annotation> objects;
};

struct SubsetSplit {
  std::vector<Box> evaluated;
  std::vector<Box> ignored;
};

/// Objects inside both ranges and not ignore-flagged are evaluated; the rest are ignored.
SubsetSplit filter_subset(std::span<const Annotation> annotations, const SubsetSpec& spec);

enum class MatchKind { tp, fp, ignored };

/// Per-image matching in processing order (score descending, index ascending).
struct ImageOutcome {
  std::vector<real> scores;
  std::vector<MatchKind> kinds;
  /// For tp entries, the matched evaluated gt; -1 otherwise.
  std::vector<int> matched_gt;
  int num_gt = 0;
  int missed = 0;

  int tp() const;
  int fp() const;
};

/// Greedy matching: each detection takes the unmatched evaluated gt with the
/// highest IoU >= iou_thresh (lowest index on ties); failing that it is
/// ignored when it overlaps an ignored gt by >= iou_thresh, otherwise a false
/// positive.
ImageOutcome match_detections(std::span<const Detection> dets, std::span<const Box> evaluated,
                              std::span<const Box> ignored, real iou_thresh = real(0.5));

struct CurvePoint {
  real fppi = 0;
  real miss_rate = 1;
};

struct EvalCurve {
  std::vector<CurvePoint> points;
  real mr2 = 100;
};

/// Sweeps the threshold over every distinct score of non-ignored detections,
/// high to low. With no such detection the curve is the single point (0, 1).
/// Throws NoGroundTruthError when no image has an evaluated gt.
EvalCurve fppi_mr_curve(std::span<const ImageOutcome> images);

/// 9 references 10^(-2 + i/4); each takes the miss rate of the last point with
/// fppi <= reference (1 if none), clamped to >= 1e-6. Returns the geometric
/// mean in percent.
real log_avg_miss_rate(std::span<const CurvePoint> points);
real log_avg_miss_rate(const EvalCurve& curve);

/// Filters, matches and sweeps in one call. Detections for unknown image ids
/// throw FormatError.
EvalCurve evaluate_subset(std::span<const ImageRecord> images, std::span<const Detection> dets,
                          const SubsetSpec& spec, real iou_thresh = real(0.5));

/// JSON-lines {image_id, x1, y1, x2, y2, score}.
std::vector<Detection> read_detections(std::istream& in);
void write_detections(std::ostream& out, std::span<const Detection> dets);

/// JSON-lines {image_id, file, width, height, objects: [{full: [x1,y1,x2,y2],
/// visible: [...], visibility, ignore}]}.
std::vector<ImageRecord> read_annotations(std::istream& in);
void write_annotations(std::ostream& out, std::span<const ImageRecord> images);

/// "fppi,miss_rate" header and rows.
void write_curve_csv(std::ostream& out, const EvalCurve& curve);
std::vector<CurvePoint> read_curve_csv(std::istream& in);

}  // namespace cdon
