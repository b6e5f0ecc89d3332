#include "cdon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cdon {

namespace {
// exp() argument cap for decoded sizes (a 1000/16 upscale).
const real kMaxLogScale = std::log(real(1000) / 16);
}  // namespace

Annotation Annotation::make(const Box& full, const Box& visible, bool ignore) {
  Annotation a;
  a.full = full;
  a.visible = visible;
  a.ignore = ignore;
  const real area = full.area();
  a.visibility = area > 0 ? visible.area() / area : real(0);
  return a;
}

std::vector<real> AnchorConfig::geometric_scales(real lo, real hi, int count) {
  std::vector<real> out;
  if (count == 1) return {lo};
  const real step = std::pow(hi / lo, real(1) / (count - 1));
  for (int i = 0; i < count; ++i) out.push_back(lo * std::pow(step, real(i)));
  out.back() = hi;
  return out;
}

void AnchorConfig::validate() const {
  if (!(ratio > 0)) throw ConfigError("anchor ratio must be positive");
  if (stride <= 0) throw ConfigError("anchor stride must be positive");
  if (scales.empty()) throw ConfigError("anchor scales must not be empty");
  for (std::size_t i = 1; i < scales.size(); ++i) {
    if (!(scales[i] > scales[i - 1])) throw ConfigError("anchor scales must strictly increase");
  }
}

real iou(const Box& a, const Box& b) {
  const real aa = a.area(), ab = b.area();
  if (aa <= 0 || ab <= 0) return 0;
  const real iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const real ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0;
  const real inter = iw * ih;
  return inter / (aa + ab - inter);
}

std::vector<Box> generate_anchors(int map_h, int map_w, const AnchorConfig& cfg) {
  cfg.validate();
  if (map_h <= 0 || map_w <= 0) throw DimensionError("generate_anchors: map dims must be positive");
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(map_h) * map_w * cfg.scales.size());
  for (int i = 0; i < map_h; ++i) {
    for (int j = 0; j < map_w; ++j) {
      const real cx = (j + real(0.5)) * cfg.stride;
      const real cy = (i + real(0.5)) * cfg.stride;
      for (real s : cfg.scales) {
        const real w = cfg.ratio * s;
        anchors.push_back({cx - w / 2, cy - s / 2, cx + w / 2, cy + s / 2});
      }
    }
  }
  return anchors;
}

std::vector<LabeledProposal> assign_labels(std::span<const Box> proposals,
                                           std::span<const Annotation> gts,
                                           const AssignThresholds& thresholds) {
  const std::size_t np = proposals.size(), ng = gts.size();
  std::vector<LabeledProposal> out(np);
  std::vector<real> overlaps(np * ng, 0);
  std::vector<real> gt_best(ng, 0);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t k = 0; k < ng; ++k) {
      const real v = iou(proposals[p], gts[k].full);
      overlaps[p * ng + k] = v;
      if (!gts[k].ignore) gt_best[k] = std::max(gt_best[k], v);
    }
  }

  for (std::size_t p = 0; p < np; ++p) {
    LabeledProposal& lp = out[p];
    lp.box = proposals[p];
    real best = 0, best_ignore = 0;
    std::optional<std::size_t> arg;
    bool is_best_for_some_gt = false;
    for (std::size_t k = 0; k < ng; ++k) {
      const real v = overlaps[p * ng + k];
      if (gts[k].ignore) {
        best_ignore = std::max(best_ignore, v);
        continue;
      }
      if (!arg || v > best) {
        best = v;
        arg = k;
      }
      if (gt_best[k] > 0 && v == gt_best[k]) is_best_for_some_gt = true;
    }
    lp.max_iou = best;
    lp.matched_gt = arg;
    if (arg && (best > thresholds.positive || is_best_for_some_gt)) {
      lp.label = Label::positive;
      lp.target_deltas = encode_deltas(proposals[p], gts[*arg].full);
    } else if (best_ignore > best) {
      lp.label = Label::ignore;
    } else if (best < thresholds.negative) {
      lp.label = Label::negative;
    } else {
      lp.label = Label::ignore;
    }
  }
  return out;
}

Deltas encode_deltas(const Box& anchor, const Box& gt) {
  const real aw = anchor.width(), ah = anchor.height();
  const real gw = gt.width(), gh = gt.height();
  if (!(aw > 0 && ah > 0)) throw DimensionError("encode_deltas: anchor must have positive size");
  if (!(gw > 0 && gh > 0)) throw DimensionError("encode_deltas: gt must have positive size");
  return {(gt.cx() - anchor.cx()) / aw, (gt.cy() - anchor.cy()) / ah, std::log(gw / aw),
          std::log(gh / ah)};
}

Box decode_deltas(const Box& anchor, const Deltas& d) {
  const real aw = anchor.width(), ah = anchor.height();
  const real cx = anchor.cx() + d[0] * aw;
  const real cy = anchor.cy() + d[1] * ah;
  const real w = aw * std::exp(std::min(d[2], kMaxLogScale));
  const real h = ah * std::exp(std::min(d[3], kMaxLogScale));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

Box clip_box(const Box& b, real image_w, real image_h) {
  auto clamp = [](real v, real hi) { return std::clamp(v, real(0), hi); };
  return {clamp(b.x1, image_w), clamp(b.y1, image_h), clamp(b.x2, image_w), clamp(b.y2, image_h)};
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const real> scores,
                             real iou_thresh) {
  if (boxes.size() != scores.size()) throw DimensionError("nms: boxes/scores length mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_thresh) suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<std::size_t> sample_minibatch(std::span<const LabeledProposal> labeled,
                                          std::size_t total, real pos_fraction, Rng& rng) {
  if (total == 0) throw UsageError("sample_minibatch: total must be positive");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (labeled[i].label == Label::positive) pos.push_back(i);
    if (labeled[i].label == Label::negative) neg.push_back(i);
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const auto cap = static_cast<std::size_t>(std::ceil(pos_fraction * static_cast<real>(total)));
  const std::size_t take_pos = std::min({pos.size(), cap, total});
  const std::size_t take_neg = std::min(neg.size(), total - take_pos);
  std::vector<std::size_t> out(pos.begin(), pos.begin() + take_pos);
  out.insert(out.end(), neg.begin(), neg.begin() + take_neg);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace cdon
