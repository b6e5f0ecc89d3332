#include "cdon/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace cdon {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("expected [x1, y1, x2, y2]");
  return {j[0].get<real>(), j[1].get<real>(), j[2].get<real>(), j[3].get<real>()};
}

template <class F>
void for_each_json_line(std::istream& in, F&& f) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

SubsetSpec SubsetSpec::reasonable() { return {"Reasonable", 50, INFINITY, real(0.65), 1}; }
SubsetSpec SubsetSpec::small() { return {"Small", 50, 75, real(0.65), 1}; }
SubsetSpec SubsetSpec::occlusion() { return {"Occlusion", 50, INFINITY, real(0.2), real(0.65)}; }
SubsetSpec SubsetSpec::all() { return {"All", 20, INFINITY, real(0.2), 1}; }
SubsetSpec SubsetSpec::medium() { return {"Medium", 30, 80, real(0.2), 1}; }
SubsetSpec SubsetSpec::heavy() { return {"Heavy", 50, INFINITY, real(0.2), real(0.65)}; }

std::vector<SubsetSpec> SubsetSpec::presets() {
  return {reasonable(), small(), occlusion(), all(), medium(), heavy()};
}

SubsetSpec SubsetSpec::by_name(const std::string& name) {
  for (const SubsetSpec& s : presets()) {
    if (lower(s.name) == lower(name)) return s;
  }
  throw ConfigError("unknown subset '" + name + "'");
}

bool SubsetSpec::contains(const Annotation& a) const {
  const real h = a.full.height();
  return h >= height_lo && h <= height_hi && a.visibility >= vis_lo && a.visibility <= vis_hi;
}

void SubsetSpec::validate() const {
  if (!(height_lo <= height_hi) || !(vis_lo <= vis_hi)) {
    throw ConfigError("subset " + name + ": range lower bound exceeds upper bound");
  }
}

SubsetSplit filter_subset(std::span<const Annotation> annotations, const SubsetSpec& spec) {
  SubsetSplit split;
  for (const Annotation& a : annotations) {
    if (!a.ignore && spec.contains(a)) {
      split.evaluated.push_back(a.full);
    } else {
      split.ignored.push_back(a.full);
    }
  }
  return split;
}

int ImageOutcome::tp() const {
  return static_cast<int>(std::count(kinds.begin(), kinds.end(), MatchKind::tp));
}

int ImageOutcome::fp() const {
  return static_cast<int>(std::count(kinds.begin(), kinds.end(), MatchKind::fp));
}

ImageOutcome match_detections(std::span<const Detection> dets, std::span<const Box> evaluated,
                              std::span<const Box> ignored, real iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  ImageOutcome out;
  out.num_gt = static_cast<int>(evaluated.size());
  std::vector<bool> taken(evaluated.size(), false);
  for (std::size_t idx : order) {
    const Box& box = dets[idx].box;
    int best = -1;
    real best_iou = iou_thresh;
    for (std::size_t gi = 0; gi < evaluated.size(); ++gi) {
      if (taken[gi]) continue;
      const real o = iou(box, evaluated[gi]);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<int>(gi);
        best_iou = o;
      }
    }
    MatchKind kind = MatchKind::fp;
    if (best >= 0) {
      taken[best] = true;
      kind = MatchKind::tp;
    } else {
      for (const Box& ig : ignored) {
        if (iou(box, ig) >= iou_thresh) {
          kind = MatchKind::ignored;
          break;
        }
      }
    }
    out.scores.push_back(dets[idx].score);
    out.kinds.push_back(kind);
    out.matched_gt.push_back(best);
  }
  out.missed = out.num_gt - out.tp();
  return out;
}

EvalCurve fppi_mr_curve(std::span<const ImageOutcome> images) {
  if (images.empty()) throw UsageError("fppi_mr_curve: no images");
  long total_gt = 0;
  struct Entry {
    real score;
    bool tp;
  };
  std::vector<Entry> entries;
  for (const ImageOutcome& im : images) {
    total_gt += im.num_gt;
    for (std::size_t i = 0; i < im.kinds.size(); ++i) {
      if (im.kinds[i] != MatchKind::ignored) {
        entries.push_back({im.scores[i], im.kinds[i] == MatchKind::tp});
      }
    }
  }
  if (total_gt == 0) throw NoGroundTruthError("no evaluated ground truths");
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.score > b.score; });
  const real n_img = static_cast<real>(images.size());
  EvalCurve curve;
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    (entries[i].tp ? tp : fp) += 1;
    if (i + 1 < entries.size() && entries[i + 1].score == entries[i].score) continue;
    curve.points.push_back({fp / n_img, 1 - static_cast<real>(tp) / static_cast<real>(total_gt)});
  }
  if (curve.points.empty()) curve.points.push_back({0, 1});
  curve.mr2 = log_avg_miss_rate(curve);
  return curve;
}

real log_avg_miss_rate(std::span<const CurvePoint> points) {
  if (points.empty()) throw UsageError("log_avg_miss_rate: empty curve");
  real log_sum = 0;
  for (int i = 0; i < 9; ++i) {
    const real ref = std::pow(real(10), real(-2) + real(i) / 4);
    real mr = 1;
    for (const CurvePoint& p : points) {
      if (p.fppi <= ref) mr = p.miss_rate;
    }
    log_sum += std::log(std::max(mr, real(1e-6)));
  }
  return 100 * std::exp(log_sum / 9);
}

real log_avg_miss_rate(const EvalCurve& curve) { return log_avg_miss_rate(curve.points); }

EvalCurve evaluate_subset(std::span<const ImageRecord> images, std::span<const Detection> dets,
                          const SubsetSpec& spec, real iou_thresh) {
  spec.validate();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < images.size(); ++i) index.emplace(images[i].image_id, i);
  std::vector<std::vector<Detection>> per_image(images.size());
  for (const Detection& d : dets) {
    auto it = index.find(d.image_id);
    if (it == index.end()) throw FormatError("detection for unknown image '" + d.image_id + "'");
    per_image[it->second].push_back(d);
  }
  std::vector<ImageOutcome> outcomes;
  outcomes.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const SubsetSplit split = filter_subset(images[i].objects, spec);
    outcomes.push_back(match_detections(per_image[i], split.evaluated, split.ignored, iou_thresh));
  }
  return fppi_mr_curve(outcomes);
}

std::vector<Detection> read_detections(std::istream& in) {
  std::vector<Detection> out;
  for_each_json_line(in, [&](const json& j) {
    Detection d;
    d.image_id = j.at("image_id").get<std::string>();
    d.box = {j.at("x1").get<real>(), j.at("y1").get<real>(), j.at("x2").get<real>(),
             j.at("y2").get<real>()};
    d.score = j.at("score").get<real>();
    if (!std::isfinite(d.score)) throw FormatError("non-finite score");
    out.push_back(std::move(d));
  });
  return out;
}

void write_detections(std::ostream& out, std::span<const Detection> dets) {
  for (const Detection& d : dets) {
    json j = {{"image_id", d.image_id}, {"x1", d.box.x1}, {"y1", d.box.y1},
              {"x2", d.box.x2},         {"y2", d.box.y2}, {"score", d.score}};
    out << j.dump() << '\n';
  }
}

std::vector<ImageRecord> read_annotations(std::istream& in) {
  std::vector<ImageRecord> out;
  for_each_json_line(in, [&](const json& j) {
    ImageRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.file = j.value("file", std::string{});
    r.width = j.value("width", 0);
    r.height = j.value("height", 0);
    for (const json& o : j.at("objects")) {
      Annotation a;
      a.full = box_from(o.at("full"));
      a.visible = o.contains("visible") ? box_from(o.at("visible")) : a.full;
      a.visibility = o.contains("visibility") ? o.at("visibility").get<real>()
                                              : Annotation::make(a.full, a.visible).visibility;
      a.ignore = o.value("ignore", false);
      r.objects.push_back(a);
    }
    out.push_back(std::move(r));
  });
  return out;
}

void write_annotations(std::ostream& out, std::span<const ImageRecord> images) {
  for (const ImageRecord& r : images) {
    json objs = json::array();
    for (const Annotation& a : r.objects) {
      objs.push_back({{"full", box_json(a.full)},
                      {"visible", box_json(a.visible)},
                      {"visibility", a.visibility},
                      {"ignore", a.ignore}});
    }
    json j = {{"image_id", r.image_id}, {"file", r.file},   {"width", r.width},
              {"height", r.height},     {"objects", objs}};
    out << j.dump() << '\n';
  }
}

void write_curve_csv(std::ostream& out, const EvalCurve& curve) {
  const auto old = out.precision(std::numeric_limits<real>::max_digits10);
  out << "fppi,miss_rate\n";
  for (const CurvePoint& p : curve.points) out << p.fppi << ',' << p.miss_rate << '\n';
  out.precision(old);
}

std::vector<CurvePoint> read_curve_csv(std::istream& in) {
  std::vector<CurvePoint> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("fppi", 0) == 0) continue;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    CurvePoint p;
    char comma = 0;
    if (!(row >> p.fppi >> comma >> p.miss_rate) || comma != ',') {
      throw FormatError("curve csv line " + std::to_string(lineno) + ": expected fppi,miss_rate");
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace cdon
