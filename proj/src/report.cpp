#include "cdon/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <ostream>

#include "cdon/parallel.hpp"

namespace cdon {

std::vector<Detection> run_detector(Network& net, std::span<const Sample> data,
                                    std::vector<Tensor4>* gates) {
  std::vector<InferenceResult> per_image(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    per_image[i] = detect(net, data[i].image, data[i].record.image_id);
  });
  std::vector<Detection> out;
  for (const InferenceResult& r : per_image) out.insert(out.end(), r.detections.begin(), r.detections.end());
  if (gates != nullptr && !per_image.empty()) *gates = per_image.front().gates;
  return out;
}

std::vector<ImageRecord> records_of(std::span<const Sample> data) {
  std::vector<ImageRecord> out;
  out.reserve(data.size());
  for (const Sample& s : data) out.push_back(s.record);
  return out;
}

real SubsetResult::mr2() const {
  return curve ? curve->mr2 : std::numeric_limits<real>::quiet_NaN();
}

SubsetResult evaluate_named(std::span<const ImageRecord> images, std::span<const Detection> dets,
                            const SubsetSpec& spec) {
  SubsetResult r;
  r.spec = spec;
  try {
    r.curve = evaluate_subset(images, dets, spec);
  } catch (const NoGroundTruthError& e) {
    r.error = e.what();
  }
  return r;
}

std::string summary_line(const SubsetResult& r) {
  if (!r.curve) return r.spec.name + "," + r.error;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(r.curve->mr2));
  return r.spec.name + "," + buf;
}

namespace {

std::string cell(const SubsetResult& r) {
  if (!r.curve) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(r.curve->mr2));
  return buf;
}

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_table_csv(std::ostream& out, const ComparisonTable& table) {
  out << "variant";
  for (const std::string& s : table.subsets) out << ',' << s;
  out << '\n';
  for (std::size_t v = 0; v < table.variants.size(); ++v) {
    out << table.variants[v];
    for (const SubsetResult& r : table.cells[v]) out << ',' << cell(r);
    out << '\n';
  }
}

void write_table_text(std::ostream& out, const ComparisonTable& table) {
  std::size_t first = 7;
  for (const std::string& v : table.variants) first = std::max(first, v.size());
  out << std::left << std::setw(static_cast<int>(first) + 2) << "variant";
  for (const std::string& s : table.subsets) out << std::right << std::setw(12) << s;
  out << '\n';
  for (std::size_t v = 0; v < table.variants.size(); ++v) {
    out << std::left << std::setw(static_cast<int>(first) + 2) << table.variants[v];
    for (const SubsetResult& r : table.cells[v]) out << std::right << std::setw(12) << cell(r);
    out << '\n';
  }
}

AblationAxis parse_axis(const std::string& text) {
  if (text == "squeeze_ratio" || text == "squeeze") return AblationAxis::squeeze_ratio;
  if (text == "gate_kind" || text == "gate") return AblationAxis::gate_kind;
  if (text == "deformable") return AblationAxis::deformable;
  throw ConfigError("unknown ablation axis '" + text + "' (squeeze_ratio, gate_kind, deformable)");
}

std::vector<Variant> ablation_variants(const RunConfig& base, AblationAxis axis) {
  std::vector<Variant> out;
  switch (axis) {
    case AblationAxis::squeeze_ratio:
      for (int r : {1, 2, 4, 8, 16, 32}) {
        RunConfig c = base;
        c.train.squeeze_ratio = r;
        out.push_back({"r=" + std::to_string(r), c});
      }
      break;
    case AblationAxis::gate_kind:
      for (GateKind kind : {GateKind::spatio, GateKind::channel, GateKind::none}) {
        RunConfig c = base;
        c.train.gate_kind = kind;
        if (kind == GateKind::none) c.train.taps = {5};
        out.push_back({to_string(kind), c});
      }
      break;
    case AblationAxis::deformable:
      for (bool on : {true, false}) {
        RunConfig c = base;
        c.train.use_deformable = on;
        out.push_back({on ? "deformable" : "psroi", c});
      }
      break;
  }
  for (Variant& v : out) v.config.train.validate();
  return out;
}

void write_curves_svg(std::ostream& out, std::span<const LabelledCurve> curves) {
  const double W = 640, H = 480, left = 70, right = 200, top = 30, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  const double fx_lo = -3, fx_hi = 1, my_lo = std::log10(0.05), my_hi = 0;
  auto px = [&](double fppi) {
    const double l = std::clamp(std::log10(std::max(fppi, 1e-3)), fx_lo, fx_hi);
    return left + (l - fx_lo) / (fx_hi - fx_lo) * pw;
  };
  auto py = [&](double mr) {
    const double l = std::clamp(std::log10(std::max(mr, 0.05)), my_lo, my_hi);
    return top + (my_hi - l) / (my_hi - my_lo) * ph;
  };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int e = -3; e <= 1; ++e) {
    const double x = px(std::pow(10.0, e));
    out << "<line x1=\"" << x << "\" y1=\"" << top << "\" x2=\"" << x << "\" y2=\"" << top + ph
        << "\" stroke=\"#ddd\"/>\n<text x=\"" << x << "\" y=\"" << top + ph + 16
        << "\" text-anchor=\"middle\">1e" << e << "</text>\n";
  }
  for (double mr : {0.05, 0.1, 0.2, 0.3, 0.5, 0.64, 0.8, 1.0}) {
    const double y = py(mr);
    out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 6 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\">" << mr << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 20
      << "\" text-anchor=\"middle\">false positives per image</text>\n";
  out << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << top + ph / 2 << ")\">miss rate</text>\n";

  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* colour = colours[c % (sizeof colours / sizeof colours[0])];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    double prev_y = py(1.0);
    out << px(1e-3) << ',' << prev_y;
    for (const CurvePoint& p : curves[c].points) {
      const double x = px(p.fppi), y = py(p.miss_rate);
      out << ' ' << x << ',' << prev_y << ' ' << x << ',' << y;
      prev_y = y;
    }
    out << ' ' << px(10) << ',' << prev_y << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(c);
    char mr[32];
    std::snprintf(mr, sizeof mr, "%.2f%%", static_cast<double>(log_avg_miss_rate(curves[c].points)));
    out << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32
        << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << mr << ' ' << xml_escape(curves[c].label)
        << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace cdon
