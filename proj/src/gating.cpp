#include "cdon/gating.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace cdon {

const char* to_string(GateKind kind) {
  switch (kind) {
    case GateKind::spatio:
      return "spatio";
    case GateKind::channel:
      return "channel";
    case GateKind::none:
      return "none";
  }
  return "?";
}

GateKind parse_gate_kind(const std::string& text) {
  if (text == "spatio") return GateKind::spatio;
  if (text == "channel") return GateKind::channel;
  if (text == "none") return GateKind::none;
  throw ConfigError("unknown gate kind '" + text + "'");
}

SqueezeParams SqueezeParams::make(int c_in, real ratio) {
  if (!(ratio >= 1)) throw ConfigError("squeeze ratio must be >= 1");
  const real out = c_in / ratio;
  const int c_out = static_cast<int>(std::lround(out));
  if (c_out < 1 || std::abs(out - c_out) > 1e-9) {
    throw ConfigError("squeeze: " + std::to_string(c_in) + " channels not divisible by ratio " +
                      std::to_string(ratio));
  }
  SqueezeParams p;
  p.conv = ConvParams::zeros(c_out, c_in, 1, 1);
  p.ratio = ratio;
  return p;
}

int GateParams::default_hidden_dim(int input_dim) { return std::max(input_dim / 4, 4); }

GateParams GateParams::make(GateKind kind, int channels, int pooled_h, int pooled_w, int hidden) {
  GateParams p;
  p.kind = kind;
  p.channels = channels;
  p.pooled_h = pooled_h;
  p.pooled_w = pooled_w;
  if (kind == GateKind::none) return p;
  const int in_dim = kind == GateKind::spatio ? pooled_h * pooled_w : channels;
  p.hidden_dim = hidden > 0 ? hidden : default_hidden_dim(in_dim);
  if (kind == GateKind::spatio) {
    p.conv = ConvParams::zeros(1, channels, 1, 1);
  } else {
    p.dw_kernels = Tensor4({channels, 1, pooled_h, pooled_w}, 0);
    p.dw_bias = Tensor4({1, channels, 1, 1}, 0);
    p.dw_kernels.set_requires_grad(true);
    p.dw_bias.set_requires_grad(true);
  }
  p.fc1 = DenseParams::zeros(p.hidden_dim, in_dim);
  p.fc2 = DenseParams::zeros(in_dim, p.hidden_dim);
  return p;
}

std::size_t GateParams::param_count() const {
  if (kind == GateKind::none) return 0;
  const std::size_t stage =
      kind == GateKind::spatio ? conv.param_count() : dw_kernels.size() + dw_bias.size();
  return stage + fc_param_count();
}

std::size_t LayerTap::param_count() const {
  return squeeze.conv.param_count() + (forced_gate ? 0 : gate.param_count());
}

Tensor4 squeeze(const Tensor4& features, const SqueezeParams& p) { return conv2d(features, p.conv); }

Tensor4 gate_forward(const Tensor4& pooled, const GateParams& p) {
  Graph g;
  GateParams copy = p;
  const Var out = gate_forward(g, g.constant(pooled), copy);
  return g.value(out);
}

Tensor4 modulate(const Tensor4& pooled, const Tensor4& gate) { return broadcast_mul(pooled, gate); }

Tensor4 gated_multilayer_extract(std::span<const LayerTap> taps,
                                 std::span<const Tensor4> backbone_maps,
                                 std::span<const Box> rois) {
  Graph g;
  std::vector<LayerTap> copy(taps.begin(), taps.end());
  std::vector<Var> maps;
  for (const Tensor4& m : backbone_maps) maps.push_back(g.constant(m));
  return g.value(gated_multilayer_extract(g, copy, maps, rois).features);
}

Var squeeze(Graph& g, Var features, SqueezeParams& p) { return conv2d(g, features, p.conv); }

Var gate_forward(Graph& g, Var pooled, GateParams& p) {
  const Shape s = g.value(pooled).shape();
  if (p.kind == GateKind::none) throw UsageError("gate_forward: gate kind none has no unit");
  if (s.c != p.channels || s.h != p.pooled_h || s.w != p.pooled_w) {
    throw DimensionError("gate_forward: pooled " + s.str() + " does not match gate (" +
                         std::to_string(p.channels) + "," + std::to_string(p.pooled_h) + "," +
                         std::to_string(p.pooled_w) + ")");
  }
  if (p.kind == GateKind::spatio) {
    Var m = relu(g, conv2d(g, pooled, p.conv));
    Var h = relu(g, dense(g, m, p.fc1));
    Var o = sigmoid(g, dense(g, h, p.fc2));
    return reshape(g, o, {s.n, 1, s.h, s.w});
  }
  Var v = relu(g, depthwise_conv2d(g, pooled, g.param(p.dw_kernels), g.param(p.dw_bias)));
  Var h = relu(g, dense(g, v, p.fc1));
  return sigmoid(g, dense(g, h, p.fc2));
}

Var modulate(Graph& g, Var pooled, Var gate) { return broadcast_mul(g, pooled, gate); }

GatedFeatures gated_multilayer_extract(Graph& g, std::span<LayerTap> taps,
                                       std::span<const Var> backbone_maps,
                                       std::span<const Box> rois) {
  if (taps.empty()) throw ConfigError("gated_multilayer_extract: no taps");
  if (backbone_maps.size() != taps.size()) {
    throw ConfigError("gated_multilayer_extract: one backbone map per tap required");
  }
  for (const LayerTap& t : taps) {
    if (t.pooled_h != taps.front().pooled_h || t.pooled_w != taps.front().pooled_w) {
      throw ConfigError("gated_multilayer_extract: taps must share the pooled size");
    }
  }
  GatedFeatures out;
  std::vector<Var> parts;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    LayerTap& tap = taps[t];
    std::vector<RoI> scaled;
    scaled.reserve(rois.size());
    for (const Box& b : rois) scaled.push_back({b, real(1) / tap.stride});
    const Var squeezed = squeeze(g, backbone_maps[t], tap.squeeze);
    const Var pooled = roi_max_pool(g, squeezed, scaled, tap.pooled_h, tap.pooled_w);
    if (tap.forced_gate) {
      const Shape s = g.value(pooled).shape();
      const Var gate = g.constant(Tensor4({s.n, s.c, 1, 1}, *tap.forced_gate));
      parts.push_back(modulate(g, pooled, gate));
      out.gates.push_back(Var{});
    } else if (tap.gate.kind == GateKind::none) {
      parts.push_back(pooled);
      out.gates.push_back(Var{});
    } else {
      const Var gate = gate_forward(g, pooled, tap.gate);
      parts.push_back(modulate(g, pooled, gate));
      out.gates.push_back(gate);
    }
  }
  out.features = parts.size() == 1 ? parts.front() : concat_channels(g, parts);
  return out;
}

void write_gate_csv(std::ostream& out, std::span<const LayerTap> taps,
                    std::span<const Tensor4> gates, int roi) {
  out << "tap,index,gate\n";
  for (std::size_t t = 0; t < taps.size() && t < gates.size(); ++t) {
    const Tensor4& gt = gates[t];
    if (gt.empty()) continue;
    const std::size_t per_roi = gt.size() / gt.n();
    const real* base = gt.ptr() + per_roi * roi;
    for (std::size_t i = 0; i < per_roi; ++i) {
      out << taps[t].layer_name << ',' << i << ',' << base[i] << '\n';
    }
  }
}

}  // namespace cdon
