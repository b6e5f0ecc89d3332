#include "cdon/network.hpp"

#include <algorithm>
#include <cmath>

namespace cdon {

namespace {

int tap_stride(int block) { return block >= 4 ? Network::kFeatureStride : 1 << block; }

void fill_normal(Tensor4& t, real stddev, std::uint64_t seed, const std::string& name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a64(name)),
                    static_cast<std::uint32_t>(fnv1a64(name) >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<real> dist(0, stddev);
  for (real& v : t.data()) v = dist(rng);
}

real he_std(const Tensor4& weight) {
  return std::sqrt(real(2) / static_cast<real>(weight.c() * weight.h() * weight.w()));
}

real pedestrian_prob(const Tensor4& cls, int row) {
  return sigmoid(cls(row, 1, 0, 0) - cls(row, 0, 0, 0));
}

Deltas deltas_row(const Tensor4& reg, int row) {
  return {reg(row, 0, 0, 0), reg(row, 1, 0, 0), reg(row, 2, 0, 0), reg(row, 3, 0, 0)};
}

constexpr real kMinBoxSide = 4;

// Rounded RoI projection must land on the stride-16 map: x1 / 16 rounds below
// the last cell only when x1 < width - 8.
bool poolable(const Box& b, int image_w, int image_h) {
  const real margin = real(Network::kFeatureStride) / 2;
  return b.width() >= kMinBoxSide && b.height() >= kMinBoxSide && b.x1 < image_w - margin &&
         b.y1 < image_h - margin;
}

}  // namespace

AnchorConfig Network::anchor_config() const {
  AnchorConfig a;
  a.ratio = cfg.anchor_ratio;
  a.scales = AnchorConfig::geometric_scales(cfg.anchor_min, cfg.anchor_max, cfg.anchor_count);
  a.stride = kFeatureStride;
  return a;
}

Network Network::build(const TrainConfig& cfg) {
  cfg.validate();
  Network net;
  net.cfg = cfg;
  int in = 3;
  for (int b = 0; b < 5; ++b) {
    const int out = cfg.widths[b];
    net.blocks.push_back(b < 4 ? ConvParams::zeros(out, in, 3, 3, 2, 1, 1)
                               : ConvParams::zeros(out, in, 3, 3, 1, 2, 2));
    in = out;
  }
  const int top = cfg.widths[4];
  const int A = cfg.anchor_count;
  net.rpn_conv = ConvParams::zeros(64, top, 3, 3, 1, 1);
  net.rpn_cls = ConvParams::zeros(2 * A, 64, 1, 1);
  net.rpn_reg = ConvParams::zeros(4 * A, 64, 1, 1);

  int gated_channels = 0;
  for (int t : cfg.taps) {
    const int c_in = cfg.widths[t - 1];
    LayerTap tap;
    tap.layer_name = "block" + std::to_string(t);
    tap.stride = tap_stride(t);
    tap.squeeze = SqueezeParams::make(c_in, std::min(cfg.squeeze_ratio, c_in));
    tap.pooled_h = tap.pooled_w = cfg.pooled;
    tap.gate = GateParams::make(cfg.gate_kind, tap.squeeze.out_channels(), cfg.pooled, cfg.pooled);
    gated_channels += tap.squeeze.out_channels();
    net.taps.push_back(std::move(tap));
  }

  const int ps = 2 * cfg.k * cfg.k;
  net.occ_maps = ConvParams::zeros(ps, top, 1, 1);
  net.offset_branch = ConvParams::zeros(ps, top, 3, 3, 1, 1);
  net.coupling = CoupleParams::make(gated_channels, 2, cfg.couple_width, cfg.pooled, cfg.pooled);
  return net;
}

void Network::for_each_param(const std::function<void(const std::string&, Tensor4&)>& fn) {
  auto conv = [&](const std::string& name, ConvParams& p) {
    fn(name + ".weight", p.weight);
    fn(name + ".bias", p.bias);
  };
  auto fc = [&](const std::string& name, DenseParams& p) {
    fn(name + ".weight", p.weight);
    fn(name + ".bias", p.bias);
  };
  for (std::size_t b = 0; b < blocks.size(); ++b) conv("block" + std::to_string(b + 1), blocks[b]);
  conv("rpn.conv", rpn_conv);
  conv("rpn.cls", rpn_cls);
  conv("rpn.reg", rpn_reg);
  for (LayerTap& tap : taps) {
    const std::string prefix = "tap." + tap.layer_name;
    conv(prefix + ".squeeze", tap.squeeze.conv);
    GateParams& gp = tap.gate;
    if (gp.kind == GateKind::spatio) conv(prefix + ".gate.conv", gp.conv);
    if (gp.kind == GateKind::channel) {
      fn(prefix + ".gate.dw.weight", gp.dw_kernels);
      fn(prefix + ".gate.dw.bias", gp.dw_bias);
    }
    if (gp.kind != GateKind::none) {
      fc(prefix + ".gate.fc1", gp.fc1);
      fc(prefix + ".gate.fc2", gp.fc2);
    }
  }
  conv("occ.maps", occ_maps);
  if (cfg.use_deformable) conv("occ.offset", offset_branch);
  conv("couple.norm_gate", coupling.norm_gate);
  conv("couple.norm_occ", coupling.norm_occ);
  fc("head.cls", coupling.head_cls);
  fc("head.reg", coupling.head_reg);
}

std::vector<Tensor4*> Network::params() {
  std::vector<Tensor4*> out;
  for_each_param([&](const std::string&, Tensor4& t) { out.push_back(&t); });
  return out;
}

std::size_t Network::param_count() {
  std::size_t n = 0;
  for_each_param([&](const std::string&, Tensor4& t) { n += t.size(); });
  return n;
}

void Network::initialize(std::uint64_t seed) {
  for_each_param([&](const std::string& name, Tensor4& t) {
    const bool bias = name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (bias || name.rfind("occ.offset", 0) == 0) {
      t.fill(0);
      return;
    }
    const bool he = name.rfind("block", 0) == 0 || name.rfind("rpn.conv", 0) == 0 ||
                    name.find(".squeeze.") != std::string::npos ||
                    name.find(".gate.conv.") != std::string::npos ||
                    name.find(".gate.dw.") != std::string::npos ||
                    name.rfind("couple.", 0) == 0;
    fill_normal(t, he ? he_std(t) : cfg.init_std, seed, name);
  });
}

std::vector<Var> backbone_forward(Graph& g, Network& net, Var image) {
  std::vector<Var> out;
  Var x = image;
  for (ConvParams& block : net.blocks) {
    x = relu(g, conv2d(g, x, block));
    out.push_back(x);
  }
  return out;
}

HeadOutputs head_forward(Graph& g, Network& net, std::span<const Var> blocks,
                         std::span<const Box> rois) {
  const TrainConfig& cfg = net.cfg;
  std::vector<Var> tap_maps;
  for (int t : cfg.taps) tap_maps.push_back(blocks[static_cast<std::size_t>(t - 1)]);
  HeadOutputs out;
  out.gated = gated_multilayer_extract(g, net.taps, tap_maps, rois);

  std::vector<RoI> scaled;
  scaled.reserve(rois.size());
  for (const Box& b : rois) scaled.push_back({b, real(1) / Network::kFeatureStride});
  const Var top = blocks[4];
  const Var maps = conv2d(g, top, net.occ_maps);
  Var pooled;
  if (cfg.use_deformable) {
    const Var offsets = predict_offsets(g, top, net.offset_branch, scaled, cfg.k);
    pooled = deformable_psroi_pool(g, maps, offsets, scaled, cfg.k, 2, cfg.gamma_off);
  } else {
    pooled = psroi_pool(g, maps, scaled, cfg.k, 2);
  }
  const Var occ = cfg.k == cfg.pooled ? pooled : upsample_nearest(g, pooled, cfg.pooled, cfg.pooled);
  const Var coupled = couple(g, out.gated.features, occ, net.coupling);
  out.cls = dense(g, coupled, net.coupling.head_cls);
  out.deltas = dense(g, coupled, net.coupling.head_reg);
  return out;
}

std::vector<Box> rpn_proposals(const Graph& g, const Network& net, Var rpn_cls, Var rpn_reg,
                               int map_h, int map_w, int image_h, int image_w) {
  const std::vector<Box> anchors = generate_anchors(map_h, map_w, net.anchor_config());
  const Tensor4& cls = g.value(rpn_cls);
  const Tensor4& reg = g.value(rpn_reg);
  std::vector<Box> boxes;
  std::vector<real> scores;
  for (std::size_t r = 0; r < anchors.size(); ++r) {
    const int row = static_cast<int>(r);
    const Box b = clip_box(decode_deltas(anchors[r], deltas_row(reg, row)), static_cast<real>(image_w),
                           static_cast<real>(image_h));
    if (!poolable(b, image_w, image_h)) continue;
    boxes.push_back(b);
    scores.push_back(pedestrian_prob(cls, row));
  }
  std::vector<Box> out;
  for (std::size_t i : nms(boxes, scores, net.cfg.rpn_nms)) {
    if (static_cast<int>(out.size()) >= net.cfg.proposals) break;
    out.push_back(boxes[i]);
  }
  return out;
}

namespace {

struct RpnOutputs {
  Var cls;
  Var reg;
  int map_h = 0;
  int map_w = 0;
};

RpnOutputs rpn_forward(Graph& g, Network& net, Var top) {
  const Var h = relu(g, conv2d(g, top, net.rpn_conv));
  RpnOutputs out;
  out.cls = anchor_rows(g, conv2d(g, h, net.rpn_cls), 2);
  out.reg = anchor_rows(g, conv2d(g, h, net.rpn_reg), 4);
  out.map_h = g.value(top).h();
  out.map_w = g.value(top).w();
  return out;
}

std::vector<RoiTarget> targets_for(std::span<const LabeledProposal> labeled,
                                   std::span<const Annotation> gts) {
  std::vector<RoiTarget> targets(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    targets[i].label = labeled[i].label;
    if (labeled[i].label == Label::positive) {
      targets[i].deltas = encode_deltas(labeled[i].box, gts[*labeled[i].matched_gt].full);
    }
  }
  return targets;
}

}  // namespace

TrainForward train_forward(Graph& g, Network& net, const Tensor4& image,
                           std::span<const Annotation> gts, std::mt19937_64& rng) {
  const TrainConfig& cfg = net.cfg;
  const std::vector<Var> blocks = backbone_forward(g, net, g.constant(image));
  const RpnOutputs rpn = rpn_forward(g, net, blocks[4]);

  TrainForward out;
  const std::vector<Box> anchors = generate_anchors(rpn.map_h, rpn.map_w, net.anchor_config());
  const std::vector<LabeledProposal> anchor_labels = assign_labels(anchors, gts);
  const std::vector<std::size_t> rpn_rows = sample_minibatch(
      anchor_labels, static_cast<std::size_t>(cfg.rpn_batch), cfg.pos_fraction, rng);
  const std::vector<RoiTarget> rpn_targets = targets_for(anchor_labels, gts);
  if (rpn_rows.empty()) throw UsageError("train_forward: no RPN anchors sampled");
  const LossResult rpn_loss = detection_loss(g, rpn.cls, rpn.reg, rpn_targets, cfg.alpha, rpn_rows);
  out.terms.rpn = rpn_loss.terms;

  std::vector<Box> proposals = rpn_proposals(g, net, rpn.cls, rpn.reg, rpn.map_h, rpn.map_w,
                                             image.h(), image.w());
  for (const Annotation& a : gts) {
    if (!a.ignore && poolable(a.full, image.w(), image.h())) proposals.push_back(a.full);
  }
  const std::vector<LabeledProposal> labeled = assign_labels(proposals, gts);
  const std::vector<std::size_t> rows = sample_minibatch(
      labeled, static_cast<std::size_t>(cfg.rois_per_image), cfg.pos_fraction, rng);
  if (rows.empty()) {
    out.loss = rpn_loss.total;
    return out;
  }
  std::vector<Box> rois;
  std::vector<LabeledProposal> picked;
  for (std::size_t r : rows) {
    rois.push_back(labeled[r].box);
    picked.push_back(labeled[r]);
  }
  const std::vector<RoiTarget> targets = targets_for(picked, gts);
  const HeadOutputs head = head_forward(g, net, blocks, rois);
  std::vector<std::size_t> keep;
  if (cfg.use_ohem) {
    std::vector<real> totals;
    for (const LossTerms& t : per_roi_losses(g.value(head.cls), g.value(head.deltas), targets, cfg.alpha)) {
      totals.push_back(t.total);
    }
    keep = ohem_select(totals, static_cast<std::size_t>(cfg.ohem_n));
  }
  const LossResult head_loss = detection_loss(g, head.cls, head.deltas, targets, cfg.alpha, keep);
  out.terms.head = head_loss.terms;
  out.head_rois = keep.empty() ? rois.size() : keep.size();
  out.loss = add(g, rpn_loss.total, head_loss.total);
  return out;
}

InferenceResult detect(Network& net, const Tensor4& image, const std::string& image_id) {
  const TrainConfig& cfg = net.cfg;
  Graph g;
  const std::vector<Var> blocks = backbone_forward(g, net, g.constant(image));
  const RpnOutputs rpn = rpn_forward(g, net, blocks[4]);
  const std::vector<Box> proposals =
      rpn_proposals(g, net, rpn.cls, rpn.reg, rpn.map_h, rpn.map_w, image.h(), image.w());
  InferenceResult out;
  if (proposals.empty()) return out;
  const HeadOutputs head = head_forward(g, net, blocks, proposals);
  const Tensor4& cls = g.value(head.cls);
  const Tensor4& reg = g.value(head.deltas);
  std::vector<Box> boxes;
  std::vector<real> scores;
  for (std::size_t r = 0; r < proposals.size(); ++r) {
    const int row = static_cast<int>(r);
    const Box b = clip_box(decode_deltas(proposals[r], deltas_row(reg, row)),
                           static_cast<real>(image.w()), static_cast<real>(image.h()));
    if (b.width() < 1 || b.height() < 1) continue;
    boxes.push_back(b);
    scores.push_back(pedestrian_prob(cls, row));
  }
  for (std::size_t i : nms(boxes, scores, cfg.det_nms)) {
    if (static_cast<int>(out.detections.size()) >= cfg.det_max) break;
    out.detections.push_back({image_id, boxes[i], scores[i]});
  }
  for (const Var& gate : head.gated.gates) out.gates.push_back(gate.valid() ? g.value(gate) : Tensor4());
  return out;
}

}  // namespace cdon
