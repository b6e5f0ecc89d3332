#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cdon/config.hpp"
#include "cdon/eval.hpp"
#include "cdon/gating.hpp"
#include "cdon/heads.hpp"
#include "cdon/pooling.hpp"

namespace cdon {

/// Backbone, RPN, gated and occlusion sub-networks, coupling and heads.
///
/// Blocks 1-4 are 3x3 stride-2 convolutions; block 5 keeps stride 16 and is
/// dilated by 2. Every block is followed by ReLU.
struct Network {
  TrainConfig cfg;
  std::vector<ConvParams> blocks;
  ConvParams rpn_conv;
  ConvParams rpn_cls;
  ConvParams rpn_reg;
  std::vector<LayerTap> taps;
  ConvParams occ_maps;
  ConvParams offset_branch;
  CoupleParams coupling;

  /// Zero-initialized parameters. Throws ConfigError on inconsistent widths.
  static Network build(const TrainConfig& cfg);

  int anchors_per_cell() const { return cfg.anchor_count; }
  AnchorConfig anchor_config() const;
  static constexpr int kFeatureStride = 16;

  /// Visits every trainable tensor with a stable dotted name.
  void for_each_param(const std::function<void(const std::string&, Tensor4&)>& fn);
  std::vector<Tensor4*> params();
  std::size_t param_count();

  /// He-normal for backbone, RPN trunk, squeeze, gate stage and coupling
  /// convs; N(0, init_std) for the RPN outputs, occlusion maps, gate fc layers
  /// and heads; zero biases and a zero offset branch. Each tensor draws from its own
  /// stream seeded by (seed, name).
  void initialize(std::uint64_t seed);
};

/// Per-step loss summary.
struct StepLoss {
  LossTerms rpn;
  LossTerms head;
  real cls() const { return rpn.cls + head.cls; }
  real reg() const { return rpn.alpha * rpn.reg + head.alpha * head.reg; }
  real total() const { return rpn.total + head.total; }
};

struct TrainForward {
  Var loss;
  StepLoss terms;
  std::size_t head_rois = 0;
};

/// Backbone outputs, one Var per block.
std::vector<Var> backbone_forward(Graph& g, Network& net, Var image);

/// Head outputs for `rois`: class scores (R, 2, 1, 1) and deltas (R, 4, 1, 1).
struct HeadOutputs {
  Var cls;
  Var deltas;
  GatedFeatures gated;
};
HeadOutputs head_forward(Graph& g, Network& net, std::span<const Var> blocks,
                         std::span<const Box> rois);

/// Decoded, clipped, NMS-filtered RPN proposals (at most cfg.proposals).
std::vector<Box> rpn_proposals(const Graph& g, const Network& net, Var rpn_cls, Var rpn_reg,
                               int map_h, int map_w, int image_h, int image_w);

/// One training forward pass: RPN loss on sampled anchors plus head loss on
/// sampled proposals (ground truth appended), optionally OHEM-filtered.
TrainForward train_forward(Graph& g, Network& net, const Tensor4& image,
                           std::span<const Annotation> gts, std::mt19937_64& rng);

/// Inference on one image: proposals, head scores (pedestrian softmax),
/// decoded boxes, NMS at cfg.det_nms, top cfg.det_max.
struct InferenceResult {
  std::vector<Detection> detections;
  /// Gate tensor per tap for the scored proposals (empty when ungated).
  std::vector<Tensor4> gates;
};
InferenceResult detect(Network& net, const Tensor4& image, const std::string& image_id);

}  // namespace cdon
