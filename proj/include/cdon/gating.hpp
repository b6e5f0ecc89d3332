#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdon/graph.hpp"
#include "cdon/ops.hpp"
#include "cdon/pooling.hpp"

namespace cdon {

enum class GateKind { spatio, channel, none };

const char* to_string(GateKind kind);
/// Accepts "spatio", "channel", "none". Throws ConfigError otherwise.
GateKind parse_gate_kind(const std::string& text);

/// 1x1 convolution reducing C_in channels to C_in / ratio.
struct SqueezeParams {
  ConvParams conv;
  real ratio = 1;

  /// Throws ConfigError unless ratio >= 1 and C_in / ratio is an integer.
  static SqueezeParams make(int c_in, real ratio);
  int in_channels() const { return conv.in_channels(); }
  int out_channels() const { return conv.out_channels(); }
};

/// Gate unit parameters: a conv stage followed by fc1 (ReLU), fc2 and a sigmoid.
///
/// spatio:  1x1 conv C->1, output G of shape (1, 1, h, w).
/// channel: full-extent depth-wise conv, output G of shape (1, C, 1, 1).
struct GateParams {
  GateKind kind = GateKind::channel;
  ConvParams conv;
  Tensor4 dw_kernels;
  Tensor4 dw_bias;
  DenseParams fc1;
  DenseParams fc2;
  int channels = 0;
  int pooled_h = 0;
  int pooled_w = 0;
  int hidden_dim = 0;

  /// Zero-initialized gate. `hidden` <= 0 selects default_hidden_dim.
  static GateParams make(GateKind kind, int channels, int pooled_h, int pooled_w, int hidden = 0);
  /// input_dim / 4, at least 4.
  static int default_hidden_dim(int input_dim);
  std::size_t param_count() const;
  std::size_t fc_param_count() const { return fc1.param_count() + fc2.param_count(); }
};

/// One backbone block feeding the gated sub-network.
struct LayerTap {
  std::string layer_name;
  int stride = 1;
  SqueezeParams squeeze;
  GateParams gate;
  int pooled_h = 7;
  int pooled_w = 7;
  /// When set, G is this constant instead of the gate unit output.
  std::optional<real> forced_gate;

  std::size_t param_count() const;
};

Tensor4 squeeze(const Tensor4& features, const SqueezeParams& p);
/// Gate output G for pooled RoI features (R, C, h, w); entries lie in (0, 1).
Tensor4 gate_forward(const Tensor4& pooled, const GateParams& p);
Tensor4 modulate(const Tensor4& pooled, const Tensor4& gate);
/// squeeze -> roi_max_pool -> gate -> modulate per tap, concatenated on
/// channels. backbone_maps[t] is the (1, C, H, W) output feeding taps[t].
Tensor4 gated_multilayer_extract(std::span<const LayerTap> taps,
                                 std::span<const Tensor4> backbone_maps,
                                 std::span<const Box> rois);

struct GatedFeatures {
  Var features;
  /// Gate output per tap; invalid when the tap has no gate unit.
  std::vector<Var> gates;
};

Var squeeze(Graph& g, Var features, SqueezeParams& p);
Var gate_forward(Graph& g, Var pooled, GateParams& p);
Var modulate(Graph& g, Var pooled, Var gate);
GatedFeatures gated_multilayer_extract(Graph& g, std::span<LayerTap> taps,
                                       std::span<const Var> backbone_maps,
                                       std::span<const Box> rois);

/// Writes "tap,index,gate" rows for RoI `roi` of each tap's gate tensor.
void write_gate_csv(std::ostream& out, std::span<const LayerTap> taps,
                    std::span<const Tensor4> gates, int roi);

}  // namespace cdon
