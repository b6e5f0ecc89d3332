#pragma once

#include <span>
#include <vector>

#include "cdon/graph.hpp"
#include "cdon/tensor.hpp"

namespace cdon {

/// Convolution weights (out, in, kH, kW), bias (1, out, 1, 1) and geometry.
struct ConvParams {
  Tensor4 weight;
  Tensor4 bias;
  int stride = 1;
  int pad = 0;
  int dilation = 1;

  /// Zero-initialized parameters flagged requires_grad.
  static ConvParams zeros(int out, int in, int kh, int kw, int stride = 1, int pad = 0,
                          int dilation = 1);

  int out_channels() const { return weight.n(); }
  int in_channels() const { return weight.c(); }
  int kernel_h() const { return weight.h(); }
  int kernel_w() const { return weight.w(); }
  std::size_t param_count() const { return weight.size() + bias.size(); }
  /// Throws ConfigError on kH/kW < 1, dilation < 1, stride < 1, pad < 0 or
  /// bias length != out channels.
  void validate() const;
};

/// Fully connected layer: weight (out, in, 1, 1), bias (1, out, 1, 1).
struct DenseParams {
  Tensor4 weight;
  Tensor4 bias;

  static DenseParams zeros(int out, int in);
  int out_features() const { return weight.n(); }
  int in_features() const { return weight.c(); }
  std::size_t param_count() const { return weight.size() + bias.size(); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Pure forward operations.

Shape conv2d_output_shape(const Shape& input, const ConvParams& p);

/// Direct convolution. Each output is bias + sum over (in-channel, ky, kx) in
/// lexicographic order.
Tensor4 conv2d(const Tensor4& input, const ConvParams& p);

/// Valid-padding, stride-1 per-channel convolution. `kernels` is (c, 1, kH, kW),
/// `bias` is (1, c, 1, 1) or empty.
Tensor4 depthwise_conv2d(const Tensor4& input, const Tensor4& kernels, const Tensor4& bias);

/// weight * input + bias on a single vector.
std::vector<real> dense(std::span<const real> input, const DenseParams& p);
/// Row-wise dense: each batch item of `input` is flattened (c*h*w == in) and
/// mapped to (n, out, 1, 1).
Tensor4 dense(const Tensor4& input, const DenseParams& p);

Tensor4 relu(const Tensor4& x);
/// Numerically stable logistic function.
Tensor4 sigmoid(const Tensor4& x);
real sigmoid(real x);

/// Broadcasts `gate` of dims (n,1,h,w), (n,c,1,1) or (n,c,h,w) over features.
Tensor4 broadcast_mul(const Tensor4& features, const Tensor4& gate);
Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 concat_channels(std::span<const Tensor4> parts);
/// Inverse of concat_channels.
std::vector<Tensor4> split_channels(const Tensor4& x, std::span<const int> channels);
/// Nearest-neighbour resize of each plane to (out_h, out_w).
Tensor4 upsample_nearest(const Tensor4& x, int out_h, int out_w);

// ---------------------------------------------------------------------------
// Recorded (differentiable) operations.

Var conv2d(Graph& g, Var input, Var weight, Var bias, int stride, int pad, int dilation);
/// Binds p.weight / p.bias as parameters of `g`.
Var conv2d(Graph& g, Var input, ConvParams& p);
Var depthwise_conv2d(Graph& g, Var input, Var kernels, Var bias);
Var dense(Graph& g, Var input, Var weight, Var bias);
Var dense(Graph& g, Var input, DenseParams& p);
Var relu(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);
Var broadcast_mul(Graph& g, Var features, Var gate);
Var add(Graph& g, Var a, Var b);
Var concat_channels(Graph& g, std::span<const Var> parts);
Var reshape(Graph& g, Var x, Shape shape);
Var upsample_nearest(Graph& g, Var x, int out_h, int out_w);
Var scale(Graph& g, Var x, real factor);
/// Sum of all elements as a (1,1,1,1) node.
Var sum(Graph& g, Var x);
/// Rows `indices` of a (N, m, h, w) tensor, in the given order.
Var select_rows(Graph& g, Var x, std::span<const int> indices);
/// (1, A*m, H, W) head output -> (H*W*A, m, 1, 1) rows ordered by
/// (row, column, anchor).
Var anchor_rows(Graph& g, Var x, int per_anchor);

}  // namespace cdon
