#pragma once

#include <span>
#include <vector>

#include "cdon/geometry.hpp"
#include "cdon/graph.hpp"
#include "cdon/ops.hpp"

namespace cdon {

/// Candidate box in image pixels plus the feature-map scale (1 / stride).
struct RoI {
  Box box;
  real spatial_scale = 1;
};

/// Bank of C_cls * k^2 position-sensitive maps, laid out class-major then
/// grid row-major: channel(c, i, j) = c*k*k + i*k + j.
struct PSRoIMaps {
  Tensor4 maps;
  int k = 3;
  int classes = 2;

  int channel(int c, int i, int j) const { return (c * k + i) * k + j; }
  /// Throws DimensionError unless maps is (1, classes*k*k, H, W).
  void validate() const;
};

/// Per-RoI, per-bin normalized offsets: (R, 2, k, k) with channel 0 = dx and
/// channel 1 = dy. Pixel shift = offset * RoI extent * gamma_off.
struct OffsetField {
  Tensor4 offsets;
  real gamma_off = real(0.1);
};

/// (R, C_cls, k, k) bin means plus the sample count of each (roi, i, j) bin.
struct PooledScores {
  Tensor4 values;
  std::vector<int> counts;

  real operator()(int roi, int c, int i, int j) const { return values(roi, c, i, j); }
};

/// Sampling layout of one RoI on a k x k grid, in feature-map coordinates.
/// Bin (i, j) is sampled at samples_x * samples_y regular points starting at
/// its top-left corner.
struct BinLayout {
  real x0 = 0;
  real y0 = 0;
  real roi_w = 1;
  real roi_h = 1;
  real bin_w = 1;
  real bin_h = 1;
  int samples_x = 1;
  int samples_y = 1;

  /// Projects the RoI, clamping its extent to at least one cell.
  static BinLayout make(const RoI& roi, int k);
  real sample_x(int j, int sx) const { return x0 + j * bin_w + sx * bin_w / samples_x; }
  real sample_y(int i, int sy) const { return y0 + i * bin_h + sy * bin_h / samples_y; }
};

/// Bilinear read of an h x w plane at (x, y). Neighbours outside the plane
/// contribute 0.
real bilinear_sample(const real* plane, int h, int w, real x, real y);

/// Value plus partial derivatives w.r.t. x and y (right-continuous at cells).
struct BilinearGrad {
  real value = 0;
  real dx = 0;
  real dy = 0;
};
BilinearGrad bilinear_sample_grad(const real* plane, int h, int w, real x, real y);

/// Max pooling of `features` (1, c, H, W) over each RoI on an out_h x out_w
/// grid with integer bin boundaries. Returns (R, c, out_h, out_w). Empty
/// bins are 0. Throws DegenerateRoiError when a RoI misses the map.
Tensor4 roi_max_pool(const Tensor4& features, std::span<const RoI> rois, int out_h, int out_w);
Tensor4 roi_max_pool(const Tensor4& features, const RoI& roi, int out_h, int out_w);

/// Position-sensitive average pooling: bin (i, j) of class c averages only
/// channel(c, i, j).
PooledScores psroi_pool(const PSRoIMaps& maps, std::span<const RoI> rois);
PooledScores psroi_pool(const PSRoIMaps& maps, const RoI& roi);

/// psroi_pool with each bin's samples shifted by its offset.
PooledScores deformable_psroi_pool(const PSRoIMaps& maps, std::span<const RoI> rois,
                                   const OffsetField& offsets);

/// Applies `branch` (output 2k^2 channels) to `features` and PSRoI-pools the
/// result into per-bin (dx, dy) offsets.
OffsetField predict_offsets(const Tensor4& features, std::span<const RoI> rois,
                            const ConvParams& branch, int k, real gamma_off = real(0.1));

/// Per-class mean over the k x k grid: (R, C_cls, 1, 1).
Tensor4 vote(const PooledScores& scores);

// Recorded versions.
Var roi_max_pool(Graph& g, Var features, std::span<const RoI> rois, int out_h, int out_w);
Var psroi_pool(Graph& g, Var maps, std::span<const RoI> rois, int k, int classes);
Var deformable_psroi_pool(Graph& g, Var maps, Var offsets, std::span<const RoI> rois, int k,
                          int classes, real gamma_off);
Var predict_offsets(Graph& g, Var features, ConvParams& branch, std::span<const RoI> rois, int k);
Var vote(Graph& g, Var scores);

}  // namespace cdon
