#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "cdon/geometry.hpp"
#include "cdon/graph.hpp"
#include "cdon/ops.hpp"

namespace cdon {

/// 1x1 normalization convs for both sub-networks (to a common width d) and
/// the classification / regression heads on the coupled d x h x w feature.
struct CoupleParams {
  ConvParams norm_gate;
  ConvParams norm_occ;
  DenseParams head_cls;
  DenseParams head_reg;

  /// Zero-initialized parameters.
  static CoupleParams make(int gate_channels, int occ_channels, int width, int pooled_h,
                           int pooled_w);
  int width() const { return norm_gate.out_channels(); }
  std::size_t param_count() const;
};

/// conv(feat_gate, norm_gate) + conv(feat_occ, norm_occ).
Tensor4 couple(const Tensor4& feat_gate, const Tensor4& feat_occ, const CoupleParams& p);
Var couple(Graph& g, Var feat_gate, Var feat_occ, CoupleParams& p);

struct LossTerms {
  real cls = 0;
  real reg = 0;
  real alpha = 1;
  real total = 0;
};

/// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
real smooth_l1(real x);
real smooth_l1_grad(real x);

/// Label and regression target for one RoI. Positives must carry deltas.
struct RoiTarget {
  Label label = Label::negative;
  std::optional<Deltas> deltas;
};

/// Two-way softmax cross-entropy on raw scores (index 1 = pedestrian) plus,
/// for positives, the summed smooth-L1 over (x, y, w, h). Ignore labels give
/// zero loss. Throws UsageError when a positive lacks targets.
LossTerms detection_loss(std::span<const real> pred_cls, std::span<const real> pred_deltas,
                         const RoiTarget& target, real alpha = 1);

/// Per-row losses for cls (N, 2, 1, 1) and deltas (N, 4, 1, 1).
std::vector<LossTerms> per_roi_losses(const Tensor4& cls, const Tensor4& deltas,
                                      std::span<const RoiTarget> targets, real alpha = 1);

struct LossResult {
  Var total;
  LossTerms terms;
};

/// Sum of per-row losses over `rows` (all rows when empty). Rows outside the
/// set receive zero gradient.
LossResult detection_loss(Graph& g, Var cls, Var deltas, std::span<const RoiTarget> targets,
                          real alpha = 1, std::span<const std::size_t> rows = {});

/// Indices of the n largest losses in descending order (lower index first on
/// ties); all indices when fewer than n.
std::vector<std::size_t> ohem_select(std::span<const real> losses, std::size_t n = 300);

struct OptimState {
  std::vector<Tensor4> velocity;
  real lr = real(1e-3);
  real momentum = real(0.9);
  real weight_decay = real(5e-4);
};

/// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v.
/// Missing grads count as zero. Throws NumericError on a non-finite gradient
/// before touching any parameter.
void sgd_step(std::span<Tensor4* const> params, OptimState& state);

/// Warm-up rate before warmup_steps, then base_lr times every factor whose
/// step has been reached.
struct LrSchedule {
  real base_lr = real(1e-3);
  int warmup_steps = 0;
  real warmup_lr = real(1e-4);
  std::vector<std::pair<int, real>> drops;

  real at(int step) const;
};

real lr_schedule(int step, real base_lr, std::span<const std::pair<int, real>> drops,
                 int warmup_steps = 0, real warmup_lr = real(1e-4));

}  // namespace cdon
