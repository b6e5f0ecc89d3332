#include "cdon/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cdon {

namespace {

struct RowLoss {
  LossTerms terms;
  real dcls[2] = {0, 0};
  real ddelta[4] = {0, 0, 0, 0};
};

RowLoss row_loss(const real* cls, const real* deltas, const RoiTarget& t, real alpha) {
  RowLoss out;
  out.terms.alpha = alpha;
  if (t.label == Label::ignore) return out;
  const int y = t.label == Label::positive ? 1 : 0;
  const real m = std::max(cls[0], cls[1]);
  const real e0 = std::exp(cls[0] - m), e1 = std::exp(cls[1] - m);
  const real lse = m + std::log(e0 + e1);
  out.terms.cls = lse - cls[y];
  out.dcls[0] = e0 / (e0 + e1) - (y == 0 ? 1 : 0);
  out.dcls[1] = e1 / (e0 + e1) - (y == 1 ? 1 : 0);
  if (t.label == Label::positive) {
    if (!t.deltas) throw UsageError("detection_loss: positive RoI without regression targets");
    for (int j = 0; j < 4; ++j) {
      const real diff = (*t.deltas)[j] - deltas[j];
      out.terms.reg += smooth_l1(diff);
      out.ddelta[j] = -alpha * smooth_l1_grad(diff);
    }
  }
  out.terms.total = out.terms.cls + alpha * out.terms.reg;
  return out;
}

void check_heads(const Tensor4& cls, const Tensor4& deltas, std::size_t targets) {
  if (cls.c() * cls.h() * cls.w() != 2 || deltas.c() * deltas.h() * deltas.w() != 4 ||
      cls.n() != deltas.n() || static_cast<std::size_t>(cls.n()) != targets) {
    throw DimensionError("detection_loss: expected (N,2) scores, (N,4) deltas and N targets");
  }
}

}  // namespace

CoupleParams CoupleParams::make(int gate_channels, int occ_channels, int width, int pooled_h,
                                int pooled_w) {
  CoupleParams p;
  p.norm_gate = ConvParams::zeros(width, gate_channels, 1, 1);
  p.norm_occ = ConvParams::zeros(width, occ_channels, 1, 1);
  p.head_cls = DenseParams::zeros(2, width * pooled_h * pooled_w);
  p.head_reg = DenseParams::zeros(4, width * pooled_h * pooled_w);
  return p;
}

std::size_t CoupleParams::param_count() const {
  return norm_gate.param_count() + norm_occ.param_count() + head_cls.param_count() +
         head_reg.param_count();
}

Tensor4 couple(const Tensor4& feat_gate, const Tensor4& feat_occ, const CoupleParams& p) {
  if (p.norm_gate.out_channels() != p.norm_occ.out_channels()) {
    throw ConfigError("couple: normalization widths differ");
  }
  const Tensor4 a = conv2d(feat_gate, p.norm_gate);
  const Tensor4 b = conv2d(feat_occ, p.norm_occ);
  if (!(a.shape() == b.shape())) {
    throw ConfigError("couple: normalized features " + a.shape().str() + " vs " +
                      b.shape().str());
  }
  return add(a, b);
}

Var couple(Graph& g, Var feat_gate, Var feat_occ, CoupleParams& p) {
  if (p.norm_gate.out_channels() != p.norm_occ.out_channels()) {
    throw ConfigError("couple: normalization widths differ");
  }
  const Var a = conv2d(g, feat_gate, p.norm_gate);
  const Var b = conv2d(g, feat_occ, p.norm_occ);
  if (!(g.value(a).shape() == g.value(b).shape())) {
    throw ConfigError("couple: normalized features " + g.value(a).shape().str() + " vs " +
                      g.value(b).shape().str());
  }
  return add(g, a, b);
}

real smooth_l1(real x) {
  const real ax = std::abs(x);
  return ax < 1 ? real(0.5) * x * x : ax - real(0.5);
}

real smooth_l1_grad(real x) {
  if (x >= 1) return 1;
  if (x <= -1) return -1;
  return x;
}

LossTerms detection_loss(std::span<const real> pred_cls, std::span<const real> pred_deltas,
                         const RoiTarget& target, real alpha) {
  if (pred_cls.size() != 2 || pred_deltas.size() != 4) {
    throw DimensionError("detection_loss: expected 2 scores and 4 deltas");
  }
  return row_loss(pred_cls.data(), pred_deltas.data(), target, alpha).terms;
}

std::vector<LossTerms> per_roi_losses(const Tensor4& cls, const Tensor4& deltas,
                                      std::span<const RoiTarget> targets, real alpha) {
  check_heads(cls, deltas, targets.size());
  std::vector<LossTerms> out;
  out.reserve(targets.size());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    out.push_back(row_loss(cls.ptr() + 2 * r, deltas.ptr() + 4 * r, targets[r], alpha).terms);
  }
  return out;
}

LossResult detection_loss(Graph& g, Var cls, Var deltas, std::span<const RoiTarget> targets,
                          real alpha, std::span<const std::size_t> rows) {
  const Tensor4& c = g.value(cls);
  const Tensor4& d = g.value(deltas);
  check_heads(c, d, targets.size());
  std::vector<std::size_t> used(rows.begin(), rows.end());
  if (used.empty()) {
    used.resize(targets.size());
    std::iota(used.begin(), used.end(), std::size_t{0});
  }
  Tensor4 dc(c.shape(), 0), dd(d.shape(), 0);
  LossResult result;
  result.terms.alpha = alpha;
  for (std::size_t r : used) {
    if (r >= targets.size()) throw DimensionError("detection_loss: row index out of range");
    const RowLoss rl = row_loss(c.ptr() + 2 * r, d.ptr() + 4 * r, targets[r], alpha);
    result.terms.cls += rl.terms.cls;
    result.terms.reg += rl.terms.reg;
    for (int j = 0; j < 2; ++j) dc[2 * r + j] += rl.dcls[j];
    for (int j = 0; j < 4; ++j) dd[4 * r + j] += rl.ddelta[j];
  }
  result.terms.total = result.terms.cls + alpha * result.terms.reg;
  result.total = g.record(
      Tensor4::scalar(result.terms.total), {cls, deltas},
      [=, dc = std::move(dc), dd = std::move(dd)](Graph& gr, const Tensor4& dy) {
        if (gr.needs_grad(cls)) {
          Tensor4& gc = gr.grad(cls);
          for (std::size_t i = 0; i < dc.size(); ++i) gc[i] += dy[0] * dc[i];
        }
        if (gr.needs_grad(deltas)) {
          Tensor4& gd = gr.grad(deltas);
          for (std::size_t i = 0; i < dd.size(); ++i) gd[i] += dy[0] * dd[i];
        }
      },
      "detection_loss");
  return result;
}

std::vector<std::size_t> ohem_select(std::span<const real> losses, std::size_t n) {
  if (n == 0) throw UsageError("ohem_select: n must be positive");
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t keep = std::min(n, order.size());
  std::partial_sort(order.begin(), order.begin() + keep, order.end(),
                    [&](std::size_t a, std::size_t b) {
                      return losses[a] > losses[b] || (losses[a] == losses[b] && a < b);
                    });
  order.resize(keep);
  return order;
}

void sgd_step(std::span<Tensor4* const> params, OptimState& state) {
  for (const Tensor4* p : params) {
    for (real v : p->grad()) {
      if (!std::isfinite(v)) throw NumericError("sgd_step: non-finite gradient");
    }
  }
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const Tensor4* p : params) state.velocity.emplace_back(p->shape(), 0);
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor4& p = *params[k];
    Tensor4& v = state.velocity[k];
    expect_shape(v.shape(), p.shape(), "sgd_step velocity");
    const auto grad = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const real gi = grad.empty() ? real(0) : grad[i];
      v[i] = state.momentum * v[i] + (gi + state.weight_decay * p[i]);
      p[i] -= state.lr * v[i];
    }
  }
}

real LrSchedule::at(int step) const {
  return lr_schedule(step, base_lr, drops, warmup_steps, warmup_lr);
}

real lr_schedule(int step, real base_lr, std::span<const std::pair<int, real>> drops,
                 int warmup_steps, real warmup_lr) {
  if (step < warmup_steps) return warmup_lr;
  real lr = base_lr;
  for (const auto& [at, factor] : drops) {
    if (step >= at) lr *= factor;
  }
  return lr;
}

}  // namespace cdon
