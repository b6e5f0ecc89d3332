#include "cdon/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cdon {

namespace {

inline real cell(const real* plane, int h, int w, int y, int x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[static_cast<std::size_t>(y) * w + x]
                                              : real(0);
}

void scatter_bilinear(real* plane, int h, int w, real x, real y, real g) {
  const real fx0 = std::floor(x), fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  const real fx = x - fx0, fy = y - fy0;
  const real weights[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  for (int t = 0; t < 4; ++t) {
    if (ys[t] >= 0 && ys[t] < h && xs[t] >= 0 && xs[t] < w && weights[t] != 0) {
      plane[static_cast<std::size_t>(ys[t]) * w + xs[t]] += weights[t] * g;
    }
  }
}

struct MaxBin {
  int hstart, hend, wstart, wend;
};

struct MaxLayout {
  int start_h, start_w;
  real bin_h, bin_w;
};

MaxLayout max_layout(const RoI& roi, int H, int W, int out_h, int out_w) {
  const int sw = static_cast<int>(std::round(roi.box.x1 * roi.spatial_scale));
  const int sh = static_cast<int>(std::round(roi.box.y1 * roi.spatial_scale));
  const int ew = static_cast<int>(std::round(roi.box.x2 * roi.spatial_scale));
  const int eh = static_cast<int>(std::round(roi.box.y2 * roi.spatial_scale));
  if (std::max(sw, 0) > std::min(ew, W - 1) || std::max(sh, 0) > std::min(eh, H - 1)) {
    throw DegenerateRoiError("roi_max_pool: RoI covers no feature cell");
  }
  const int rw = std::max(ew - sw + 1, 1);
  const int rh = std::max(eh - sh + 1, 1);
  return {sh, sw, static_cast<real>(rh) / out_h, static_cast<real>(rw) / out_w};
}

MaxBin max_bin(const MaxLayout& l, int ph, int pw, int H, int W) {
  MaxBin b;
  b.hstart = std::clamp(static_cast<int>(std::floor(ph * l.bin_h)) + l.start_h, 0, H);
  b.hend = std::clamp(static_cast<int>(std::ceil((ph + 1) * l.bin_h)) + l.start_h, 0, H);
  b.wstart = std::clamp(static_cast<int>(std::floor(pw * l.bin_w)) + l.start_w, 0, W);
  b.wend = std::clamp(static_cast<int>(std::ceil((pw + 1) * l.bin_w)) + l.start_w, 0, W);
  return b;
}

// Forward max pooling; `argmax` receives the plane index of each output (-1
// for empty bins).
Tensor4 max_pool_impl(const Tensor4& f, std::span<const RoI> rois, int out_h, int out_w,
                      std::vector<int>* argmax) {
  if (f.n() != 1) throw DimensionError("roi_max_pool: features must have batch 1");
  if (out_h < 1 || out_w < 1) throw DimensionError("roi_max_pool: empty output grid");
  const int C = f.c(), H = f.h(), W = f.w();
  Tensor4 y({static_cast<int>(rois.size()), C, out_h, out_w});
  if (argmax != nullptr) argmax->assign(y.size(), -1);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const MaxLayout l = max_layout(rois[r], H, W, out_h, out_w);
    for (int ph = 0; ph < out_h; ++ph) {
      for (int pw = 0; pw < out_w; ++pw) {
        const MaxBin b = max_bin(l, ph, pw, H, W);
        const bool empty = b.hend <= b.hstart || b.wend <= b.wstart;
        for (int c = 0; c < C; ++c) {
          const std::size_t oi = y.index(static_cast<int>(r), c, ph, pw);
          if (empty) continue;
          const real* plane = f.plane(0, c);
          int best = b.hstart * W + b.wstart;
          for (int hh = b.hstart; hh < b.hend; ++hh) {
            for (int ww = b.wstart; ww < b.wend; ++ww) {
              if (plane[hh * W + ww] > plane[best]) best = hh * W + ww;
            }
          }
          y[oi] = plane[best];
          if (argmax != nullptr) (*argmax)[oi] = best;
        }
      }
    }
  }
  return y;
}

void validate_maps(const Shape& s, int k, int classes) {
  if (k < 1 || classes < 1) throw DimensionError("psroi: k and classes must be positive");
  if (s.n != 1 || s.c != classes * k * k) {
    throw DimensionError("psroi: maps " + s.str() + " do not hold " + std::to_string(classes) +
                         "*" + std::to_string(k) + "^2 channels");
  }
}

// Plain position-sensitive pooling, reading samples through bilinear_sample.
Tensor4 ps_forward(const Tensor4& maps, std::span<const RoI> rois, int k, int classes,
                   std::vector<int>* counts) {
  validate_maps(maps.shape(), k, classes);
  const int H = maps.h(), W = maps.w();
  Tensor4 y({static_cast<int>(rois.size()), classes, k, k});
  if (counts != nullptr) counts->assign(rois.size() * k * k, 0);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const BinLayout l = BinLayout::make(rois[r], k);
    const int n = l.samples_x * l.samples_y;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        if (counts != nullptr) (*counts)[(r * k + i) * k + j] = n;
        for (int c = 0; c < classes; ++c) {
          const real* plane = maps.plane(0, (c * k + i) * k + j);
          real acc = 0;
          for (int sy = 0; sy < l.samples_y; ++sy) {
            for (int sx = 0; sx < l.samples_x; ++sx) {
              acc += bilinear_sample(plane, H, W, l.sample_x(j, sx), l.sample_y(i, sy));
            }
          }
          y(static_cast<int>(r), c, i, j) = acc / n;
        }
      }
    }
  }
  return y;
}

Tensor4 deform_forward(const Tensor4& maps, const Tensor4& off, std::span<const RoI> rois, int k,
                       int classes, real gamma, std::vector<int>* counts) {
  validate_maps(maps.shape(), k, classes);
  if (off.shape() != Shape{static_cast<int>(rois.size()), 2, k, k}) {
    throw DimensionError("deformable_psroi_pool: offsets " + off.shape().str() +
                         " do not match (R,2,k,k)");
  }
  off.check_finite("deformable_psroi_pool offsets");
  const int H = maps.h(), W = maps.w();
  Tensor4 y({static_cast<int>(rois.size()), classes, k, k});
  if (counts != nullptr) counts->assign(rois.size() * k * k, 0);
  for (std::size_t r = 0; r < rois.size(); ++r) {
    const int ri = static_cast<int>(r);
    const BinLayout l = BinLayout::make(rois[r], k);
    const int n = l.samples_x * l.samples_y;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        if (counts != nullptr) (*counts)[(r * k + i) * k + j] = n;
        const real shift_x = off(ri, 0, i, j) * gamma * l.roi_w;
        const real shift_y = off(ri, 1, i, j) * gamma * l.roi_h;
        for (int c = 0; c < classes; ++c) {
          const real* plane = maps.plane(0, (c * k + i) * k + j);
          real acc = 0;
          for (int sy = 0; sy < l.samples_y; ++sy) {
            for (int sx = 0; sx < l.samples_x; ++sx) {
              acc += bilinear_sample_grad(plane, H, W, l.sample_x(j, sx) + shift_x,
                                          l.sample_y(i, sy) + shift_y)
                         .value;
            }
          }
          y(ri, c, i, j) = acc / n;
        }
      }
    }
  }
  return y;
}

}  // namespace

void PSRoIMaps::validate() const { validate_maps(maps.shape(), k, classes); }

BinLayout BinLayout::make(const RoI& roi, int k) {
  BinLayout l;
  l.x0 = roi.box.x1 * roi.spatial_scale;
  l.y0 = roi.box.y1 * roi.spatial_scale;
  l.roi_w = std::max(roi.box.width() * roi.spatial_scale, real(1));
  l.roi_h = std::max(roi.box.height() * roi.spatial_scale, real(1));
  l.bin_w = l.roi_w / k;
  l.bin_h = l.roi_h / k;
  l.samples_x = std::max(1, static_cast<int>(std::ceil(l.bin_w)));
  l.samples_y = std::max(1, static_cast<int>(std::ceil(l.bin_h)));
  return l;
}

real bilinear_sample(const real* plane, int h, int w, real x, real y) {
  const real fx0 = std::floor(x), fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  const real fx = x - fx0, fy = y - fy0;
  const real v00 = cell(plane, h, w, y0, x0), v01 = cell(plane, h, w, y0, x0 + 1);
  const real v10 = cell(plane, h, w, y0 + 1, x0), v11 = cell(plane, h, w, y0 + 1, x0 + 1);
  return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
}

BilinearGrad bilinear_sample_grad(const real* plane, int h, int w, real x, real y) {
  const real fx0 = std::floor(x), fy0 = std::floor(y);
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  const real fx = x - fx0, fy = y - fy0;
  const real v00 = cell(plane, h, w, y0, x0), v01 = cell(plane, h, w, y0, x0 + 1);
  const real v10 = cell(plane, h, w, y0 + 1, x0), v11 = cell(plane, h, w, y0 + 1, x0 + 1);
  BilinearGrad g;
  g.value = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
  g.dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10);
  g.dy = (1 - fx) * (v10 - v00) + fx * (v11 - v01);
  return g;
}

Tensor4 roi_max_pool(const Tensor4& features, std::span<const RoI> rois, int out_h, int out_w) {
  return max_pool_impl(features, rois, out_h, out_w, nullptr);
}

Tensor4 roi_max_pool(const Tensor4& features, const RoI& roi, int out_h, int out_w) {
  return max_pool_impl(features, std::span<const RoI>(&roi, 1), out_h, out_w, nullptr);
}

PooledScores psroi_pool(const PSRoIMaps& maps, std::span<const RoI> rois) {
  PooledScores out;
  out.values = ps_forward(maps.maps, rois, maps.k, maps.classes, &out.counts);
  return out;
}

PooledScores psroi_pool(const PSRoIMaps& maps, const RoI& roi) {
  return psroi_pool(maps, std::span<const RoI>(&roi, 1));
}

PooledScores deformable_psroi_pool(const PSRoIMaps& maps, std::span<const RoI> rois,
                                   const OffsetField& offsets) {
  PooledScores out;
  out.values = deform_forward(maps.maps, offsets.offsets, rois, maps.k, maps.classes,
                              offsets.gamma_off, &out.counts);
  return out;
}

OffsetField predict_offsets(const Tensor4& features, std::span<const RoI> rois,
                            const ConvParams& branch, int k, real gamma_off) {
  if (branch.out_channels() != 2 * k * k) {
    throw DimensionError("predict_offsets: branch must output 2k^2 channels");
  }
  PSRoIMaps m{conv2d(features, branch), k, 2};
  OffsetField f;
  f.offsets = psroi_pool(m, rois).values;
  f.gamma_off = gamma_off;
  return f;
}

Tensor4 vote(const PooledScores& scores) {
  const Tensor4& v = scores.values;
  Tensor4 y({v.n(), v.c(), 1, 1});
  const real cells = static_cast<real>(v.h()) * v.w();
  for (int r = 0; r < v.n(); ++r) {
    for (int c = 0; c < v.c(); ++c) {
      real acc = 0;
      for (std::size_t p = 0; p < v.shape().plane(); ++p) acc += v.plane(r, c)[p];
      y(r, c, 0, 0) = acc / cells;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------

Var roi_max_pool(Graph& g, Var features, std::span<const RoI> rois, int out_h, int out_w) {
  std::vector<int> argmax;
  Tensor4 y = max_pool_impl(g.value(features), rois, out_h, out_w, &argmax);
  const int C = y.c();
  const std::size_t bins = static_cast<std::size_t>(out_h) * out_w;
  return g.record(
      std::move(y), {features},
      [=, argmax = std::move(argmax)](Graph& gr, const Tensor4& dy) {
        Tensor4& df = gr.grad(features);
        for (std::size_t oi = 0; oi < argmax.size(); ++oi) {
          if (argmax[oi] < 0) continue;
          const int c = static_cast<int>((oi / bins) % C);
          df.plane(0, c)[argmax[oi]] += dy[oi];
        }
      },
      "roi_max_pool");
}

Var psroi_pool(Graph& g, Var maps, std::span<const RoI> rois, int k, int classes) {
  Tensor4 y = ps_forward(g.value(maps), rois, k, classes, nullptr);
  std::vector<RoI> saved(rois.begin(), rois.end());
  return g.record(
      std::move(y), {maps},
      [=, saved = std::move(saved)](Graph& gr, const Tensor4& dy) {
        Tensor4& dm = gr.grad(maps);
        const int H = dm.h(), W = dm.w();
        for (std::size_t r = 0; r < saved.size(); ++r) {
          const BinLayout l = BinLayout::make(saved[r], k);
          const real inv_n = real(1) / (l.samples_x * l.samples_y);
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              for (int c = 0; c < classes; ++c) {
                const real go = dy(static_cast<int>(r), c, i, j) * inv_n;
                if (go == 0) continue;
                real* plane = dm.plane(0, (c * k + i) * k + j);
                for (int sy = 0; sy < l.samples_y; ++sy) {
                  for (int sx = 0; sx < l.samples_x; ++sx) {
                    scatter_bilinear(plane, H, W, l.sample_x(j, sx), l.sample_y(i, sy), go);
                  }
                }
              }
            }
          }
        }
      },
      "psroi_pool");
}

Var deformable_psroi_pool(Graph& g, Var maps, Var offsets, std::span<const RoI> rois, int k,
                          int classes, real gamma_off) {
  Tensor4 y = deform_forward(g.value(maps), g.value(offsets), rois, k, classes, gamma_off, nullptr);
  std::vector<RoI> saved(rois.begin(), rois.end());
  return g.record(
      std::move(y), {maps, offsets},
      [=, saved = std::move(saved)](Graph& gr, const Tensor4& dy) {
        const Tensor4& m = gr.value(maps);
        const Tensor4& off = gr.value(offsets);
        Tensor4* dm = gr.needs_grad(maps) ? &gr.grad(maps) : nullptr;
        Tensor4* doff = gr.needs_grad(offsets) ? &gr.grad(offsets) : nullptr;
        const int H = m.h(), W = m.w();
        for (std::size_t r = 0; r < saved.size(); ++r) {
          const int ri = static_cast<int>(r);
          const BinLayout l = BinLayout::make(saved[r], k);
          const real inv_n = real(1) / (l.samples_x * l.samples_y);
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              const real shift_x = off(ri, 0, i, j) * gamma_off * l.roi_w;
              const real shift_y = off(ri, 1, i, j) * gamma_off * l.roi_h;
              real gx = 0, gy = 0;
              for (int c = 0; c < classes; ++c) {
                const real go = dy(ri, c, i, j) * inv_n;
                if (go == 0) continue;
                const int ch = (c * k + i) * k + j;
                for (int sy = 0; sy < l.samples_y; ++sy) {
                  for (int sx = 0; sx < l.samples_x; ++sx) {
                    const real x = l.sample_x(j, sx) + shift_x;
                    const real y = l.sample_y(i, sy) + shift_y;
                    if (doff != nullptr) {
                      const BilinearGrad bg = bilinear_sample_grad(m.plane(0, ch), H, W, x, y);
                      gx += go * bg.dx;
                      gy += go * bg.dy;
                    }
                    if (dm != nullptr) scatter_bilinear(dm->plane(0, ch), H, W, x, y, go);
                  }
                }
              }
              if (doff != nullptr) {
                (*doff)(ri, 0, i, j) += gx * gamma_off * l.roi_w;
                (*doff)(ri, 1, i, j) += gy * gamma_off * l.roi_h;
              }
            }
          }
        }
      },
      "deformable_psroi_pool");
}

Var predict_offsets(Graph& g, Var features, ConvParams& branch, std::span<const RoI> rois, int k) {
  if (branch.out_channels() != 2 * k * k) {
    throw DimensionError("predict_offsets: branch must output 2k^2 channels");
  }
  const Var maps = conv2d(g, features, branch);
  return psroi_pool(g, maps, rois, k, 2);
}

Var vote(Graph& g, Var scores) {
  PooledScores s{g.value(scores), {}};
  return g.record(
      vote(s), {scores},
      [=](Graph& gr, const Tensor4& dy) {
        Tensor4& ds = gr.grad(scores);
        const std::size_t cells = ds.shape().plane();
        for (int r = 0; r < ds.n(); ++r) {
          for (int c = 0; c < ds.c(); ++c) {
            const real go = dy(r, c, 0, 0) / static_cast<real>(cells);
            for (std::size_t p = 0; p < cells; ++p) ds.plane(r, c)[p] += go;
          }
        }
      },
      "vote");
}

}  // namespace cdon
