#include "cdon/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cdon {

namespace {

// Output positions o with 0 <= o*stride + offset <= in_size-1, as [lo, hi].
void valid_range(int offset, int in_size, int out_size, int stride, int& lo, int& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int num = in_size - 1 - offset;
  hi = num < 0 ? -1 : std::min(out_size - 1, num / stride);
}

// Dot product of a[0..n) with b[0, s, 2s, ...) using four partial sums.
real strided_dot(const real* a, const real* b, int n, int s) {
  real acc[4] = {0, 0, 0, 0};
  int t = 0;
  if (s == 1) {
    for (; t + 4 <= n; t += 4) {
      for (int l = 0; l < 4; ++l) acc[l] += a[t + l] * b[t + l];
    }
  } else {
    for (; t + 4 <= n; t += 4) {
      for (int l = 0; l < 4; ++l) acc[l] += a[t + l] * b[(t + l) * s];
    }
  }
  for (; t < n; ++t) acc[0] += a[t] * b[t * s];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

bool pointwise(int kh, int kw, int s, int pad) { return kh == 1 && kw == 1 && s == 1 && pad == 0; }

void conv_forward(const Tensor4& x, const Tensor4& w, const Tensor4& b, int s, int pad, int d,
                  Tensor4& y) {
  const int n = x.n(), ci = x.c(), H = x.h(), W = x.w();
  const int co = w.n(), kh = w.h(), kw = w.w();
  const int oh = y.h(), ow = y.w();
  if (pointwise(kh, kw, s, pad)) {
    // Whole planes are contiguous; per-output summation order is unchanged.
    const std::size_t P = static_cast<std::size_t>(H) * W;
    for (int bi = 0; bi < n; ++bi) {
      for (int oc = 0; oc < co; ++oc) {
        real* out = y.plane(bi, oc);
        std::fill(out, out + P, b.empty() ? real(0) : b[oc]);
        const real* wrow = w.ptr() + static_cast<std::size_t>(oc) * ci;
        for (int ic = 0; ic < ci; ++ic) {
          const real* in = x.plane(bi, ic);
          const real wv = wrow[ic];
          for (std::size_t p = 0; p < P; ++p) out[p] += wv * in[p];
        }
      }
    }
    return;
  }
  for (int bi = 0; bi < n; ++bi) {
    for (int oc = 0; oc < co; ++oc) {
      real* out = y.plane(bi, oc);
      std::fill(out, out + static_cast<std::size_t>(oh) * ow, b.empty() ? real(0) : b[oc]);
      for (int ic = 0; ic < ci; ++ic) {
        const real* in = x.plane(bi, ic);
        for (int ky = 0; ky < kh; ++ky) {
          const int yoff = ky * d - pad;
          int ylo, yhi;
          valid_range(yoff, H, oh, s, ylo, yhi);
          for (int kx = 0; kx < kw; ++kx) {
            const int xoff = kx * d - pad;
            int xlo, xhi;
            valid_range(xoff, W, ow, s, xlo, xhi);
            const real wv = w(oc, ic, ky, kx);
            for (int oy = ylo; oy <= yhi; ++oy) {
              const real* row = in + static_cast<std::size_t>(oy * s + yoff) * W;
              real* orow = out + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * row[ox + xoff];
              } else {
                for (int ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * row[ox * s + xoff];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward(const Tensor4& x, const Tensor4& w, const Tensor4& dy, int s, int pad, int d,
                   Tensor4* dx, Tensor4* dw, Tensor4* db) {
  const int n = x.n(), ci = x.c(), H = x.h(), W = x.w();
  const int co = w.n(), kh = w.h(), kw = w.w();
  const int oh = dy.h(), ow = dy.w();
  if (pointwise(kh, kw, s, pad)) {
    const std::size_t P = static_cast<std::size_t>(H) * W;
    for (int bi = 0; bi < n; ++bi) {
      for (int oc = 0; oc < co; ++oc) {
        const real* g = dy.plane(bi, oc);
        if (db != nullptr) {
          real acc = 0;
          for (std::size_t p = 0; p < P; ++p) acc += g[p];
          (*db)[oc] += acc;
        }
        const real* wrow = w.ptr() + static_cast<std::size_t>(oc) * ci;
        real* dwrow = dw != nullptr ? dw->ptr() + static_cast<std::size_t>(oc) * ci : nullptr;
        for (int ic = 0; ic < ci; ++ic) {
          const real* in = x.plane(bi, ic);
          if (dx != nullptr) {
            real* gin = dx->plane(bi, ic);
            const real wv = wrow[ic];
            for (std::size_t p = 0; p < P; ++p) gin[p] += wv * g[p];
          }
          if (dwrow != nullptr) dwrow[ic] += strided_dot(g, in, static_cast<int>(P), 1);
        }
      }
    }
    return;
  }
  for (int bi = 0; bi < n; ++bi) {
    for (int oc = 0; oc < co; ++oc) {
      const real* g = dy.plane(bi, oc);
      if (db != nullptr) {
        real acc = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += g[i];
        (*db)[oc] += acc;
      }
      for (int ic = 0; ic < ci; ++ic) {
        const real* in = x.plane(bi, ic);
        real* gin = dx != nullptr ? dx->plane(bi, ic) : nullptr;
        for (int ky = 0; ky < kh; ++ky) {
          const int yoff = ky * d - pad;
          int ylo, yhi;
          valid_range(yoff, H, oh, s, ylo, yhi);
          for (int kx = 0; kx < kw; ++kx) {
            const int xoff = kx * d - pad;
            int xlo, xhi;
            valid_range(xoff, W, ow, s, xlo, xhi);
            const real wv = w(oc, ic, ky, kx);
            real wacc = 0;
            const int len = xhi - xlo + 1;
            for (int oy = ylo; oy <= yhi && len > 0; ++oy) {
              const std::size_t base = static_cast<std::size_t>(oy * s + yoff) * W + xlo * s + xoff;
              const real* grow = g + static_cast<std::size_t>(oy) * ow + xlo;
              if (dw != nullptr) wacc += strided_dot(grow, in + base, len, s);
              if (gin != nullptr) {
                real* gi = gin + base;
                if (s == 1) {
                  for (int t = 0; t < len; ++t) gi[t] += wv * grow[t];
                } else {
                  for (int t = 0; t < len; ++t) gi[t * s] += wv * grow[t];
                }
              }
            }
            if (dw != nullptr) (*dw)(oc, ic, ky, kx) += wacc;
          }
        }
      }
    }
  }
}

enum class GateMode { full, spatial, channel };

GateMode gate_mode(const Shape& f, const Shape& g) {
  if (g == f) return GateMode::full;
  if (g.n == f.n && g.c == 1 && g.h == f.h && g.w == f.w) return GateMode::spatial;
  if (g.n == f.n && g.c == f.c && g.h == 1 && g.w == 1) return GateMode::channel;
  throw DimensionError("broadcast_mul: gate " + g.str() + " incompatible with features " +
                       f.str());
}

std::size_t gate_index(GateMode mode, const Shape& f, int b, int k, std::size_t pix) {
  switch (mode) {
    case GateMode::full:
      return (static_cast<std::size_t>(b) * f.c + k) * f.plane() + pix;
    case GateMode::spatial:
      return static_cast<std::size_t>(b) * f.plane() + pix;
    case GateMode::channel:
      return static_cast<std::size_t>(b) * f.c + k;
  }
  return 0;
}

void add_into(Tensor4& dst, const Tensor4& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

// ---------------------------------------------------------------------------

ConvParams ConvParams::zeros(int out, int in, int kh, int kw, int stride, int pad,
                             int dilation) {
  ConvParams p;
  p.weight = Tensor4({out, in, kh, kw}, 0);
  p.bias = Tensor4({1, out, 1, 1}, 0);
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  p.stride = stride;
  p.pad = pad;
  p.dilation = dilation;
  p.validate();
  return p;
}

void ConvParams::validate() const {
  if (weight.h() < 1 || weight.w() < 1) throw ConfigError("conv kernel must be at least 1x1");
  if (dilation < 1) throw ConfigError("conv dilation must be >= 1");
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  if (pad < 0) throw ConfigError("conv pad must be >= 0");
  if (!bias.empty() && static_cast<int>(bias.size()) != weight.n()) {
    throw ConfigError("conv bias length " + std::to_string(bias.size()) +
                      " != out channels " + std::to_string(weight.n()));
  }
}

DenseParams DenseParams::zeros(int out, int in) {
  DenseParams p;
  p.weight = Tensor4({out, in, 1, 1}, 0);
  p.bias = Tensor4({1, out, 1, 1}, 0);
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  return p;
}

void DenseParams::validate() const {
  if (weight.h() != 1 || weight.w() != 1) throw ConfigError("dense weight must be (out,in,1,1)");
  if (static_cast<int>(bias.size()) != weight.n()) throw ConfigError("dense bias length mismatch");
}

Shape conv2d_output_shape(const Shape& in, const ConvParams& p) {
  p.validate();
  if (in.c != p.in_channels()) {
    throw DimensionError("conv2d: input has " + std::to_string(in.c) + " channels, kernel expects " +
                         std::to_string(p.in_channels()));
  }
  const int oh = (in.h + 2 * p.pad - p.dilation * (p.kernel_h() - 1) - 1) / p.stride + 1;
  const int ow = (in.w + 2 * p.pad - p.dilation * (p.kernel_w() - 1) - 1) / p.stride + 1;
  if (in.h + 2 * p.pad - p.dilation * (p.kernel_h() - 1) - 1 < 0 ||
      in.w + 2 * p.pad - p.dilation * (p.kernel_w() - 1) - 1 < 0 || oh < 1 || ow < 1) {
    throw DimensionError("conv2d: empty output for input " + in.str());
  }
  return {in.n, p.out_channels(), oh, ow};
}

Tensor4 conv2d(const Tensor4& input, const ConvParams& p) {
  Tensor4 y(conv2d_output_shape(input.shape(), p));
  conv_forward(input, p.weight, p.bias, p.stride, p.pad, p.dilation, y);
  y.check_finite("conv2d");
  return y;
}

Tensor4 depthwise_conv2d(const Tensor4& input, const Tensor4& kernels, const Tensor4& bias) {
  const int c = input.c();
  if (kernels.n() != c || kernels.c() != 1) {
    throw DimensionError("depthwise_conv2d: kernels " + kernels.shape().str() + " for " +
                         std::to_string(c) + " channels");
  }
  if (kernels.h() > input.h() || kernels.w() > input.w()) {
    throw DimensionError("depthwise_conv2d: kernel larger than input");
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != c) {
    throw DimensionError("depthwise_conv2d: bias length mismatch");
  }
  const int kh = kernels.h(), kw = kernels.w();
  const int oh = input.h() - kh + 1, ow = input.w() - kw + 1;
  Tensor4 y({input.n(), c, oh, ow});
  for (int b = 0; b < input.n(); ++b) {
    for (int k = 0; k < c; ++k) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          real acc = bias.empty() ? real(0) : bias[k];
          for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) acc += kernels(k, 0, ky, kx) * input(b, k, oy + ky, ox + kx);
          }
          y(b, k, oy, ox) = acc;
        }
      }
    }
  }
  y.check_finite("depthwise_conv2d");
  return y;
}

std::vector<real> dense(std::span<const real> input, const DenseParams& p) {
  p.validate();
  if (static_cast<int>(input.size()) != p.in_features()) {
    throw DimensionError("dense: input length " + std::to_string(input.size()) + " != " +
                         std::to_string(p.in_features()));
  }
  Tensor4 x({1, p.in_features(), 1, 1}, std::vector<real>(input.begin(), input.end()));
  const Tensor4 y = dense(x, p);
  return {y.data().begin(), y.data().end()};
}

Tensor4 dense(const Tensor4& input, const DenseParams& p) {
  p.validate();
  const int in = p.in_features(), out = p.out_features();
  const std::size_t row = static_cast<std::size_t>(input.c()) * input.h() * input.w();
  if (static_cast<int>(row) != in) {
    throw DimensionError("dense: row length " + std::to_string(row) + " != " + std::to_string(in));
  }
  Tensor4 y({input.n(), out, 1, 1});
  for (int b = 0; b < input.n(); ++b) {
    const real* x = input.ptr() + b * row;
    for (int o = 0; o < out; ++o) {
      const real* wrow = p.weight.ptr() + static_cast<std::size_t>(o) * in;
      real acc = p.bias[o];
      for (int i = 0; i < in; ++i) acc += wrow[i] * x[i];
      y(b, o, 0, 0) = acc;
    }
  }
  y.check_finite("dense");
  return y;
}

Tensor4 relu(const Tensor4& x) {
  Tensor4 y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : real(0);
  return y;
}

real sigmoid(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  const real e = std::exp(x);
  return e / (real(1) + e);
}

Tensor4 sigmoid(const Tensor4& x) {
  Tensor4 y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

Tensor4 broadcast_mul(const Tensor4& features, const Tensor4& gate) {
  const Shape& f = features.shape();
  const GateMode mode = gate_mode(f, gate.shape());
  Tensor4 y(f);
  const std::size_t plane = f.plane();
  for (int b = 0; b < f.n; ++b) {
    for (int k = 0; k < f.c; ++k) {
      const std::size_t base = (static_cast<std::size_t>(b) * f.c + k) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        y[base + p] = features[base + p] * gate[gate_index(mode, f, b, k, p)];
      }
    }
  }
  y.check_finite("broadcast_mul");
  return y;
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  expect_shape(a.shape(), b.shape(), "add");
  Tensor4 y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  y.check_finite("add");
  return y;
}

Tensor4 concat_channels(std::span<const Tensor4> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no parts");
  const Shape first = parts.front().shape();
  int total = 0;
  for (const Tensor4& p : parts) {
    if (p.n() != first.n || p.h() != first.h || p.w() != first.w) {
      throw DimensionError("concat_channels: part " + p.shape().str() + " vs " + first.str());
    }
    total += p.c();
  }
  Tensor4 y({first.n, total, first.h, first.w});
  const std::size_t plane = first.plane();
  for (int b = 0; b < first.n; ++b) {
    int offset = 0;
    for (const Tensor4& p : parts) {
      std::copy_n(p.plane(b, 0), p.c() * plane, y.plane(b, offset));
      offset += p.c();
    }
  }
  return y;
}

std::vector<Tensor4> split_channels(const Tensor4& x, std::span<const int> channels) {
  if (std::accumulate(channels.begin(), channels.end(), 0) != x.c()) {
    throw DimensionError("split_channels: sizes do not sum to channel count");
  }
  std::vector<Tensor4> parts;
  const std::size_t plane = x.shape().plane();
  int offset = 0;
  for (int c : channels) {
    Tensor4 p({x.n(), c, x.h(), x.w()});
    for (int b = 0; b < x.n(); ++b) std::copy_n(x.plane(b, offset), c * plane, p.plane(b, 0));
    offset += c;
    parts.push_back(std::move(p));
  }
  return parts;
}

Tensor4 upsample_nearest(const Tensor4& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw DimensionError("upsample_nearest: empty output");
  Tensor4 y({x.n(), x.c(), out_h, out_w});
  for (int b = 0; b < x.n(); ++b) {
    for (int k = 0; k < x.c(); ++k) {
      for (int i = 0; i < out_h; ++i) {
        const int si = i * x.h() / out_h;
        for (int j = 0; j < out_w; ++j) y(b, k, i, j) = x(b, k, si, j * x.w() / out_w);
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------

Var conv2d(Graph& g, Var input, Var weight, Var bias, int stride, int pad, int dilation) {
  ConvParams geo;
  geo.weight = g.value(weight);
  geo.bias = bias.valid() ? g.value(bias) : Tensor4();
  geo.stride = stride;
  geo.pad = pad;
  geo.dilation = dilation;
  Tensor4 y = conv2d(g.value(input), geo);
  if (!bias.valid()) {
    return g.record(
        std::move(y), {input, weight},
        [=](Graph& gr, const Tensor4& dy) {
          Tensor4* dx = gr.needs_grad(input) ? &gr.grad(input) : nullptr;
          Tensor4* dw = gr.needs_grad(weight) ? &gr.grad(weight) : nullptr;
          conv_backward(gr.value(input), gr.value(weight), dy, stride, pad, dilation, dx, dw,
                        nullptr);
        },
        "conv2d");
  }
  return g.record(
      std::move(y), {input, weight, bias},
      [=](Graph& gr, const Tensor4& dy) {
        Tensor4* dx = gr.needs_grad(input) ? &gr.grad(input) : nullptr;
        Tensor4* dw = gr.needs_grad(weight) ? &gr.grad(weight) : nullptr;
        Tensor4* db = gr.needs_grad(bias) ? &gr.grad(bias) : nullptr;
        conv_backward(gr.value(input), gr.value(weight), dy, stride, pad, dilation, dx, dw, db);
      },
      "conv2d");
}

Var conv2d(Graph& g, Var input, ConvParams& p) {
  const Var w = g.param(p.weight);
  const Var b = p.bias.empty() ? Var{} : g.param(p.bias);
  return conv2d(g, input, w, b, p.stride, p.pad, p.dilation);
}

Var depthwise_conv2d(Graph& g, Var input, Var kernels, Var bias) {
  Tensor4 y = depthwise_conv2d(g.value(input), g.value(kernels),
                               bias.valid() ? g.value(bias) : Tensor4());
  std::vector<Var> ins{input, kernels};
  if (bias.valid()) ins.push_back(bias);
  return g.record(
      std::move(y), ins,
      [=](Graph& gr, const Tensor4& dy) {
        const Tensor4& x = gr.value(input);
        const Tensor4& K = gr.value(kernels);
        Tensor4* dx = gr.needs_grad(input) ? &gr.grad(input) : nullptr;
        Tensor4* dk = gr.needs_grad(kernels) ? &gr.grad(kernels) : nullptr;
        Tensor4* db = bias.valid() && gr.needs_grad(bias) ? &gr.grad(bias) : nullptr;
        const int kh = K.h(), kw = K.w();
        for (int b = 0; b < dy.n(); ++b) {
          for (int k = 0; k < dy.c(); ++k) {
            for (int oy = 0; oy < dy.h(); ++oy) {
              for (int ox = 0; ox < dy.w(); ++ox) {
                const real go = dy(b, k, oy, ox);
                if (db != nullptr) (*db)[k] += go;
                for (int ky = 0; ky < kh; ++ky) {
                  for (int kx = 0; kx < kw; ++kx) {
                    if (dk != nullptr) (*dk)(k, 0, ky, kx) += go * x(b, k, oy + ky, ox + kx);
                    if (dx != nullptr) (*dx)(b, k, oy + ky, ox + kx) += go * K(k, 0, ky, kx);
                  }
                }
              }
            }
          }
        }
      },
      "depthwise_conv2d");
}

Var dense(Graph& g, Var input, Var weight, Var bias) {
  DenseParams p{g.value(weight), g.value(bias)};
  Tensor4 y = dense(g.value(input), p);
  return g.record(
      std::move(y), {input, weight, bias},
      [=](Graph& gr, const Tensor4& dy) {
        const Tensor4& x = gr.value(input);
        const Tensor4& W = gr.value(weight);
        const int in = W.c(), out = W.n();
        Tensor4* dx = gr.needs_grad(input) ? &gr.grad(input) : nullptr;
        Tensor4* dw = gr.needs_grad(weight) ? &gr.grad(weight) : nullptr;
        Tensor4* db = gr.needs_grad(bias) ? &gr.grad(bias) : nullptr;
        for (int b = 0; b < x.n(); ++b) {
          const real* xr = x.ptr() + static_cast<std::size_t>(b) * in;
          for (int o = 0; o < out; ++o) {
            const real go = dy[static_cast<std::size_t>(b) * out + o];
            if (go == 0) continue;
            if (db != nullptr) (*db)[o] += go;
            const real* wr = W.ptr() + static_cast<std::size_t>(o) * in;
            if (dw != nullptr) {
              real* dwr = dw->ptr() + static_cast<std::size_t>(o) * in;
              for (int i = 0; i < in; ++i) dwr[i] += go * xr[i];
            }
            if (dx != nullptr) {
              real* dxr = dx->ptr() + static_cast<std::size_t>(b) * in;
              for (int i = 0; i < in; ++i) dxr[i] += go * wr[i];
            }
          }
        }
      },
      "dense");
}

Var dense(Graph& g, Var input, DenseParams& p) {
  return dense(g, input, g.param(p.weight), g.param(p.bias));
}

Var relu(Graph& g, Var x) {
  return g.record(
      relu(g.value(x)), {x},
      [=](Graph& gr, const Tensor4& dy) {
        const Tensor4& in = gr.value(x);
        Tensor4& dx = gr.grad(x);
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (in[i] > 0) dx[i] += dy[i];
        }
      },
      "relu");
}

Var sigmoid(Graph& g, Var x) {
  Tensor4 y = sigmoid(g.value(x));
  Tensor4 saved = y;
  return g.record(
      std::move(y), {x},
      [=, saved = std::move(saved)](Graph& gr, const Tensor4& dy) {
        Tensor4& dx = gr.grad(x);
        for (std::size_t i = 0; i < saved.size(); ++i) dx[i] += dy[i] * saved[i] * (1 - saved[i]);
      },
      "sigmoid");
}

Var broadcast_mul(Graph& g, Var features, Var gate) {
  Tensor4 y = broadcast_mul(g.value(features), g.value(gate));
  return g.record(
      std::move(y), {features, gate},
      [=](Graph& gr, const Tensor4& dy) {
        const Tensor4& f = gr.value(features);
        const Tensor4& gt = gr.value(gate);
        const Shape& fs = f.shape();
        const GateMode mode = gate_mode(fs, gt.shape());
        Tensor4* df = gr.needs_grad(features) ? &gr.grad(features) : nullptr;
        Tensor4* dg = gr.needs_grad(gate) ? &gr.grad(gate) : nullptr;
        const std::size_t plane = fs.plane();
        for (int b = 0; b < fs.n; ++b) {
          for (int k = 0; k < fs.c; ++k) {
            const std::size_t base = (static_cast<std::size_t>(b) * fs.c + k) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              const std::size_t gi = gate_index(mode, fs, b, k, p);
              if (df != nullptr) (*df)[base + p] += dy[base + p] * gt[gi];
              if (dg != nullptr) (*dg)[gi] += dy[base + p] * f[base + p];
            }
          }
        }
      },
      "broadcast_mul");
}

Var add(Graph& g, Var a, Var b) {
  return g.record(
      add(g.value(a), g.value(b)), {a, b},
      [=](Graph& gr, const Tensor4& dy) {
        if (gr.needs_grad(a)) add_into(gr.grad(a), dy);
        if (gr.needs_grad(b)) add_into(gr.grad(b), dy);
      },
      "add");
}

Var concat_channels(Graph& g, std::span<const Var> parts) {
  std::vector<Tensor4> values;
  std::vector<int> channels;
  values.reserve(parts.size());
  for (Var v : parts) {
    values.push_back(g.value(v));
    channels.push_back(g.value(v).c());
  }
  Tensor4 y = concat_channels(values);
  std::vector<Var> ins(parts.begin(), parts.end());
  return g.record(
      std::move(y), ins,
      [ins, channels](Graph& gr, const Tensor4& dy) {
        auto pieces = split_channels(dy, channels);
        for (std::size_t i = 0; i < ins.size(); ++i) {
          if (gr.needs_grad(ins[i])) add_into(gr.grad(ins[i]), pieces[i]);
        }
      },
      "concat_channels");
}

Var reshape(Graph& g, Var x, Shape shape) {
  return g.record(
      g.value(x).reshaped(shape), {x},
      [=](Graph& gr, const Tensor4& dy) {
        Tensor4& dx = gr.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      },
      "reshape");
}

Var upsample_nearest(Graph& g, Var x, int out_h, int out_w) {
  return g.record(
      upsample_nearest(g.value(x), out_h, out_w), {x},
      [=](Graph& gr, const Tensor4& dy) {
        Tensor4& dx = gr.grad(x);
        for (int b = 0; b < dy.n(); ++b) {
          for (int k = 0; k < dy.c(); ++k) {
            for (int i = 0; i < out_h; ++i) {
              const int si = i * dx.h() / out_h;
              for (int j = 0; j < out_w; ++j) dx(b, k, si, j * dx.w() / out_w) += dy(b, k, i, j);
            }
          }
        }
      },
      "upsample_nearest");
}

Var scale(Graph& g, Var x, real factor) {
  Tensor4 y = g.value(x);
  for (real& v : y.data()) v *= factor;
  return g.record(
      std::move(y), {x},
      [=](Graph& gr, const Tensor4& dy) {
        Tensor4& dx = gr.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += factor * dy[i];
      },
      "scale");
}

Var sum(Graph& g, Var x) {
  real acc = 0;
  for (real v : g.value(x).data()) acc += v;
  return g.record(
      Tensor4::scalar(acc), {x},
      [=](Graph& gr, const Tensor4& dy) {
        Tensor4& dx = gr.grad(x);
        for (real& v : dx.data()) v += dy[0];
      },
      "sum");
}

Var select_rows(Graph& g, Var x, std::span<const int> indices) {
  const Tensor4& in = g.value(x);
  const std::size_t row = static_cast<std::size_t>(in.c()) * in.h() * in.w();
  Tensor4 y({static_cast<int>(indices.size()), in.c(), in.h(), in.w()});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= in.n()) throw DimensionError("select_rows: index out of range");
    std::copy_n(in.ptr() + indices[r] * row, row, y.ptr() + r * row);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return g.record(
      std::move(y), {x},
      [=, idx = std::move(idx)](Graph& gr, const Tensor4& dy) {
        Tensor4& dx = gr.grad(x);
        for (std::size_t r = 0; r < idx.size(); ++r) {
          real* dst = dx.ptr() + idx[r] * row;
          const real* src = dy.ptr() + r * row;
          for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
        }
      },
      "select_rows");
}

Var anchor_rows(Graph& g, Var x, int per_anchor) {
  const Tensor4& in = g.value(x);
  if (in.n() != 1 || per_anchor < 1 || in.c() % per_anchor != 0) {
    throw DimensionError("anchor_rows: input " + in.shape().str() + " not (1, A*m, H, W)");
  }
  const int A = in.c() / per_anchor, H = in.h(), W = in.w();
  Tensor4 y({H * W * A, per_anchor, 1, 1});
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      for (int a = 0; a < A; ++a) {
        const int r = (i * W + j) * A + a;
        for (int q = 0; q < per_anchor; ++q) y(r, q, 0, 0) = in(0, a * per_anchor + q, i, j);
      }
    }
  }
  return g.record(
      std::move(y), {x},
      [=](Graph& gr, const Tensor4& dy) {
        Tensor4& dx = gr.grad(x);
        for (int i = 0; i < H; ++i) {
          for (int j = 0; j < W; ++j) {
            for (int a = 0; a < A; ++a) {
              const int r = (i * W + j) * A + a;
              for (int q = 0; q < per_anchor; ++q) dx(0, a * per_anchor + q, i, j) += dy(r, q, 0, 0);
            }
          }
        }
      },
      "anchor_rows");
}

}  // namespace cdon
