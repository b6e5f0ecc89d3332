#include "cdon/grad_suite.hpp"

#include <functional>
#include <random>

#include "cdon/gating.hpp"
#include "cdon/heads.hpp"
#include "cdon/ops.hpp"
#include "cdon/pooling.hpp"

namespace cdon {

namespace {

using Rng64 = std::mt19937_64;

Tensor4 rand_tensor(Shape s, Rng64& rng, real lo = -1, real hi = 1) {
  std::uniform_real_distribution<real> u(lo, hi);
  Tensor4 t(s);
  for (real& v : t.data()) v = u(rng);
  return t;
}

void randomize(Tensor4& t, Rng64& rng) {
  t = rand_tensor(t.shape(), rng, real(-0.5), real(0.5));
  t.set_requires_grad(true);
}

GradCheckReport check_gate(GateKind kind, bool params, const GradCheckOptions& opt) {
  Rng64 rng(kind == GateKind::spatio ? 901 : 902);
  GateParams p = GateParams::make(kind, 3, 3, 3, 4);
  if (kind == GateKind::spatio) {
    randomize(p.conv.weight, rng);
    randomize(p.conv.bias, rng);
  } else {
    randomize(p.dw_kernels, rng);
    randomize(p.dw_bias, rng);
  }
  randomize(p.fc1.weight, rng);
  randomize(p.fc1.bias, rng);
  randomize(p.fc2.weight, rng);
  randomize(p.fc2.bias, rng);
  const Tensor4 x = rand_tensor({2, 3, 3, 3}, rng);
  if (!params) {
    return grad_check(
        [&](Graph& g, std::span<const Var> in) {
          GateParams& q = p;
          return sum(g, modulate(g, in[0], gate_forward(g, in[0], q)));
        },
        {x}, opt);
  }
  const Tensor4 stage = kind == GateKind::spatio ? p.conv.weight : p.dw_kernels;
  return grad_check(
      [&](Graph& g, std::span<const Var> in) {
        Var gate;
        if (kind == GateKind::spatio) {
          Var m = relu(g, conv2d(g, in[0], in[1], g.param(p.conv.bias), 1, 0, 1));
          Var h = relu(g, dense(g, m, in[2], g.param(p.fc1.bias)));
          gate = reshape(g, sigmoid(g, dense(g, h, in[3], g.param(p.fc2.bias))), {2, 1, 3, 3});
        } else {
          Var v = relu(g, depthwise_conv2d(g, in[0], in[1], g.param(p.dw_bias)));
          Var h = relu(g, dense(g, v, in[2], g.param(p.fc1.bias)));
          gate = sigmoid(g, dense(g, h, in[3], g.param(p.fc2.bias)));
        }
        return sum(g, sigmoid(g, modulate(g, in[0], gate)));
      },
      {x, stage, p.fc1.weight, p.fc2.weight}, opt);
}

struct SuiteEntry {
  std::string name;
  std::function<GradCheckReport(const GradCheckOptions&)> run;
};

std::vector<SuiteEntry> entries() {
  std::vector<SuiteEntry> e;
  e.push_back({"conv2d", [](const GradCheckOptions& o) {
                 Rng64 rng(911);
                 return grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, conv2d(g, in[0], in[1], in[2], 2, 1, 1)));
                     },
                     {rand_tensor({1, 2, 5, 6}, rng), rand_tensor({3, 2, 3, 3}, rng),
                      rand_tensor({1, 3, 1, 1}, rng)},
                     o);
               }});
  e.push_back({"conv2d_dilated", [](const GradCheckOptions& o) {
                 Rng64 rng(912);
                 return grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, conv2d(g, in[0], in[1], in[2], 1, 2, 2)));
                     },
                     {rand_tensor({1, 2, 5, 5}, rng), rand_tensor({2, 2, 3, 3}, rng),
                      rand_tensor({1, 2, 1, 1}, rng)},
                     o);
               }});
  e.push_back({"depthwise_conv2d", [](const GradCheckOptions& o) {
                 Rng64 rng(913);
                 return grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, depthwise_conv2d(g, in[0], in[1], in[2])));
                     },
                     {rand_tensor({2, 3, 4, 4}, rng), rand_tensor({3, 1, 3, 3}, rng),
                      rand_tensor({1, 3, 1, 1}, rng)},
                     o);
               }});
  e.push_back({"dense", [](const GradCheckOptions& o) {
                 Rng64 rng(914);
                 return grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, dense(g, in[0], in[1], in[2])));
                     },
                     {rand_tensor({3, 2, 2, 1}, rng), rand_tensor({5, 4, 1, 1}, rng),
                      rand_tensor({1, 5, 1, 1}, rng)},
                     o);
               }});
  e.push_back({"sigmoid", [](const GradCheckOptions& o) {
                 Rng64 rng(915);
                 return grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, scale(g, sigmoid(g, in[0]), 3)));
                     },
                     {rand_tensor({2, 3, 2, 2}, rng, -4, 4)}, o);
               }});
  e.push_back({"relu", [](const GradCheckOptions& o) {
                 Rng64 rng(916);
                 return grad_check(
                     [](Graph& g, std::span<const Var> in) { return sum(g, sigmoid(g, relu(g, in[0]))); },
                     {rand_tensor({2, 3, 2, 2}, rng)}, o);
               }});
  e.push_back({"broadcast_mul", [](const GradCheckOptions& o) {
                 Rng64 rng(917);
                 const Tensor4 x = rand_tensor({2, 3, 3, 4}, rng);
                 const GradCheckReport spatial = grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, broadcast_mul(g, in[0], in[1])));
                     },
                     {x, rand_tensor({2, 1, 3, 4}, rng)}, o);
                 GradCheckReport channel = grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, broadcast_mul(g, in[0], in[1])));
                     },
                     {x, rand_tensor({2, 3, 1, 1}, rng)}, o);
                 channel.entries.insert(channel.entries.end(), spatial.entries.begin(),
                                        spatial.entries.end());
                 channel.max_rel_error = std::max(channel.max_rel_error, spatial.max_rel_error);
                 channel.checked += spatial.checked;
                 channel.skipped += spatial.skipped;
                 channel.reliable = channel.reliable && spatial.reliable;
                 channel.passed = channel.passed && spatial.passed;
                 return channel;
               }});
  e.push_back({"roi_max_pool", [](const GradCheckOptions& o) {
                 Rng64 rng(918);
                 const std::vector<RoI> rois = {{{1, 2, 13, 14}, 0.5}, {{0, 0, 8, 5}, 0.5}};
                 return grad_check(
                     [rois](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, roi_max_pool(g, in[0], rois, 3, 3)));
                     },
                     {rand_tensor({1, 2, 8, 8}, rng)}, o);
               }});
  e.push_back({"psroi_pool", [](const GradCheckOptions& o) {
                 Rng64 rng(919);
                 const std::vector<RoI> rois = {{{0.5, 1.5, 9.3, 11.1}, 0.5}, {{2, 2, 7, 9}, 0.5}};
                 return grad_check(
                     [rois](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, psroi_pool(g, in[0], rois, 3, 2)));
                     },
                     {rand_tensor({1, 18, 6, 6}, rng)}, o);
               }});
  e.push_back({"deformable_psroi_pool", [](const GradCheckOptions& o) {
                 Rng64 rng(920);
                 const std::vector<RoI> rois = {{{0.7, 1.3, 9.1, 10.6}, 0.5}, {{2.2, 0.4, 8.9, 7.3}, 0.5}};
                 return grad_check(
                     [rois](Graph& g, std::span<const Var> in) {
                       return sum(g, sigmoid(g, deformable_psroi_pool(g, in[0], in[1], rois, 3, 2,
                                                                      real(0.1))));
                     },
                     {rand_tensor({1, 18, 6, 6}, rng), rand_tensor({2, 2, 3, 3}, rng)}, o);
               }});
  e.push_back({"gate_forward_spatio", [](const GradCheckOptions& o) {
                 return check_gate(GateKind::spatio, false, o);
               }});
  e.push_back({"gate_forward_channel", [](const GradCheckOptions& o) {
                 return check_gate(GateKind::channel, false, o);
               }});
  e.push_back({"gate_params_spatio", [](const GradCheckOptions& o) {
                 return check_gate(GateKind::spatio, true, o);
               }});
  e.push_back({"gate_params_channel", [](const GradCheckOptions& o) {
                 return check_gate(GateKind::channel, true, o);
               }});
  e.push_back({"detection_loss", [](const GradCheckOptions& o) {
                 Rng64 rng(921);
                 std::vector<RoiTarget> targets(6);
                 for (int i = 0; i < 6; ++i) {
                   targets[i].label = i % 3 == 0 ? Label::negative
                                                 : (i % 3 == 1 ? Label::positive : Label::ignore);
                   if (targets[i].label == Label::positive) targets[i].deltas = Deltas{0.5, -1.7, 0.05, 2.2};
                 }
                 return grad_check(
                     [targets](Graph& g, std::span<const Var> in) {
                       return detection_loss(g, in[0], in[1], targets).total;
                     },
                     {rand_tensor({6, 2, 1, 1}, rng, -2, 2), rand_tensor({6, 4, 1, 1}, rng)}, o);
               }});
  e.push_back({"upsample_concat", [](const GradCheckOptions& o) {
                 Rng64 rng(922);
                 return grad_check(
                     [](Graph& g, std::span<const Var> in) {
                       const Var up = upsample_nearest(g, in[0], 7, 7);
                       const std::vector<Var> parts = {up, in[1]};
                       return sum(g, sigmoid(g, concat_channels(g, parts)));
                     },
                     {rand_tensor({2, 2, 3, 3}, rng), rand_tensor({2, 1, 7, 7}, rng)}, o);
               }});
  return e;
}

}  // namespace

std::vector<std::string> grad_suite_ops() {
  std::vector<std::string> names;
  for (const SuiteEntry& e : entries()) names.push_back(e.name);
  return names;
}

std::vector<GradSuiteResult> run_grad_suite(const std::string& only, const GradCheckOptions& options) {
  std::vector<GradSuiteResult> out;
  for (const SuiteEntry& e : entries()) {
    if (!only.empty() && e.name != only) continue;
    out.push_back({e.name, e.run(options)});
  }
  if (!only.empty() && out.empty()) throw ConfigError("grad-check: unknown op '" + only + "'");
  return out;
}

}  // namespace cdon
