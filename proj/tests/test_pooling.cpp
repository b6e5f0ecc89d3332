#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cdon/grad_check.hpp"
#include "cdon/pooling.hpp"
#include "oracles.hpp"

using namespace cdon;

namespace {

RoI random_roi(std::mt19937_64& rng, real map_extent, real scale) {
  std::uniform_real_distribution<real> pos(0, map_extent * real(0.6));
  std::uniform_real_distribution<real> size(real(0.5), map_extent * real(0.6));
  const real x = pos(rng), y = pos(rng);
  return {{x / scale, y / scale, (x + size(rng)) / scale, (y + size(rng)) / scale}, scale};
}

PSRoIMaps random_maps(std::mt19937_64& rng, int k, int classes, int h, int w) {
  return {oracle::random_tensor({1, classes * k * k, h, w}, rng), k, classes};
}

}  // namespace

TEST(Bilinear, Cases) {
  const Tensor4 m({1, 1, 2, 3}, std::vector<real>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(bilinear_sample(m.ptr(), 2, 3, 2, 1), 6);
  EXPECT_DOUBLE_EQ(bilinear_sample(m.ptr(), 2, 3, 0.5, 0), 1.5);
  EXPECT_DOUBLE_EQ(bilinear_sample(m.ptr(), 2, 3, 2.5, 0), 1.5);  // right neighbour outside
  std::mt19937_64 rng(31);
  const Tensor4 r = oracle::random_tensor({1, 1, 5, 6}, rng);
  std::uniform_real_distribution<real> u(-1, 6);
  for (int t = 0; t < 200; ++t) {
    const real x = u(rng), y = u(rng);
    EXPECT_NEAR(bilinear_sample(r.ptr(), 5, 6, x, y), oracle::bilinear(r, 0, x, y), 1e-14);
    EXPECT_EQ(bilinear_sample_grad(r.ptr(), 5, 6, x, y).value, bilinear_sample(r.ptr(), 5, 6, x, y));
  }
}

TEST(RoiMaxPool, ConstantGlobalAndOracle) {
  const Tensor4 c({1, 2, 6, 6}, 3.25);
  const Tensor4 pc = roi_max_pool(c, RoI{{0, 0, 5, 5}, 1}, 3, 3);
  for (real v : pc.data()) EXPECT_EQ(v, 3.25);

  std::mt19937_64 rng(32);
  const Tensor4 f = oracle::random_tensor({1, 3, 8, 8}, rng);
  const Tensor4 g = roi_max_pool(f, RoI{{0, 0, 7, 7}, 1}, 1, 1);
  for (int ch = 0; ch < 3; ++ch) {
    real mx = f.plane(0, ch)[0];
    for (std::size_t p = 0; p < 64; ++p) mx = std::max(mx, f.plane(0, ch)[p]);
    EXPECT_EQ(g[ch], mx);
  }
  const RoI fixture{{1, 1, 6.5, 7.2}, 1};
  EXPECT_TRUE(roi_max_pool(f, fixture, 3, 3).same_as(oracle::roi_max_pool(f, fixture, 3, 3)));
  for (int t = 0; t < 100; ++t) {
    const RoI r = random_roi(rng, 8, 0.5);
    EXPECT_TRUE(roi_max_pool(f, r, 3, 4).same_as(oracle::roi_max_pool(f, r, 3, 4)));
  }
  EXPECT_THROW(roi_max_pool(f, RoI{{40, 40, 50, 50}, 1}, 2, 2), DegenerateRoiError);
}

TEST(RoiMaxPool, GradientRoutesToArgmax) {
  std::mt19937_64 rng(33);
  const std::vector<RoI> rois = {{{0, 0, 9, 7}, 0.5}, {{2, 2, 11, 11}, 0.5}};
  const GradCheckReport rep = grad_check(
      [&](Graph& g, std::span<const Var> in) { return sum(g, roi_max_pool(g, in[0], rois, 2, 2)); },
      {oracle::random_tensor({1, 2, 6, 6}, rng)});
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(PsRoiPool, ConstantSelectorAndOracle) {
  const int k = 3;
  PSRoIMaps cst{Tensor4({1, 2 * k * k, 6, 7}, 1.75), k, 2};
  const PooledScores s = psroi_pool(cst, RoI{{1, 1, 5, 5}, 1});
  for (real v : s.values.data()) EXPECT_DOUBLE_EQ(v, 1.75);

  PSRoIMaps sel{Tensor4({1, 2 * k * k, 6, 6}, 0), k, 2};
  for (std::size_t p = 0; p < 36; ++p) sel.maps.plane(0, sel.channel(1, 0, 0))[p] = 7;
  const PooledScores t = psroi_pool(sel, RoI{{0, 0, 6, 6}, 1});
  EXPECT_DOUBLE_EQ(t(0, 1, 0, 0), 7);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i + j > 0) EXPECT_EQ(t(0, 1, i, j), 0);

  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 100; ++trial) {
    const int kk = 1 + 2 * (trial % 3);
    const PSRoIMaps m = random_maps(rng, kk, 2, 9, 10);
    const std::vector<RoI> rois = {random_roi(rng, 9, 0.25), random_roi(rng, 9, 1)};
    const Tensor4 got = psroi_pool(m, rois).values;
    const Tensor4 want = oracle::psroi(m.maps, rois, kk, 2);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(PsRoiPool, SharedChannelsEqualAveragePool) {
  std::mt19937_64 rng(35);
  const int k = 2;
  const Tensor4 base = oracle::random_tensor({1, 1, 8, 8}, rng);
  PSRoIMaps m{Tensor4({1, k * k, 8, 8}), k, 1};
  for (int c = 0; c < k * k; ++c)
    for (std::size_t p = 0; p < 64; ++p) m.maps.plane(0, c)[p] = base[p];
  // Integer RoI (2,2)-(6,6): bins of 2x2 cells at integer sample points.
  const PooledScores s = psroi_pool(m, RoI{{2, 2, 6, 6}, 1});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      real acc = 0;
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) acc += base(0, 0, 2 + 2 * i + y, 2 + 2 * j + x);
      EXPECT_NEAR(s(0, 0, i, j), acc / 4, 1e-14);
    }
  EXPECT_EQ(s.counts[0], 4);
}

TEST(PsRoiPool, TranslationEquivariance) {
  std::mt19937_64 rng(36);
  const int k = 3;
  const PSRoIMaps m = random_maps(rng, k, 2, 10, 10);
  PSRoIMaps shifted{Tensor4({1, 2 * k * k, 13, 12}, 0), k, 2};
  for (int c = 0; c < 2 * k * k; ++c)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x) shifted.maps(0, c, y + 3, x + 2) = m.maps(0, c, y, x);
  const RoI r{{1.3, 0.7, 7.9, 8.2}, 1};
  const RoI rs{{3.3, 3.7, 9.9, 11.2}, 1};
  const PooledScores a = psroi_pool(m, r), b = psroi_pool(shifted, rs);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(PsRoiPool, Errors) {
  PSRoIMaps bad{Tensor4({1, 5, 4, 4}), 3, 2};
  EXPECT_THROW(bad.validate(), DimensionError);
  EXPECT_THROW(psroi_pool(bad, RoI{{0, 0, 2, 2}, 1}), DimensionError);
}

TEST(Deformable, ZeroOffsetsReduceToPsRoi) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + 2 * (trial % 3);
    const PSRoIMaps m = random_maps(rng, k, 2, 8, 9);
    const std::vector<RoI> rois = {random_roi(rng, 8, 0.5)};
    const OffsetField zero{Tensor4({1, 2, k, k}, 0), 0.1};
    const Tensor4 a = deformable_psroi_pool(m, rois, zero).values;
    const Tensor4 b = psroi_pool(m, rois).values;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
  // Integer sample points: bit-identical.
  const PSRoIMaps m = random_maps(rng, 3, 2, 9, 9);
  const RoI r{{0, 0, 9, 9}, 1};
  EXPECT_TRUE(deformable_psroi_pool(m, std::span<const RoI>(&r, 1),
                                    OffsetField{Tensor4({1, 2, 3, 3}, 0), 0.1})
                  .values.same_as(psroi_pool(m, r).values));
}

TEST(Deformable, RampShiftsByExactPixels) {
  const int k = 2;
  PSRoIMaps m{Tensor4({1, k * k, 20, 20}), k, 1};
  for (int c = 0; c < k * k; ++c)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) m.maps(0, c, y, x) = x;
  const RoI r{{4, 4, 12, 12}, 1};
  // Pixel shift = offset * gamma * roi_w with roi_w = 8.
  OffsetField off{Tensor4({1, 2, k, k}, 0), 0.1};
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) off.offsets(0, 0, i, j) = 2 / (0.1 * 8);
  const PooledScores a = psroi_pool(m, r);
  const PooledScores b = deformable_psroi_pool(m, std::span<const RoI>(&r, 1), off);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(b.values[i] - a.values[i], 2, 1e-12);
  // Same sampling on a y-ramp is unaffected by an x shift.
  for (int c = 0; c < k * k; ++c)
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) m.maps(0, c, y, x) = y;
  const PooledScores c = psroi_pool(m, r);
  const PooledScores d = deformable_psroi_pool(m, std::span<const RoI>(&r, 1), off);
  for (std::size_t i = 0; i < c.values.size(); ++i) EXPECT_NEAR(d.values[i], c.values[i], 1e-12);
}

TEST(Deformable, MatchesDisplacedOracle) {
  std::mt19937_64 rng(38);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 3;
    const PSRoIMaps m = random_maps(rng, k, 2, 8, 8);
    const std::vector<RoI> rois = {random_roi(rng, 8, 0.5), random_roi(rng, 8, 1)};
    const OffsetField off{oracle::random_tensor({2, 2, k, k}, rng, -2, 2), 0.1};
    const Tensor4 got = deformable_psroi_pool(m, rois, off).values;
    const Tensor4 want = oracle::psroi(m.maps, rois, k, 2, &off.offsets, 0.1);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Deformable, GradientsWrtMapsAndOffsets) {
  std::mt19937_64 rng(39);
  const int k = 3;
  const std::vector<RoI> rois = {{{1.1, 0.6, 11.3, 13.7}, 0.5}, {{3.2, 2.9, 9.4, 8.1}, 0.5}};
  const Tensor4 maps = oracle::random_tensor({1, 2 * k * k, 7, 7}, rng);
  // Offsets chosen so samples sit at non-integer positions.
  const Tensor4 off = oracle::random_tensor({2, 2, k, k}, rng, -0.9, 0.9);
  const GradCheckReport rep = grad_check(
      [&](Graph& g, std::span<const Var> in) {
        return sum(g, sigmoid(g, deformable_psroi_pool(g, in[0], in[1], rois, k, 2, 0.1)));
      },
      {maps, off});
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
  EXPECT_GT(rep.checked, maps.size());
}

TEST(PsRoiPool, Gradient) {
  std::mt19937_64 rng(40);
  const int k = 2;
  const std::vector<RoI> rois = {{{0.5, 1.5, 9.3, 11.1}, 0.5}};
  const GradCheckReport rep = grad_check(
      [&](Graph& g, std::span<const Var> in) {
        return sum(g, sigmoid(g, psroi_pool(g, in[0], rois, k, 2)));
      },
      {oracle::random_tensor({1, 2 * k * k, 6, 6}, rng)});
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(PredictOffsets, ZeroBiasAndComposition) {
  std::mt19937_64 rng(41);
  const int k = 3;
  const Tensor4 feat = oracle::random_tensor({1, 4, 8, 8}, rng);
  const std::vector<RoI> rois = {{{1, 1, 13, 11}, 0.5}};
  ConvParams branch = ConvParams::zeros(2 * k * k, 4, 3, 3, 1, 1);
  const OffsetField none = predict_offsets(feat, rois, branch, k);
  for (real v : none.offsets.data()) EXPECT_EQ(v, 0);

  for (int c = 0; c < 2 * k * k; ++c) branch.bias[c] = 0.5 + c;
  const OffsetField f = predict_offsets(feat, rois, branch, k);
  for (int d = 0; d < 2; ++d)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) EXPECT_NEAR(f.offsets(0, d, i, j), 0.5 + (d * k + i) * k + j, 1e-12);

  branch.weight = oracle::random_tensor(branch.weight.shape(), rng);
  const OffsetField g = predict_offsets(feat, rois, branch, k);
  const Tensor4 composed = oracle::psroi(
      oracle::conv2d(feat, branch.weight, branch.bias, 1, 1, 1), rois, k, 2);
  for (std::size_t i = 0; i < composed.size(); ++i) EXPECT_NEAR(g.offsets[i], composed[i], 1e-12);

  Graph gr;
  ConvParams bcopy = branch;
  const Var v = predict_offsets(gr, gr.constant(feat), bcopy, rois, k);
  EXPECT_TRUE(gr.value(v).same_as(g.offsets));
}

TEST(Vote, Means) {
  PooledScores s;
  s.values = Tensor4({1, 2, 3, 3}, 0);
  s.values(0, 0, 1, 1) = 9;
  for (int i = 0; i < 9; ++i) s.values[9 + i] = 4;
  const Tensor4 v = vote(s);
  EXPECT_DOUBLE_EQ(v[0], 1.0);
  EXPECT_DOUBLE_EQ(v[1], 4.0);
}
