#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "cdon/geometry.hpp"
#include "oracles.hpp"

using namespace cdon;

namespace {

Box random_int_box(std::mt19937_64& rng, int extent) {
  std::uniform_int_distribution<int> u(0, extent);
  int x1 = u(rng), x2 = u(rng), y1 = u(rng), y2 = u(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {real(x1), real(y1), real(x2 + 1), real(y2 + 1)};
}

Box random_box(std::mt19937_64& rng, real extent) {
  std::uniform_real_distribution<real> u(0, extent);
  std::uniform_real_distribution<real> s(2, extent / 2);
  const real x = u(rng), y = u(rng);
  return {x, y, x + s(rng), y + s(rng)};
}

}  // namespace

TEST(Iou, Fixtures) {
  const Box a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {20, 20, 30, 30}), 0.0);
  EXPECT_NEAR(iou(a, {5, 0, 15, 10}), 50.0 / 150.0, 1e-15);
  EXPECT_NEAR(oracle::iou_raster(a, {5, 0, 15, 10}), 50.0 / 150.0, 1e-15);
  EXPECT_DOUBLE_EQ(iou(a, {3, 3, 3, 8}), 0.0);
}

TEST(Iou, SymmetricBoundedAndMatchesRaster) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 300; ++t) {
    const Box a = random_int_box(rng, 63), b = random_int_box(rng, 63);
    const real o = iou(a, b);
    EXPECT_EQ(o, iou(b, a));
    EXPECT_GE(o, 0);
    EXPECT_LE(o, 1);
    EXPECT_NEAR(o, oracle::iou_raster(a, b), 1e-9);
  }
}

TEST(Anchors, SingleCellAndCounts) {
  AnchorConfig cfg;
  cfg.scales = {50};
  const auto one = generate_anchors(1, 1, cfg);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_DOUBLE_EQ(one[0].cx(), 8);
  EXPECT_DOUBLE_EQ(one[0].cy(), 8);
  EXPECT_DOUBLE_EQ(one[0].height(), 50);
  EXPECT_NEAR(one[0].width(), 20.5, 1e-12);

  const AnchorConfig def;
  ASSERT_EQ(def.scales.size(), 9u);
  EXPECT_NEAR(def.scales.front(), 32, 1e-9);
  EXPECT_NEAR(def.scales.back(), 512, 1e-9);
  const auto many = generate_anchors(2, 2, def);
  EXPECT_EQ(many.size(), 36u);
  for (const Box& b : many) EXPECT_NEAR(b.width() / b.height() - 0.41, 0, 1e-12);
  // (row, column, scale) order.
  EXPECT_DOUBLE_EQ(many[9].cx(), 24);
  EXPECT_DOUBLE_EQ(many[9].cy(), 8);
  EXPECT_DOUBLE_EQ(many[18].cy(), 24);
}

TEST(Anchors, InvalidConfig) {
  AnchorConfig cfg;
  cfg.ratio = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(generate_anchors(0, 3, AnchorConfig{}), DimensionError);
}

TEST(AssignLabels, Cases) {
  const std::vector<Annotation> gts = {Annotation::make({0, 0, 10, 20}, {0, 0, 10, 20})};
  // Exact match, disjoint, IoU 0.5 (not the best for the gt).
  const std::vector<Box> props = {{0, 0, 10, 20}, {50, 50, 60, 70}, {0, 0, 10, 10}};
  const auto lab = assign_labels(props, gts);
  EXPECT_EQ(lab[0].label, Label::positive);
  EXPECT_DOUBLE_EQ(lab[0].max_iou, 1);
  ASSERT_TRUE(lab[0].target_deltas.has_value());
  EXPECT_EQ(lab[1].label, Label::negative);
  EXPECT_EQ(lab[2].label, Label::ignore);
  EXPECT_NEAR(lab[2].max_iou, 0.5, 1e-12);
}

TEST(AssignLabels, BestProposalIsPositiveAndIgnoreRegions) {
  const std::vector<Annotation> gts = {Annotation::make({0, 0, 10, 20}, {0, 0, 10, 20}),
                                       Annotation::make({100, 0, 110, 20}, {100, 0, 110, 20}, true)};
  const std::vector<Box> props = {{0, 0, 10, 10}, {0, 0, 10, 9}, {100, 0, 110, 20}};
  const auto lab = assign_labels(props, gts);
  EXPECT_EQ(lab[0].label, Label::positive);  // best IoU for gt 0 although < 0.7
  EXPECT_EQ(lab[1].label, Label::ignore);    // IoU 0.45, not the best for any gt
  EXPECT_EQ(lab[2].label, Label::ignore);    // overlaps only the ignore region
}

TEST(AssignLabels, EveryGtGetsAPositive) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 100; ++t) {
    std::vector<Annotation> gts;
    for (int i = 0; i < 3; ++i) {
      const Box b = random_box(rng, 80);
      gts.push_back(Annotation::make(b, b));
    }
    std::vector<Box> props;
    for (int i = 0; i < 20; ++i) props.push_back(random_box(rng, 80));
    const auto lab = assign_labels(props, gts);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      bool overlapped = false, positive = false;
      for (std::size_t p = 0; p < props.size(); ++p) {
        const real o = iou(props[p], gts[g].full);
        overlapped = overlapped || o > 0;
        if (lab[p].label == Label::positive && o > 0) positive = true;
      }
      if (overlapped) EXPECT_TRUE(positive);
    }
  }
}

TEST(Deltas, FixturesAndRoundTrip) {
  const Box a{10, 20, 30, 60};
  for (real v : encode_deltas(a, a)) EXPECT_DOUBLE_EQ(v, 0);
  const Deltas d = encode_deltas(a, {30, 20, 50, 60});
  EXPECT_DOUBLE_EQ(d[0], 1);
  EXPECT_DOUBLE_EQ(d[1], 0);
  EXPECT_DOUBLE_EQ(d[2], 0);
  EXPECT_DOUBLE_EQ(d[3], 0);
  std::mt19937_64 rng(23);
  for (int t = 0; t < 200; ++t) {
    const Box an = random_box(rng, 200), gt = random_box(rng, 200);
    const Box back = decode_deltas(an, encode_deltas(an, gt));
    EXPECT_NEAR(back.x1, gt.x1, 1e-9);
    EXPECT_NEAR(back.y1, gt.y1, 1e-9);
    EXPECT_NEAR(back.x2, gt.x2, 1e-9);
    EXPECT_NEAR(back.y2, gt.y2, 1e-9);
  }
  EXPECT_THROW(encode_deltas({0, 0, 0, 5}, a), DimensionError);
}

TEST(Nms, FixturesAndOracle) {
  const std::vector<Box> one = {{0, 0, 5, 5}};
  const std::vector<real> s1 = {0.3};
  EXPECT_EQ(nms(one, s1, 0.5), (std::vector<std::size_t>{0}));
  const std::vector<Box> two = {{0, 0, 5, 5}, {0, 0, 5, 5}};
  const std::vector<real> s2 = {0.8, 0.9};
  EXPECT_EQ(nms(two, s2, 0.5), (std::vector<std::size_t>{1}));

  std::mt19937_64 rng(24);
  std::uniform_real_distribution<real> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<Box> boxes;
    std::vector<real> scores;
    for (int i = 0; i < 20; ++i) {
      boxes.push_back(random_box(rng, 40));
      scores.push_back(t % 3 == 0 ? std::round(u(rng) * 4) / 4 : u(rng));
    }
    const auto kept = nms(boxes, scores, 0.4);
    EXPECT_EQ(std::set<std::size_t>(kept.begin(), kept.end()), oracle::nms(boxes, scores, 0.4));
    for (std::size_t a = 1; a < kept.size(); ++a) EXPECT_GE(scores[kept[a - 1]], scores[kept[a]]);
  }
}

TEST(Nms, PermutationInvariantForDistinctScores) {
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<real> u(0, 1);
  std::vector<Box> boxes;
  std::vector<real> scores;
  for (int i = 0; i < 30; ++i) {
    boxes.push_back(random_box(rng, 50));
    scores.push_back(u(rng));
  }
  std::set<std::pair<real, real>> base;
  for (std::size_t k : nms(boxes, scores, 0.5)) base.insert({boxes[k].x1, scores[k]});
  std::vector<std::size_t> perm(boxes.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Box> pb;
  std::vector<real> ps;
  for (std::size_t i : perm) {
    pb.push_back(boxes[i]);
    ps.push_back(scores[i]);
  }
  std::set<std::pair<real, real>> other;
  for (std::size_t k : nms(pb, ps, 0.5)) other.insert({pb[k].x1, ps[k]});
  EXPECT_EQ(base, other);
}

TEST(SampleMinibatch, CapsAndDeterminism) {
  std::vector<LabeledProposal> negs(300);
  Rng rng(1);
  EXPECT_EQ(sample_minibatch(negs, 256, 0.5, rng).size(), 256u);

  std::vector<LabeledProposal> mix(1010);
  for (int i = 0; i < 10; ++i) mix[i * 100].label = Label::positive;
  mix[5].label = Label::ignore;
  Rng r1(7), r2(7);
  const auto a = sample_minibatch(mix, 256, 0.5, r1);
  const auto b = sample_minibatch(mix, 256, 0.5, r2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 256u);
  int pos = 0;
  for (std::size_t i : a) {
    EXPECT_NE(mix[i].label, Label::ignore);
    pos += mix[i].label == Label::positive;
  }
  EXPECT_EQ(pos, 10);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));

  std::vector<LabeledProposal> many_pos(400);
  for (auto& p : many_pos) p.label = Label::positive;
  EXPECT_EQ(sample_minibatch(many_pos, 256, 0.5, r1).size(), 128u);
  EXPECT_THROW(sample_minibatch(mix, 0, 0.5, r1), UsageError);
}
