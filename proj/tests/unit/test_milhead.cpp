#include <gtest/gtest.h>

#include <cmath>

#include "capg/error.hpp"
#include "capg/milhead.hpp"
#include "oracles/oracles.hpp"

using namespace capg;

namespace {

InstanceBag random_bag(Rng& rng, std::size_t boxes, std::size_t dim, std::vector<double> labels) {
  InstanceBag bag;
  bag.feature_dim = dim;
  bag.boxes.assign(boxes, make_box(0, 0, 1, 1));
  for (std::size_t i = 0; i < boxes * dim; ++i) bag.features.push_back(rng.normal());
  bag.labels = std::move(labels);
  return bag;
}

MilParams random_head(Rng& rng, std::size_t classes, std::size_t dim) {
  auto p = MilParams::zeros(classes, dim);
  for (double& w : p.weights) w = rng.normal();
  for (double& b : p.bias) b = rng.normal() * 0.3;
  return p;
}

}  // namespace

TEST(Labels, ExactWordMatchesNormalized) {
  Caption c;
  c.tokens = {4, 7, 4, 2};
  const std::vector<std::size_t> classes{2, 3, 4};
  EXPECT_EQ(extract_labels(c, classes), (std::vector<double>{0.5, 0.0, 0.5}));
  c.tokens = {9};
  const auto none = extract_labels(c, classes);
  EXPECT_EQ(none, (std::vector<double>{0, 0, 0}));
  EXPECT_FALSE(labels_usable(none));
  EXPECT_TRUE(labels_usable(std::vector<double>{0, 1}));
}

TEST(Bags, MatchBoxesByIou) {
  const std::vector<Box> props{make_box(0, 0, 0.5, 0.5), make_box(0.1, 0, 0.6, 0.5),
                               make_box(0.5, 0.5, 1, 1)};
  const std::vector<Box> pgt{make_box(0, 0, 0.5, 0.5)};
  const auto m = match_boxes(props, pgt, 0.5);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[1], props[1]);
  EXPECT_TRUE(match_boxes(props, std::vector<Box>{}, 0.5).empty());
}

TEST(Bags, BoxFeatureAveragesCoveredCells) {
  Grid3D f(3, 3, 1);
  for (std::size_t i = 0; i < 9; ++i) f.cell(i)[0] = static_cast<double>(i);
  // Centres at 0, 0.5, 1 on each axis.
  EXPECT_EQ(box_feature(f, make_box(0, 0, 1, 1)), std::vector<double>{4.0});
  EXPECT_EQ(box_feature(f, make_box(0, 0, 0.6, 0.2)), std::vector<double>{0.5});
  // No centre inside: nearest cell to (0.3, 0.3) is the middle one.
  EXPECT_EQ(box_feature(f, make_box(0.2, 0.2, 0.4, 0.4)), std::vector<double>{4.0});
  EXPECT_THROW(make_bag("x", f, {}, {1.0}), InvalidArgument);
}

TEST(Head, ProbabilityIsSoftmaxOfColumnMaxima) {
  const std::vector<double> scores{1.0, 0.0, -1.0, 3.0};  // 2 boxes x 2 classes
  const auto p = mil_probability(scores, 2, 2);
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(2.0)), 1e-15);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(Head, LossClampsZeroProbability) {
  EXPECT_NEAR(mil_loss(std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}),
              -std::log(1e-12), 1e-9);
  EXPECT_DOUBLE_EQ(mil_loss(std::vector<double>{0.25, 0.75}, std::vector<double>{0.0, 1.0}),
                   -std::log(0.75));
}

TEST(Head, GradientsMatchFiniteDifferences) {
  Rng rng(404);
  for (int t = 0; t < 30; ++t) {
    const std::size_t classes = 2 + rng.index(4), dim = 1 + rng.index(4), boxes = 1 + rng.index(5);
    std::vector<double> labels(classes, 0.0);
    labels[rng.index(classes)] = 1.0;
    labels[rng.index(classes)] = 1.0;
    double mass = 0.0;
    for (double y : labels) mass += y;
    for (double& y : labels) y /= mass;
    const InstanceBag bag = random_bag(rng, boxes, dim, labels);
    MilParams params = random_head(rng, classes, dim);
    const auto g = mil_gradients(bag, params);
    auto f = [&] { return oracle::mil_loss(bag.features, boxes, dim, bag.labels, params); };
    EXPECT_NEAR(g.loss, f(), 1e-12);
    EXPECT_EQ(oracle::check_gradient(params.weights, g.grads.weights, f).failed, 0u);
    EXPECT_EQ(oracle::check_gradient(params.bias, g.grads.bias, f).failed, 0u);
  }
}

TEST(Head, ValidationAndShapes) {
  auto p = MilParams::zeros(3, 2);
  EXPECT_NO_THROW(p.validate());
  p.bias.push_back(0.0);
  EXPECT_THROW(p.validate(), ShapeError);
  auto q = MilParams::random_uniform(3, 2, 5);
  EXPECT_EQ(q, MilParams::random_uniform(3, 2, 5));
  for (double w : q.weights) EXPECT_LE(std::abs(w), 0.01);
  q.weights[0] = INFINITY;
  EXPECT_THROW(q.validate(), NumericalError);
}

TEST(Training, LearnsSeparableBags) {
  Rng rng(9);
  // Class c lives along axis c; each bag holds one object box and two noise boxes.
  std::vector<InstanceBag> bags;
  for (int i = 0; i < 60; ++i) {
    const std::size_t c = static_cast<std::size_t>(i % 3);
    InstanceBag bag = random_bag(rng, 3, 3, std::vector<double>(3, 0.0));
    for (double& v : bag.features) v *= 0.1;
    bag.features[c] += 1.0;
    bag.labels[c] = 1.0;
    bags.push_back(bag);
  }
  MilConfig cfg;
  cfg.steps = 300;
  const auto init = MilParams::zeros(3, 3);
  const auto trained = train_mil(bags, init, cfg);
  EXPECT_EQ(mil_accuracy(bags, trained), 1.0);
  double before = 0.0, after = 0.0;
  for (const auto& b : bags) {
    before += mil_gradients(b, init).loss;
    after += mil_gradients(b, trained).loss;
  }
  EXPECT_LT(after, 0.2 * before);
  EXPECT_EQ(train_mil(bags, init, cfg), trained);
}

TEST(Training, RejectsUnusableInput) {
  Rng rng(1);
  std::vector<InstanceBag> bags{random_bag(rng, 2, 2, {0.0, 0.0})};
  EXPECT_THROW(train_mil(bags, MilParams::zeros(2, 2), {}), InvalidArgument);
}

TEST(Detect, UniformClassesWithoutHead) {
  Rng rng(3);
  const Grid3D f = oracle::random_fmap(rng, 4, 3);
  const auto g = GroundingParams::random_uniform({5, 3, 4}, 1, 0.5);
  const std::vector<Box> props = lattice_proposals(4, 1, 3);
  DetectConfig cfg;
  cfg.cam = {32, 32, 3, CamGate::Logit};
  cfg.top_k = 4;
  const std::vector<std::size_t> words{1, 3};
  const auto dets = detect(f, props, g, nullptr, words, cfg);
  ASSERT_LE(dets.size(), 4u);
  ASSERT_FALSE(dets.empty());
  const auto maps = class_activation_maps(f, words, g, cfg.cam);
  const auto ranked = nms(score_proposals(maps, props, cfg.scoring), cfg.scoring.nms_iou);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    EXPECT_EQ(dets[i].class_id, 0);
    EXPECT_NEAR(dets[i].score, ranked[i].score * 0.5, 1e-15);
  }
  const auto head = MilParams::zeros(3, 3);
  EXPECT_THROW(detect(f, props, g, &head, words, cfg), ShapeError);
}

TEST(Detect, HeadPicksTheClass) {
  Rng rng(4);
  const Grid3D f = oracle::random_fmap(rng, 4, 3);
  const auto g = GroundingParams::random_uniform({5, 3, 4}, 1, 0.5);
  auto head = MilParams::zeros(2, 3);
  head.bias = {0.0, 5.0};
  DetectConfig cfg;
  cfg.cam = {32, 32, 3, CamGate::Logit};
  const auto dets = detect(f, lattice_proposals(4, 1, 3), g, &head, std::vector<std::size_t>{1, 3}, cfg);
  for (const Box& b : dets) EXPECT_EQ(b.class_id, 1);
}
