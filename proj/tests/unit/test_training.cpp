#include <gtest/gtest.h>

#include <cmath>

#include "capg/error.hpp"
#include "capg/training.hpp"
#include "oracles/oracles.hpp"

using namespace capg;

namespace {

std::vector<TrainingSample> random_samples(Rng& rng, std::size_t b, std::size_t n, std::size_t d,
                                           std::size_t vocab, std::size_t len) {
  std::vector<TrainingSample> out;
  for (std::size_t i = 0; i < b; ++i) {
    out.push_back({oracle::random_fmap(rng, n, d), oracle::random_caption(rng, vocab, len)});
  }
  return out;
}

TripletBatch batch_of(const std::vector<TrainingSample>& samples) {
  std::vector<const TrainingSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return TripletBatch(ptrs);
}

GroundingParams random_params(const ModelDims& dims, std::uint64_t seed) {
  auto p = GroundingParams::random_uniform(dims, seed, 0.6);
  Rng rng(seed * 31 + 1);
  p.img_score_bias = rng.uniform(-0.5, 0.5);
  p.txt_score_bias = rng.uniform(-0.5, 0.5);
  return p;
}

// Two 1x1 images whose features point at their own caption word.
std::vector<TrainingSample> separable_pair() {
  std::vector<TrainingSample> s(2);
  s[0].fmap = Grid3D(1, 1, 2, std::vector<double>{1, 0});
  s[1].fmap = Grid3D(1, 1, 2, std::vector<double>{0, 1});
  s[0].caption.tokens = {0};
  s[1].caption.tokens = {1};
  return s;
}

GroundingParams identity_params() {
  auto p = GroundingParams::zeros({2, 2, 2});
  p.img_projection = {1, 0, 0, 1};
  p.word_embeddings = {1, 0, 0, 1};
  return p;
}

}  // namespace

TEST(Triplet, HingeValues) {
  EXPECT_DOUBLE_EQ(triplet_loss(0.8, 0.2, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(triplet_loss(0.2, 0.25, 0.1), 0.15);
}

TEST(Mining, SemiHardRules) {
  EXPECT_EQ(mine_semi_hard(0, std::vector<double>{0.5, 0.3, 0.4, 0.9}), 2u);
  EXPECT_EQ(mine_semi_hard(0, std::vector<double>{0.1, 0.3, 0.5}), 2u);
  EXPECT_EQ(mine_semi_hard(0, std::vector<double>{0.5, 0.4, 0.4}), 1u);
  EXPECT_EQ(mine_semi_hard(0, std::vector<double>{0.5, 0.5, 0.2}), 2u);
  EXPECT_EQ(mine_semi_hard(0, std::vector<double>{0.5, 0.5}), 1u);
  EXPECT_EQ(mine_semi_hard(2, std::vector<double>{0.7, 0.7, 0.1}), 0u);
  EXPECT_THROW(mine_semi_hard(0, std::vector<double>{0.5}), InvalidBatch);
}

TEST(Mining, NeverPicksTheAnchor) {
  Rng rng(6);
  for (int t = 0; t < 500; ++t) {
    const std::size_t b = 2 + rng.index(8);
    std::vector<double> sims(b);
    for (double& v : sims) v = std::round(rng.uniform(-1, 1) * 4) / 4;
    const std::size_t a = rng.index(b);
    const std::size_t j = mine_semi_hard(a, sims);
    EXPECT_NE(j, a);
    bool below = false;
    for (std::size_t k = 0; k < b; ++k) below |= k != a && sims[k] < sims[a];
    if (below) {
      EXPECT_LT(sims[j], sims[a]);
    }
  }
}

TEST(Batch, RejectsBadBatches) {
  Rng rng(1);
  auto s = random_samples(rng, 3, 2, 3, 5, 2);
  EXPECT_THROW(TripletBatch({&s[0]}), InvalidBatch);
  EXPECT_THROW(TripletBatch({&s[0], nullptr}), InvalidBatch);
  s[2].fmap = oracle::random_fmap(rng, 3, 3);
  EXPECT_THROW(TripletBatch({&s[0], &s[2]}), ShapeError);
}

TEST(Retrieval, TopOneLowestIndexOnTies) {
  EXPECT_DOUBLE_EQ(retrieval_top1(std::vector<double>{0.9, 0.1, 0.5, 0.4}, 2), 0.5);
  EXPECT_DOUBLE_EQ(retrieval_top1(std::vector<double>(4, 0.5), 2), 0.5);
  EXPECT_DOUBLE_EQ(retrieval_top1(std::vector<double>{1, 0, 0, 1}, 2), 1.0);
}

TEST(Gradients, MatchFiniteDifferencesOnTheSmallestInstance) {
  Rng rng(2024);
  for (int t = 0; t < 10; ++t) {
    const auto samples = random_samples(rng, 2, 2, 3, 4, 2);
    auto params = random_params({4, 3, 2}, 100 + t);
    const std::vector<std::size_t> neg{1, 0};
    const double margin = 2.5;  // keeps every hinge active
    const auto bg = batch_gradients(batch_of(samples), params, neg, margin);
    EXPECT_NEAR(bg.loss, oracle::triplet_loss(samples, neg, params, margin), 1e-12);
    auto f = [&] { return oracle::triplet_loss(samples, neg, params, margin); };
    const auto grads = bg.grads.tensors();
    auto tensors = params.tensors();
    for (std::size_t k = 0; k < GroundingParams::kTensorCount; ++k) {
      const auto check = oracle::check_gradient(tensors[k], grads[k], f);
      EXPECT_EQ(check.failed, 0u) << GroundingParams::kTensorNames[k] << " worst " << check.worst_abs;
    }
  }
}

TEST(Gradients, MatchFiniteDifferencesOnRandomShapes) {
  Rng rng(77);
  for (int t = 0; t < 10; ++t) {
    const std::size_t b = 2 + rng.index(3), n = 1 + rng.index(3), d = 2 + rng.index(3);
    const std::size_t e = 2 + rng.index(3), vocab = 3 + rng.index(5), len = 1 + rng.index(4);
    const auto samples = random_samples(rng, b, n, d, vocab, len);
    auto params = random_params({vocab, d, e}, 500 + t);
    std::vector<std::size_t> neg(b);
    for (std::size_t a = 0; a < b; ++a) neg[a] = (a + 1 + rng.index(b - 1)) % b;
    const auto bg = batch_gradients(batch_of(samples), params, neg, 2.5);
    auto f = [&] { return oracle::triplet_loss(samples, neg, params, 2.5); };
    const auto grads = bg.grads.tensors();
    auto tensors = params.tensors();
    for (std::size_t k = 0; k < GroundingParams::kTensorCount; ++k) {
      EXPECT_EQ(oracle::check_gradient(tensors[k], grads[k], f).failed, 0u);
    }
  }
}

TEST(Gradients, DeadHingeGivesZeroLossAndGradient) {
  const auto samples = separable_pair();
  const auto params = identity_params();
  TrainConfig cfg;
  cfg.margin = 0.5;
  const auto bg = batch_gradients(batch_of(samples), params, cfg);
  EXPECT_EQ(bg.loss, 0.0);
  EXPECT_EQ(gradient_norm(bg.grads), 0.0);
  EXPECT_EQ(bg.retrieval_top1, 1.0);
}

TEST(Gradients, MarginShiftsActiveLossLinearly) {
  Rng rng(5);
  const auto samples = random_samples(rng, 4, 2, 3, 6, 3);
  const auto params = random_params({6, 3, 4}, 9);
  const std::vector<std::size_t> neg{1, 2, 3, 0};
  const double a = batch_gradients(batch_of(samples), params, neg, 2.5).loss;
  const double b = batch_gradients(batch_of(samples), params, neg, 5.0).loss;
  EXPECT_NEAR(b - a, 4 * 2.5, 1e-12);
}

TEST(Gradients, ClippingRescalesToTheLimit) {
  auto g = GroundingParams::zeros({2, 2, 2});
  g.img_bias = {3.0, 4.0};
  EXPECT_DOUBLE_EQ(gradient_norm(g), 5.0);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g.img_bias[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_NEAR(gradient_norm(g), 1.0, 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheGradient) {
  auto p = GroundingParams::zeros({2, 2, 2});
  auto g = GroundingParams::zeros({2, 2, 2});
  g.img_bias = {2.0, -0.5};
  AdamOptimizer opt(p, 0.01, 0.9, 0.999, 1e-8);
  opt.step(p, g);
  EXPECT_NEAR(p.img_bias[0], -0.01, 1e-9);
  EXPECT_NEAR(p.img_bias[1], 0.01, 1e-9);
  EXPECT_EQ(p.word_embeddings[0], 0.0);
}

TEST(Train, ZeroLearningRateLeavesParams) {
  Rng rng(3);
  const auto data = random_samples(rng, 6, 2, 3, 5, 2);
  const auto init = random_params({5, 3, 4}, 1);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.steps = 5;
  cfg.batch_size = 3;
  EXPECT_EQ(train(data, init, cfg).params, init);
  cfg.optimizer = OptimizerKind::Sgd;
  EXPECT_EQ(train(data, init, cfg).params, init);
}

TEST(Train, DeterministicTraceAndParams) {
  Rng rng(4);
  const auto data = random_samples(rng, 10, 2, 3, 6, 3);
  const auto init = random_params({6, 3, 4}, 2);
  TrainConfig cfg;
  cfg.steps = 30;
  cfg.batch_size = 4;
  cfg.seed = 99;
  const auto a = train(data, init, cfg);
  const auto b = train(data, init, cfg);
  ASSERT_EQ(a.trace.size(), 30u);
  EXPECT_EQ(a.params, b.params);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].loss, b.trace[i].loss);
    EXPECT_EQ(a.trace[i].step, i + 1);
  }
  cfg.seed = 100;
  EXPECT_NE(train(data, init, cfg).params, a.params);
}

TEST(Train, FullBatchDescentIsMonotoneWithATinyStep) {
  Rng rng(10);
  const auto data = random_samples(rng, 2, 2, 3, 4, 2);
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::Sgd;
  cfg.learning_rate = 1e-3;
  cfg.steps = 100;
  cfg.batch_size = 2;
  cfg.margin = 0.5;
  const auto result = train(data, random_params({4, 3, 3}, 3), cfg);
  for (std::size_t i = 1; i < result.trace.size(); ++i) {
    EXPECT_LE(result.trace[i].loss, result.trace[i - 1].loss + 1e-12) << "step " << i;
  }
  EXPECT_LT(result.trace.back().loss, result.trace.front().loss);
}

TEST(Train, CheckpointsAtIntervalAndEnd) {
  Rng rng(8);
  const auto data = random_samples(rng, 4, 2, 3, 4, 2);
  TrainConfig cfg;
  cfg.steps = 7;
  cfg.batch_size = 2;
  cfg.checkpoint_interval = 3;
  std::vector<std::size_t> seen;
  train(data, random_params({4, 3, 3}, 1), cfg,
        [&](std::size_t step, const GroundingParams&) { seen.push_back(step); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{3, 6, 7}));
}

TEST(Train, NonFiniteLossAbortsWithLastGoodParams) {
  Rng rng(8);
  auto data = random_samples(rng, 2, 2, 3, 4, 2);
  data[1].fmap(0, 0, 0) = NAN;
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 2;
  const auto init = random_params({4, 3, 3}, 1);
  std::optional<std::size_t> step;
  GroundingParams saved;
  EXPECT_THROW(train(data, init, cfg,
                     [&](std::size_t s, const GroundingParams& p) {
                       step = s;
                       saved = p;
                     }),
               NumericalError);
  ASSERT_TRUE(step.has_value());
  EXPECT_EQ(*step, 0u);
  EXPECT_EQ(saved, init);
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.margin = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.batch_size = 1;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(Retrieval, EvaluateOnSeparableData) {
  const auto data = separable_pair();
  EXPECT_EQ(evaluate_retrieval(data, identity_params(), 8, 1), 1.0);
}
