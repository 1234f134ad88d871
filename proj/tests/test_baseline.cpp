#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "capsfuse/baseline.hpp"
#include "capsfuse/errors.hpp"
#include "capsfuse/gradcheck.hpp"

using namespace capsfuse;

namespace {

ModelConfig baseline_config(FusionStrategy s) {
  ModelConfig c;
  c.strategy = s;
  c.inputs = {5, 4, 6, 3};
  c.numeric_hidden = {5};
  c.numeric_embed_dim = 4;
  c.fused_dim = 6;
  c.classifier_hidden = 5;
  return c;
}

Batch random_batch(const InputDims& d, std::size_t B, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  auto fill = [&](std::size_t w) {
    Tensor t({B, w});
    for (auto& v : t.data()) v = n(rng);
    return t;
  };
  Batch b{fill(d.text_a), fill(d.text_b), fill(d.image), fill(d.numeric), {}};
  for (std::size_t i = 0; i < B; ++i) b.labels.push_back(static_cast<int>(i % 2));
  return b;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = n(rng);
  return t;
}

}  // namespace

TEST(FuseAdd, SumsModalities) {
  ad::Tape tape;
  std::vector<ad::Var> parts{tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{10, 20}})),
                             tape.constant(Tensor::matrix({{100, 200}}))};
  EXPECT_EQ(fuse_add(parts).value(), Tensor::matrix({{111, 222}}));
  parts.push_back(tape.constant(Tensor::matrix({{1, 2, 3}})));
  EXPECT_THROW(fuse_add(parts), DimensionError);
}

TEST(FuseConcat, KeepsModalityOrder) {
  ad::Tape tape;
  std::vector<ad::Var> parts{tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{3, 4}}))};
  EXPECT_EQ(fuse_concat(parts).value(), Tensor::matrix({{1, 2, 3, 4}}));
}

TEST(Attend, MatchesLoopOracle) {
  std::mt19937_64 rng(4);
  const auto Q = random_tensor({2, 3}, rng);
  const auto K = random_tensor({2, 4, 3}, rng);
  const auto V = random_tensor({2, 4, 3}, rng);
  ad::Tape tape;
  Tensor w;
  auto out = ops::attend(tape.constant(Q), tape.constant(K), tape.constant(V), 0.5, &w);
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> e(4);
    double z = 0.0;
    for (std::size_t m = 0; m < 4; ++m) {
      double s = 0.0;
      for (std::size_t d = 0; d < 3; ++d) s += Q.at(b, d) * K.at(b, m, d);
      e[m] = std::exp(0.5 * s);
      z += e[m];
    }
    for (std::size_t m = 0; m < 4; ++m) EXPECT_NEAR(w.at(b, m), e[m] / z, 1e-12);
    for (std::size_t d = 0; d < 3; ++d) {
      double o = 0.0;
      for (std::size_t m = 0; m < 4; ++m) o += e[m] / z * V.at(b, m, d);
      EXPECT_NEAR(out.value().at(b, d), o, 1e-12);
    }
  }
}

TEST(Attend, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto K = random_tensor({2, 3, 4}, rng);
  const auto V = random_tensor({2, 3, 4}, rng);
  auto fn_q = [&](ad::Tape& tape, ad::Var q) {
    auto o = ops::attend(q, tape.constant(K), tape.constant(V), 0.5);
    return ad::sum(ad::mul(o, o));
  };
  EXPECT_LT(finite_diff_check(fn_q, random_tensor({2, 4}, rng), 1e-6), 1e-6);
  const auto Q = random_tensor({2, 4}, rng);
  auto fn_k = [&](ad::Tape& tape, ad::Var k) {
    auto o = ops::attend(tape.constant(Q), k, k, 0.5);
    return ad::sum(ad::mul(o, o));
  };
  EXPECT_LT(finite_diff_check(fn_k, K, 1e-6), 1e-6);
}

TEST(CrossAttention, WeightsSkipSelfAndSumToOne) {
  std::mt19937_64 rng(6);
  ad::Tape tape;
  std::vector<ad::Var> adapted;
  CrossAttentionParams p;
  for (int m = 0; m < 4; ++m) {
    adapted.push_back(tape.constant(random_tensor({3, 5}, rng)));
    p.query.push_back(tape.constant(random_tensor({5, 5}, rng)));
    p.key.push_back(tape.constant(random_tensor({5, 5}, rng)));
    p.value.push_back(tape.constant(random_tensor({5, 5}, rng)));
  }
  auto out = fuse_cross_attention(adapted, p);
  EXPECT_EQ(out.fused.shape(), (Shape{3, 5}));
  EXPECT_EQ(out.weights.shape(), (Shape{3, 4, 3}));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t m = 0; m < 4; ++m) {
      double s = 0.0;
      for (std::size_t o = 0; o < 3; ++o) s += out.weights.at(b, m, o);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }

  // Modality 0 attends to 1..3 only: rebuild its output by hand.
  const double scale = 1.0 / std::sqrt(5.0);
  auto proj = [&](std::size_t m, const std::vector<ad::Var>& w) { return ad::matmul(adapted[m], w[m]).value(); };
  std::vector<Tensor> q, k, v;
  for (std::size_t m = 0; m < 4; ++m) {
    q.push_back(proj(m, p.query));
    k.push_back(proj(m, p.key));
    v.push_back(proj(m, p.value));
  }
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> fused(5, 0.0);
    for (std::size_t m = 0; m < 4; ++m) {
      std::vector<double> e;
      std::vector<std::size_t> others;
      double z = 0.0;
      for (std::size_t o = 0; o < 4; ++o) {
        if (o == m) continue;
        double s = 0.0;
        for (std::size_t d = 0; d < 5; ++d) s += q[m].at(b, d) * k[o].at(b, d);
        e.push_back(std::exp(scale * s));
        others.push_back(o);
        z += e.back();
      }
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t d = 0; d < 5; ++d) fused[d] += e[i] / z * v[others[i]].at(b, d) / 4.0;
    }
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(out.fused.value().at(b, d), fused[d], 1e-12);
  }
}

TEST(CrossAttention, RequiresOneProjectionPerModality) {
  ad::Tape tape;
  std::vector<ad::Var> adapted{tape.constant(Tensor({1, 2}, 1.0)), tape.constant(Tensor({1, 2}, 1.0))};
  CrossAttentionParams p;
  p.query = {tape.constant(Tensor({2, 2}, 1.0))};
  p.key = p.query;
  p.value = p.query;
  EXPECT_THROW(fuse_cross_attention(adapted, p), ContractError);
}

class BaselineStrategies : public ::testing::TestWithParam<FusionStrategy> {};

TEST_P(BaselineStrategies, ProbabilitiesAreDistributions) {
  const auto cfg = baseline_config(GetParam());
  BaselineModel model(cfg, 3);
  const auto probs = model.predict(random_batch(cfg.inputs, 6, 1));
  ASSERT_EQ(probs.shape(), (Shape{6, 2}));
  for (std::size_t b = 0; b < 6; ++b) EXPECT_NEAR(probs.at(b, 0) + probs.at(b, 1), 1.0, 1e-12);
}

TEST_P(BaselineStrategies, GradientCheck) {
  const auto cfg = baseline_config(GetParam());
  BaselineModel model(cfg, 8);
  const auto batch = random_batch(cfg.inputs, 3, 2);
  auto loss = [&](ad::Tape& tape) {
    auto p = model.forward(tape, batch);
    return ad::sum(ad::mul(p, tape.constant(Tensor::matrix({{1, 0}, {0, 1}, {1, 0}}))));
  };
  auto params = model.parameters();
  EXPECT_LT(finite_diff_check(loss, params, 1e-6).max_relative_error, 1e-4);
}

TEST_P(BaselineStrategies, FusedWidthAndParameterCount) {
  const auto cfg = baseline_config(GetParam());
  BaselineModel model(cfg, 0);
  const bool concat = GetParam() == FusionStrategy::Concatenation;
  EXPECT_EQ(model.fused_width(), concat ? 24u : 6u);
  // encoder (2 layers) + 4 adapters + classifier (2 layers), 2 tensors each, plus 12 attention matrices.
  const std::size_t expected = 16 + (GetParam() == FusionStrategy::CrossAttention ? 12 : 0);
  EXPECT_EQ(model.parameters().size(), expected);
}

INSTANTIATE_TEST_SUITE_P(All, BaselineStrategies,
                         ::testing::Values(FusionStrategy::Addition, FusionStrategy::Concatenation,
                                           FusionStrategy::CrossAttention),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(BaselineModel, RefusesCapsNetStrategy) {
  EXPECT_THROW(BaselineModel(baseline_config(FusionStrategy::CapsNet), 0), ConfigError);
}

TEST(MakeModel, DispatchesOnStrategy) {
  for (auto s : {FusionStrategy::CapsNet, FusionStrategy::Addition, FusionStrategy::Concatenation,
                 FusionStrategy::CrossAttention}) {
    auto m = make_model(baseline_config(s), 1);
    EXPECT_EQ(m->strategy(), s);
  }
}

TEST(FuseAdd, SmallExamples) {
  ad::Tape tape;
  std::vector<ad::Var> parts{tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{3, 4}})),
                             tape.constant(Tensor::matrix({{0, 0}})), tape.constant(Tensor::matrix({{0, 0}}))};
  EXPECT_EQ(fuse_add(parts).value(), Tensor::matrix({{4, 6}}));
  std::vector<ad::Var> zeros(4, tape.constant(Tensor({1, 3}, 0.0)));
  EXPECT_EQ(fuse_add(zeros).value(), Tensor({1, 3}, 0.0));
  std::vector<ad::Var> four{tape.constant(Tensor::matrix({{1, 2}})), tape.constant(Tensor::matrix({{3, 4}})),
                            tape.constant(Tensor::matrix({{5, 6}})), tape.constant(Tensor::matrix({{7, 8}}))};
  EXPECT_EQ(fuse_concat(four).value(), Tensor::matrix({{1, 2, 3, 4, 5, 6, 7, 8}}));
}

TEST(CrossAttention, ZeroKeysGiveUniformWeights) {
  std::mt19937_64 rng(7);
  ad::Tape tape;
  std::vector<ad::Var> adapted;
  CrossAttentionParams p;
  for (int m = 0; m < 4; ++m) {
    adapted.push_back(tape.constant(random_tensor({2, 3}, rng)));
    p.query.push_back(tape.constant(random_tensor({3, 3}, rng)));
    p.key.push_back(tape.constant(Tensor({3, 3}, 0.0)));
    p.value.push_back(tape.constant(random_tensor({3, 3}, rng)));
  }
  auto out = fuse_cross_attention(adapted, p);
  for (double w : out.weights.data()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
  // mean over m of the mean of the other three values = mean of all four values
  std::vector<Tensor> v;
  for (int m = 0; m < 4; ++m) v.push_back(ad::matmul(adapted[m], p.value[m]).value());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t d = 0; d < 3; ++d) {
      double mean = 0.0;
      for (int m = 0; m < 4; ++m) mean += v[m].at(b, d) / 4.0;
      EXPECT_NEAR(out.fused.value().at(b, d), mean, 1e-12);
    }
}

TEST(CrossAttention, IdenticalInputsGiveIdenticalOutputs) {
  std::mt19937_64 rng(8);
  ad::Tape tape;
  auto x = tape.constant(random_tensor({2, 4}, rng));
  auto q = tape.constant(random_tensor({4, 4}, rng));
  auto k = tape.constant(random_tensor({4, 4}, rng));
  auto v = tape.constant(random_tensor({4, 4}, rng));
  std::vector<ad::Var> adapted(4, x);
  CrossAttentionParams p{{q, q, q, q}, {k, k, k, k}, {v, v, v, v}};
  auto out = fuse_cross_attention(adapted, p);
  const Tensor xv = ad::matmul(x, v).value();
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_NEAR(out.fused.value()[i], xv[i], 1e-12);
}
