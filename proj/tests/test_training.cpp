#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "capsfuse/errors.hpp"
#include "capsfuse/gradcheck.hpp"
#include "capsfuse/synthetic.hpp"
#include "capsfuse/training.hpp"

using namespace capsfuse;

namespace {

ModelConfig config_for(const MultimodalDataset& ds, FusionStrategy s) {
  ModelConfig c;
  c.strategy = s;
  c.inputs = ds.input_dims();
  c.n_primary = 4;
  c.primary_dim = 6;
  c.digit_dim = 6;
  c.numeric_hidden = {8};
  c.numeric_embed_dim = 6;
  c.fused_dim = 12;
  c.classifier_hidden = 8;
  return c;
}

MultimodalDataset separable(std::size_t n = 300, std::uint64_t seed = 1) {
  SynthSpec s;
  s.n = n;
  s.dims = {8, 8, 8, 4};
  s.seed = seed;
  s.positive_rate = 0.3;
  return gen_synthetic(s);
}

TrainConfig quick(std::size_t epochs = 5) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 16;
  t.learning_rate = 1e-2;
  t.patience = 0;
  return t;
}

}  // namespace

TEST(StratifiedSplit, PartitionsEachClassByFraction) {
  std::vector<int> labels(200, 0);
  std::fill(labels.begin(), labels.begin() + 40, 1);
  const auto s = stratified_split(labels, {}, 5);
  std::vector<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    EXPECT_TRUE(std::is_sorted(part->begin(), part->end()));
    all.insert(all.end(), part->begin(), part->end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expected(200);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(all, expected);
  auto positives = [&](const std::vector<std::size_t>& v) {
    return std::count_if(v.begin(), v.end(), [&](std::size_t i) { return labels[i] == 1; });
  };
  EXPECT_EQ(positives(s.train), 28);
  EXPECT_EQ(positives(s.val), 6);
  EXPECT_EQ(positives(s.test), 6);
  EXPECT_EQ(s.train.size(), 140u);
  const auto again = stratified_split(labels, {}, 5);
  EXPECT_EQ(again.train, s.train);
  EXPECT_NE(stratified_split(labels, {}, 6).train, s.train);
}

TEST(ClassWeights, InverseFrequency) {
  std::vector<int> labels(100, 0);
  std::fill(labels.begin(), labels.begin() + 14, 1);
  const auto w = auto_class_weights(labels, 2);
  EXPECT_NEAR(w[0], 100.0 / (2 * 86), 1e-15);
  EXPECT_NEAR(w[1], 100.0 / (2 * 14), 1e-15);
  EXPECT_NEAR(w[0], 0.5814, 1e-4);
  EXPECT_NEAR(w[1], 3.5714, 1e-4);
  EXPECT_THROW(auto_class_weights(std::vector<int>{0, 0}, 2), ContractError);
}

TEST(Losses, CrossEntropyClosedForms) {
  const std::vector<double> ones{1.0, 1.0};
  ad::Tape tape;
  auto p = tape.constant(Tensor::matrix({{1.0, 0.0}}));
  EXPECT_NEAR(weighted_cross_entropy(p, std::vector<int>{0}, ones).value().item(), 0.0, 1e-11);
  auto half = tape.constant(Tensor::matrix({{0.5, 0.5}}));
  EXPECT_NEAR(weighted_cross_entropy(half, std::vector<int>{1}, ones).value().item(), std::log(2.0), 1e-11);
  auto two = tape.constant(Tensor::matrix({{0.5, 0.5}, {0.2, 0.8}}));
  const std::vector<double> w{2.0, 3.0};
  EXPECT_NEAR(weighted_cross_entropy(two, std::vector<int>{0, 1}, w).value().item(),
              -(2.0 * std::log(0.5 + 1e-12) + 3.0 * std::log(0.8 + 1e-12)) / 2.0, 1e-15);
  EXPECT_THROW(weighted_cross_entropy(half, std::vector<int>{}, ones), ContractError);
  EXPECT_THROW(weighted_cross_entropy(half, std::vector<int>{2}, ones), ContractError);
}

TEST(Losses, MarginLossClosedFormAndGradients) {
  const std::vector<double> ones{1.0, 1.0};
  ad::Tape tape;
  auto p = tape.constant(Tensor::matrix({{0.3, 0.7}}));
  // label 1: (0.9-0.7)^2 + 0.5 (0.3-0.1)^2
  EXPECT_NEAR(margin_loss(p, std::vector<int>{1}, ones).value().item(), 0.04 + 0.02, 1e-15);
  auto fn = [&](ad::Tape&, ad::Var x) {
    auto probs = ad::softmax(x);
    return ad::add(margin_loss(probs, std::vector<int>{0, 1}, std::vector<double>{0.7, 1.9}),
                   weighted_cross_entropy(probs, std::vector<int>{0, 1}, std::vector<double>{0.7, 1.9}));
  };
  EXPECT_LT(finite_diff_check(fn, Tensor::matrix({{0.2, -0.4}, {1.1, 0.3}}), 1e-6), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  Parameter p("p", Tensor::vector({1.0, -2.0}));
  std::vector<Parameter*> ps{&p};
  Adam adam(1e-3);
  adam.step(ps);
  EXPECT_EQ(p.value, Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor::scalar(0.5));
  std::vector<Parameter*> ps{&p};
  Adam adam(1e-3);
  p.grad = Tensor::scalar(1.0);
  adam.step(ps);
  EXPECT_NEAR(p.value.item(), 0.5 - 1e-3, 1e-10);
}

TEST(Adam, ConstantGradientStepsApproachLearningRate) {
  Parameter p("p", Tensor::scalar(0.0));
  std::vector<Parameter*> ps{&p};
  Adam adam(0.01);
  double prev = 0.0;
  for (int i = 0; i < 500; ++i) {
    p.grad = Tensor::scalar(-3.0);
    adam.step(ps);
    const double step = p.value.item() - prev;
    prev = p.value.item();
    EXPECT_NEAR(step, 0.01, 1e-6);
  }
}

TEST(Sgd, MomentumRecurrence) {
  Parameter p("p", Tensor::scalar(1.0));
  std::vector<Parameter*> ps{&p};
  Sgd sgd(0.1, 0.9);
  p.grad = Tensor::scalar(1.0);
  sgd.step(ps);
  EXPECT_NEAR(p.value.item(), 0.9, 1e-15);
  p.grad = Tensor::scalar(1.0);
  sgd.step(ps);
  EXPECT_NEAR(p.value.item(), 0.9 - 0.1 * 1.9, 1e-15);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.restarts = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.split = {0.5, 0.3, 0.3};
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.class_weights = std::array<double, 2>{1.0, -1.0};
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_THROW(parse_optimizer("rmsprop"), ConfigError);
  EXPECT_EQ(parse_loss("margin"), LossKind::Margin);
}

TEST(Train, PatienceZeroRunsEveryEpochAndIsDeterministic) {
  const auto ds = separable();
  const auto mc = config_for(ds, FusionStrategy::CapsNet);
  auto a = make_model(mc, 3);
  auto b = make_model(mc, 3);
  auto cfg = quick(4);
  const auto la = train(*a, ds, cfg);
  const auto lb = train(*b, ds, cfg);
  EXPECT_EQ(la.epochs.size(), 4u);
  EXPECT_EQ(la.epochs, lb.epochs);
  EXPECT_EQ(a->snapshot(), b->snapshot());
  EXPECT_EQ(la.test.auc, lb.test.auc);
  EXPECT_EQ(la.test.threshold, lb.test.threshold);
}

TEST(Train, EarlyStoppingRestoresBestEpoch) {
  const auto ds = separable(300, 4);
  auto model = make_model(config_for(ds, FusionStrategy::Addition), 1);
  auto cfg = quick(40);
  cfg.patience = 3;
  const auto log = train(*model, ds, cfg);
  ASSERT_FALSE(log.epochs.empty());
  double best = -1.0;
  for (const auto& e : log.epochs) best = std::max(best, e.val_auc);
  EXPECT_EQ(log.epochs[log.best_epoch - 1].val_auc, best);
  EXPECT_LE(log.epochs.size(), log.best_epoch + 3);
  // Restored parameters reproduce the best validation AUC.
  const auto split = stratified_split(ds.int_labels(), cfg.split, cfg.seed);
  const auto scores = positive_scores(*model, ds, split.val);
  std::vector<int> y;
  for (auto i : split.val) y.push_back(ds.labels()[i]);
  EXPECT_DOUBLE_EQ(metrics::roc_auc(scores, y), best);
}

TEST(Train, SeparableReachesHighValidationAuc) {
  const auto ds = separable(600, 2);
  for (auto s : {FusionStrategy::CapsNet, FusionStrategy::Concatenation}) {
    auto model = make_model(config_for(ds, s), 0);
    auto cfg = quick(50);
    cfg.learning_rate = 1e-3;
    cfg.patience = 10;
    const auto log = train(*model, ds, cfg);
    double best = 0.0;
    for (const auto& e : log.epochs) best = std::max(best, e.val_auc);
    EXPECT_GT(best, 0.95) << to_string(s);
  }
}

TEST(Train, RestartsKeepBestValidationRun) {
  const auto ds = separable(200, 6);
  auto single = make_model(config_for(ds, FusionStrategy::CapsNet), 2);
  auto multi = make_model(config_for(ds, FusionStrategy::CapsNet), 2);
  auto cfg = quick(3);
  const auto one = train(*single, ds, cfg);
  cfg.restarts = 3;
  const auto three = train(*multi, ds, cfg);
  EXPECT_LT(three.restart, 3u);
  EXPECT_GE(three.epochs.back().val_auc, one.epochs.back().val_auc);
  if (three.restart == 0) EXPECT_EQ(three.epochs, one.epochs);
}

TEST(Train, RejectsTinyDatasetAndWrongWidths) {
  const auto ds = separable(40);
  auto model = make_model(config_for(ds, FusionStrategy::Addition), 0);
  auto cfg = quick(1);
  cfg.batch_size = 64;
  EXPECT_THROW(train(*model, ds, cfg), ContractError);
  auto mc = config_for(ds, FusionStrategy::Addition);
  mc.inputs.image += 1;
  auto wrong = make_model(mc, 0);
  EXPECT_THROW(train(*wrong, ds, quick(1)), DimensionError);
}

TEST(TrainSeeds, ThreadCountDoesNotChangeResults) {
  const auto ds = separable(200, 8);
  const auto mc = config_for(ds, FusionStrategy::Addition);
  const std::vector<std::uint64_t> seeds{4, 2, 3};
  const auto serial = train_seeds(ds, mc, quick(2), seeds, 1);
  const auto parallel = train_seeds(ds, mc, quick(2), seeds, 3);
  ASSERT_EQ(serial.size(), 3u);
  EXPECT_EQ(serial[0].seed, 2u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(serial[i].seed, parallel[i].seed);
    EXPECT_EQ(serial[i].log.epochs, parallel[i].log.epochs);
    EXPECT_EQ(serial[i].model->snapshot(), parallel[i].model->snapshot());
  }
}

TEST(MeanStd, SampleStandardDeviation) {
  const auto r = mean_std(std::vector<double>{2, 4, 4, 4, 5, 5, 7, 9});
  EXPECT_DOUBLE_EQ(r.mean, 5.0);
  EXPECT_NEAR(r.std, std::sqrt(32.0 / 7.0), 1e-15);
  EXPECT_EQ(mean_std(std::vector<double>{3.0}).std, 0.0);
}

TEST(Evaluate, SingleClassTestSplitIsUndefined) {
  const auto ds = separable(100, 3);
  auto model = make_model(config_for(ds, FusionStrategy::Addition), 0);
  DataSplit split;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds.labels()[i] ? split.val : split.test).push_back(i);
  split.val.push_back(split.test.front());
  EXPECT_THROW(evaluate(*model, ds, split), UndefinedMetricError);
}
