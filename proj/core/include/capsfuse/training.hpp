#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "capsfuse/dataset.hpp"
#include "capsfuse/metrics.hpp"
#include "capsfuse/model.hpp"

namespace capsfuse {

enum class OptimizerKind { Adam, Sgd };
enum class LossKind { CrossEntropy, Margin };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(LossKind k);
LossKind parse_loss(std::string_view name);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  friend bool operator==(const SplitFractions&, const SplitFractions&) = default;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  LossKind loss = LossKind::CrossEntropy;
  // nullopt: inverse-frequency weights from the training split.
  std::optional<std::array<double, 2>> class_weights;
  std::uint64_t seed = 0;
  // Epochs without validation-AUC improvement before stopping; 0 disables.
  std::size_t patience = 10;
  // Independent initializations per seed; the one with the best validation
  // AUC is kept. 1 means a single run from the model as given.
  std::size_t restarts = 1;
  SplitFractions split;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t restart = 0;  // which restart was kept
  metrics::MetricReport test;
};

struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Per-class shuffle with the seed, then contiguous train/val/test cuts of
// round(fraction * class_count). Each list is returned in ascending order.
DataSplit stratified_split(std::span<const int> labels, const SplitFractions& fractions, std::uint64_t seed);

// w_c = B / (n_classes * count_c). Throws ContractError if a class is absent.
std::vector<double> auto_class_weights(std::span<const int> labels, std::size_t n_classes);

// -(1/B) sum_b w_{y_b} ln(probs[b, y_b] + 1e-12).
ad::Var weighted_cross_entropy(ad::Var probs, std::span<const int> labels, std::span<const double> weights);
// (1/B) sum_b w_{y_b} sum_c [T max(0, 0.9 - p)^2 + 0.5 (1 - T) max(0, p - 0.1)^2].
ad::Var margin_loss(ad::Var probs, std::span<const int> labels, std::span<const double> weights);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<Parameter* const> params) = 0;
};

// Adam with bias correction.
class Adam final : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<Parameter* const> params) override;
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double lr, double momentum = 0.9) : lr_(lr), momentum_(momentum) {}
  void step(std::span<Parameter* const> params) override;

 private:
  double lr_, momentum_;
  std::vector<Tensor> velocity_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config);

// Positive-class probabilities for the listed samples.
std::vector<double> positive_scores(Model& model, const MultimodalDataset& ds, std::span<const std::size_t> indices);

// Trains in place: seeded stratified split, shuffled mini-batches, early
// stopping on validation AUC with the best parameters restored, then a
// test-split report using the validation-optimal F1 threshold.
TrainLog train(Model& model, const MultimodalDataset& ds, const TrainConfig& config, double fpr_max = 0.1);

// Validation threshold applied to the test split of `split`.
metrics::MetricReport evaluate(Model& model, const MultimodalDataset& ds, const DataSplit& split,
                               double fpr_max = 0.1);

struct SeedRun {
  std::uint64_t seed = 0;
  std::unique_ptr<Model> model;
  TrainLog log;
};

// One independent run per seed (model init, split, shuffling all keyed by it),
// up to `threads` at a time. Results come back sorted by seed.
std::vector<SeedRun> train_seeds(const MultimodalDataset& ds, const ModelConfig& model_config,
                                 const TrainConfig& train_config, std::span<const std::uint64_t> seeds,
                                 std::size_t threads, double fpr_max = 0.1);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

// Test AUC of an L2-regularized logistic regression fitted on one modality's
// raw features (70/30 stratified split).
double linear_probe_auc(const MultimodalDataset& ds, Role role, std::uint64_t seed);

}  // namespace capsfuse
