#include "capsfuse/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "capsfuse/errors.hpp"

namespace capsfuse {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected adam, sgd)");
}

std::string_view to_string(LossKind k) { return k == LossKind::CrossEntropy ? "cross_entropy" : "margin"; }

LossKind parse_loss(std::string_view name) {
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  if (name == "margin") return LossKind::Margin;
  throw ConfigError("unknown loss '" + std::string(name) + "' (expected cross_entropy, margin)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
  if (!(split.train > 0.0 && split.val > 0.0 && split.test > 0.0))
    throw ConfigError("split fractions must all be positive");
  if (std::abs(split.train + split.val + split.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  if (class_weights && ((*class_weights)[0] <= 0.0 || (*class_weights)[1] <= 0.0))
    throw ConfigError("explicit class weights must be positive");
}

DataSplit stratified_split(std::span<const int> labels, const SplitFractions& fractions, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed5b1175ULL);
  DataSplit split;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
    const auto n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(fractions.val * n)));
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + n_train);
    split.val.insert(split.val.end(), idx.begin() + n_train, idx.begin() + n_train + n_val);
    split.test.insert(split.test.end(), idx.begin() + n_train + n_val, idx.end());
  }
  for (auto* part : {&split.train, &split.val, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

std::vector<double> auto_class_weights(std::span<const int> labels, std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_classes) throw ContractError("label out of range");
    counts[y] += 1;
  }
  std::vector<double> w(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!counts[c]) throw ContractError("class " + std::to_string(c) + " is absent; cannot weight it");
    w[c] = static_cast<double>(labels.size()) / (static_cast<double>(n_classes) * static_cast<double>(counts[c]));
  }
  return w;
}

namespace {

void check_loss_inputs(const Tensor& probs, std::span<const int> labels, std::span<const double> weights) {
  if (labels.empty()) throw ContractError("loss on an empty batch");
  if (probs.rank() != 2 || probs.dim(0) != labels.size())
    throw DimensionError("loss: probabilities " + shape_to_string(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  if (weights.size() != probs.dim(1)) throw DimensionError("loss: one class weight per class required");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= probs.dim(1)) throw ContractError("loss: label out of range");
}

}  // namespace

ad::Var weighted_cross_entropy(ad::Var probs, std::span<const int> labels, std::span<const double> weights) {
  const auto& P = probs.value();
  check_loss_inputs(P, labels, weights);
  const std::size_t B = P.dim(0), C = P.dim(1);
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) total -= w[y[b]] * std::log(P.at(b, y[b]) + 1e-12);
  const double inv_b = 1.0 / static_cast<double>(B);
  return probs.tape().record(Tensor::scalar(total * inv_b), {probs}, [y, w, C, inv_b](const ad::GradContext& ctx) {
    const auto& P = *ctx.inputs[0];
    auto* gp = ctx.input_grads[0];
    const double g = ctx.output_grad[0];
    for (std::size_t b = 0; b < y.size(); ++b) {
      const std::size_t i = b * C + y[b];
      (*gp)[i] -= g * inv_b * w[y[b]] / (P[i] + 1e-12);
    }
  });
}

ad::Var margin_loss(ad::Var probs, std::span<const int> labels, std::span<const double> weights) {
  constexpr double kUpper = 0.9, kLower = 0.1, kDownWeight = 0.5;
  const auto& P = probs.value();
  check_loss_inputs(P, labels, weights);
  const std::size_t B = P.dim(0), C = P.dim(1);
  std::vector<int> y(labels.begin(), labels.end());
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double p = P.at(b, c);
      const double term = static_cast<int>(c) == y[b] ? std::pow(std::max(0.0, kUpper - p), 2)
                                                       : kDownWeight * std::pow(std::max(0.0, p - kLower), 2);
      total += w[y[b]] * term;
    }
  const double inv_b = 1.0 / static_cast<double>(B);
  return probs.tape().record(Tensor::scalar(total * inv_b), {probs}, [y, w, C, inv_b](const ad::GradContext& ctx) {
    const auto& P = *ctx.inputs[0];
    auto* gp = ctx.input_grads[0];
    const double g = ctx.output_grad[0] * inv_b;
    for (std::size_t b = 0; b < y.size(); ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const double p = P[b * C + c];
        const double d = static_cast<int>(c) == y[b] ? -2.0 * std::max(0.0, kUpper - p)
                                                     : 2.0 * kDownWeight * std::max(0.0, p - kLower);
        (*gp)[b * C + c] += g * w[y[b]] * d;
      }
  });
}

void Adam::step(std::span<Parameter* const> params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam state does not match parameter list");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i]->value;
    const auto& grad = params[i]->grad;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
      value[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

void Sgd::step(std::span<Parameter* const> params) {
  if (velocity_.empty())
    for (auto* p : params) velocity_.emplace_back(p->value.shape(), 0.0);
  if (velocity_.size() != params.size()) throw ContractError("SGD state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i]->value;
    const auto& grad = params[i]->grad;
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      vel[j] = momentum_ * vel[j] + grad[j];
      value[j] -= lr_ * vel[j];
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config) {
  if (config.optimizer == OptimizerKind::Adam) return std::make_unique<Adam>(config.learning_rate);
  return std::make_unique<Sgd>(config.learning_rate);
}

namespace {

constexpr std::size_t kEvalChunk = 256;

ad::Var batch_loss(LossKind kind, ad::Var probs, std::span<const int> labels, std::span<const double> weights) {
  return kind == LossKind::CrossEntropy ? weighted_cross_entropy(probs, labels, weights)
                                        : margin_loss(probs, labels, weights);
}

struct SplitEval {
  double loss = 0.0;
  std::vector<double> scores;
};

SplitEval evaluate_split(Model& model, const MultimodalDataset& ds, std::span<const std::size_t> indices,
                         LossKind kind, std::span<const double> weights) {
  SplitEval out;
  double weighted = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
    auto batch = ds.batch(chunk);
    ad::Tape tape;
    auto probs = model.forward(tape, batch);
    weighted += batch_loss(kind, probs, batch.labels, weights).value().item() * static_cast<double>(chunk.size());
    for (std::size_t b = 0; b < chunk.size(); ++b) out.scores.push_back(probs.value().at(b, 1));
  }
  out.loss = weighted / static_cast<double>(indices.size());
  return out;
}

std::vector<int> labels_of(const MultimodalDataset& ds, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(ds.labels()[i]);
  return out;
}

}  // namespace

std::vector<double> positive_scores(Model& model, const MultimodalDataset& ds, std::span<const std::size_t> indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
    const auto probs = model.predict(ds.batch(chunk));
    for (std::size_t b = 0; b < chunk.size(); ++b) out.push_back(probs.at(b, 1));
  }
  return out;
}

metrics::MetricReport evaluate(Model& model, const MultimodalDataset& ds, const DataSplit& split, double fpr_max) {
  const auto val_scores = positive_scores(model, ds, split.val);
  const auto test_scores = positive_scores(model, ds, split.test);
  return metrics::evaluate_scores(val_scores, labels_of(ds, split.val), test_scores, labels_of(ds, split.test),
                                  fpr_max);
}

namespace {

struct Attempt {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double selected_val_auc = 0.0;
};

// One optimization run from the model's current parameters. Leaves the model
// holding the best-validation parameters when early stopping is enabled.
Attempt run_attempt(Model& model, const MultimodalDataset& ds, const TrainConfig& config, const DataSplit& split,
                    std::span<const double> weights, std::uint64_t shuffle_seed) {
  auto params = model.parameters();
  auto optimizer = make_optimizer(config);
  std::mt19937_64 shuffle_rng(shuffle_seed);
  std::vector<std::size_t> order = split.train;
  const auto val_labels = labels_of(ds, split.val);

  Attempt out;
  double best_auc = -std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      auto batch = ds.batch(std::span<const std::size_t>(order).subspan(start, len));
      model.zero_grad();
      ad::Tape tape;
      auto loss = batch_loss(config.loss, model.forward(tape, batch), batch.labels, weights);
      tape.backward(loss);
      optimizer->step(params);
      loss_sum += loss.value().item() * static_cast<double>(len);
    }
    const auto val = evaluate_split(model, ds, split.val, config.loss, weights);
    const double val_auc = metrics::roc_auc(val.scores, val_labels);
    out.epochs.push_back({epoch, loss_sum / static_cast<double>(order.size()), val.loss, val_auc});

    if (val_auc > best_auc) {
      best_auc = val_auc;
      out.best_epoch = epoch;
      if (config.patience) best_params = model.snapshot();
    }
    if (config.patience && epoch - out.best_epoch >= config.patience) break;
  }
  if (config.patience && !best_params.empty()) {
    model.restore(best_params);
    out.selected_val_auc = best_auc;
  } else {
    out.selected_val_auc = out.epochs.back().val_auc;
  }
  model.zero_grad();
  return out;
}

}  // namespace

TrainLog train(Model& model, const MultimodalDataset& ds, const TrainConfig& config, double fpr_max) {
  config.validate();
  if (model.config().inputs != ds.input_dims()) {
    throw DimensionError("dataset modality widths do not match the model configuration");
  }
  if (ds.size() < config.batch_size) {
    throw ContractError("dataset has " + std::to_string(ds.size()) + " samples, fewer than one batch of " +
                        std::to_string(config.batch_size));
  }
  const auto labels = ds.int_labels();
  const auto split = stratified_split(labels, config.split, config.seed);
  const auto train_labels = labels_of(ds, split.train);
  const std::vector<double> weights =
      config.class_weights ? std::vector<double>{(*config.class_weights)[0], (*config.class_weights)[1]}
                           : auto_class_weights(train_labels, model.config().n_classes);

  TrainLog log;
  std::vector<Tensor> kept;
  double kept_auc = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < config.restarts; ++r) {
    // Restart 0 continues from the caller's initialization; later ones draw a
    // fresh one from the same seed stream.
    if (r > 0) model.restore(make_model(model.config(), config.seed + 0x9e3779b97f4a7c15ULL * r)->snapshot());
    auto attempt = run_attempt(model, ds, config, split, weights, (config.seed ^ 0xba7c4e5ULL) + r);
    if (attempt.selected_val_auc > kept_auc) {
      kept_auc = attempt.selected_val_auc;
      log.epochs = std::move(attempt.epochs);
      log.best_epoch = attempt.best_epoch;
      log.restart = r;
      if (config.restarts > 1) kept = model.snapshot();
    }
  }
  if (config.restarts > 1) model.restore(kept);
  log.test = evaluate(model, ds, split, fpr_max);
  return log;
}

std::vector<SeedRun> train_seeds(const MultimodalDataset& ds, const ModelConfig& model_config,
                                 const TrainConfig& train_config, std::span<const std::uint64_t> seeds,
                                 std::size_t threads, double fpr_max) {
  std::vector<SeedRun> runs(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        auto cfg = train_config;
        cfg.seed = seeds[i];
        runs[i].seed = seeds[i];
        runs[i].model = make_model(model_config, seeds[i]);
        runs[i].log = train(*runs[i].model, ds, cfg, fpr_max);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(seeds.size(), 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::sort(runs.begin(), runs.end(), [](const SeedRun& a, const SeedRun& b) { return a.seed < b.seed; });
  return runs;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

double linear_probe_auc(const MultimodalDataset& ds, Role role, std::uint64_t seed) {
  const auto labels = ds.int_labels();
  const auto split = stratified_split(labels, {0.70, 0.15, 0.15}, seed);
  std::vector<std::size_t> train = split.train;
  std::vector<std::size_t> test = split.val;
  test.insert(test.end(), split.test.begin(), split.test.end());
  const std::size_t dim = ds.modality(role).dim;

  std::vector<double> mean(dim, 0.0), scale(dim, 0.0);
  for (auto i : train) {
    auto f = ds.features(i, role);
    for (std::size_t j = 0; j < dim; ++j) mean[j] += f[j];
  }
  for (auto& m : mean) m /= static_cast<double>(train.size());
  for (auto i : train) {
    auto f = ds.features(i, role);
    for (std::size_t j = 0; j < dim; ++j) scale[j] += (f[j] - mean[j]) * (f[j] - mean[j]);
  }
  for (auto& s : scale) s = std::sqrt(s / static_cast<double>(train.size())) + 1e-12;
  auto standardized = [&](std::size_t i) {
    auto f = ds.features(i, role);
    std::vector<double> x(dim);
    for (std::size_t j = 0; j < dim; ++j) x[j] = (f[j] - mean[j]) / scale[j];
    return x;
  };
  std::vector<std::vector<double>> xs;
  for (auto i : train) xs.push_back(standardized(i));

  constexpr double kL2 = 1e-3, kStep = 0.5;
  constexpr int kIters = 300;
  std::vector<double> w(dim, 0.0);
  double bias = 0.0;
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (int it = 0; it < kIters; ++it) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (std::size_t r = 0; r < train.size(); ++r) {
      double z = bias;
      for (std::size_t j = 0; j < dim; ++j) z += w[j] * xs[r][j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - labels[train[r]];
      for (std::size_t j = 0; j < dim; ++j) gw[j] += err * xs[r][j];
      gb += err;
    }
    for (std::size_t j = 0; j < dim; ++j) w[j] -= kStep * (gw[j] * inv_n + kL2 * w[j]);
    bias -= kStep * gb * inv_n;
  }
  std::vector<double> scores;
  for (auto i : test) {
    const auto x = standardized(i);
    double z = bias;
    for (std::size_t j = 0; j < dim; ++j) z += w[j] * x[j];
    scores.push_back(z);
  }
  return metrics::roc_auc(scores, labels_of(ds, test));
}

}  // namespace capsfuse
