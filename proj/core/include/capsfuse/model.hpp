#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "capsfuse/autodiff.hpp"

namespace capsfuse {

enum class FusionStrategy { CapsNet, Addition, Concatenation, CrossAttention };

// CLI spelling: capsnet, add, concat, xattn.
std::string_view to_string(FusionStrategy s);
FusionStrategy parse_fusion_strategy(std::string_view name);

// Embedding widths per modality role. numeric is the raw feature count.
struct InputDims {
  std::size_t text_a = 0;
  std::size_t text_b = 0;
  std::size_t image = 0;
  std::size_t numeric = 0;

  friend bool operator==(const InputDims&, const InputDims&) = default;
};

struct ModelConfig {
  FusionStrategy strategy = FusionStrategy::CapsNet;
  InputDims inputs;
  std::size_t n_classes = 2;

  // Capsule stacks.
  std::size_t n_primary = 8;
  std::size_t primary_dim = 16;
  std::size_t digit_dim = 16;
  std::size_t routing_iters = 3;
  bool apply_squash_primary = true;
  bool share_text_weights = false;

  // Numeric encoder: raw -> hidden... -> numeric_embed_dim, tanh between layers.
  std::vector<std::size_t> numeric_hidden = {32, 32};
  std::size_t numeric_embed_dim = 16;

  // Baselines.
  std::size_t fused_dim = 64;
  std::size_t classifier_hidden = 32;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One mini-batch of embeddings, each [B x dim], plus labels.
struct Batch {
  Tensor text_a;
  Tensor text_b;
  Tensor image;
  Tensor numeric;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

// Throws DimensionError naming the first modality whose width disagrees.
void check_batch(const ModelConfig& config, const Batch& batch);

struct DenseLayer {
  Parameter weight;  // in x out
  Parameter bias;    // out

  static DenseLayer create(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  ad::Var apply(ad::Tape& tape, ad::Var x);
};

// Dense layers with tanh between them; the last layer is linear.
struct Mlp {
  std::vector<DenseLayer> layers;

  static Mlp create(const std::string& name, const std::vector<std::size_t>& sizes, std::mt19937_64& rng);
  ad::Var apply(ad::Tape& tape, ad::Var x);
  void collect(std::vector<Parameter*>& out);
};

class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  FusionStrategy strategy() const { return config_.strategy; }

  // Every distinct learnable parameter, in a fixed order.
  virtual std::vector<Parameter*> parameters() = 0;
  // Class probabilities [B x n_classes].
  virtual ad::Var forward(ad::Tape& tape, const Batch& batch) = 0;

  Tensor predict(const Batch& batch);
  std::vector<Tensor> snapshot();
  void restore(const std::vector<Tensor>& values);
  void zero_grad();

 private:
  ModelConfig config_;
};

std::unique_ptr<Model> make_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace capsfuse
