#include "capsfuse/model.hpp"

#include "capsfuse/baseline.hpp"
#include "capsfuse/capsule.hpp"
#include "capsfuse/errors.hpp"
#include "capsfuse/fusion.hpp"

namespace capsfuse {

std::string_view to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::CapsNet: return "capsnet";
    case FusionStrategy::Addition: return "add";
    case FusionStrategy::Concatenation: return "concat";
    case FusionStrategy::CrossAttention: return "xattn";
  }
  return "unknown";
}

FusionStrategy parse_fusion_strategy(std::string_view name) {
  if (name == "capsnet") return FusionStrategy::CapsNet;
  if (name == "add") return FusionStrategy::Addition;
  if (name == "concat") return FusionStrategy::Concatenation;
  if (name == "xattn") return FusionStrategy::CrossAttention;
  throw ConfigError("unknown fusion strategy '" + std::string(name) + "' (expected capsnet, add, concat, xattn)");
}

void ModelConfig::validate() const {
  if (!inputs.text_a || !inputs.text_b || !inputs.image || !inputs.numeric)
    throw ConfigError("every modality needs a positive input width");
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (!n_primary || !primary_dim || !digit_dim) throw ConfigError("capsule counts and dims must be positive");
  if (routing_iters < 1 || routing_iters > 10) throw ConfigError("routing_iters must lie in [1, 10]");
  if (share_text_weights && inputs.text_a != inputs.text_b)
    throw ConfigError("share_text_weights requires equal text_a and text_b widths");
  if (!numeric_embed_dim || !fused_dim || !classifier_hidden) throw ConfigError("layer widths must be positive");
  for (auto h : numeric_hidden)
    if (!h) throw ConfigError("numeric_hidden widths must be positive");
}

void check_batch(const ModelConfig& config, const Batch& batch) {
  const std::size_t n = batch.size();
  auto check = [n](const char* role, const Tensor& t, std::size_t expected) {
    if (t.rank() != 2 || t.dim(0) != n || t.dim(1) != expected) {
      throw DimensionError(std::string("modality ") + role + ": expected [" + std::to_string(n) + "x" +
                           std::to_string(expected) + "], got " + shape_to_string(t.shape()));
    }
  };
  if (n == 0) throw ContractError("empty batch");
  check("text_a", batch.text_a, config.inputs.text_a);
  check("text_b", batch.text_b, config.inputs.text_b);
  check("image", batch.image, config.inputs.image);
  check("numeric", batch.numeric, config.inputs.numeric);
}

DenseLayer DenseLayer::create(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {Parameter(name + ".weight", glorot_uniform({in, out}, in, out, rng)),
          Parameter(name + ".bias", Tensor({out}, 0.0))};
}

ad::Var DenseLayer::apply(ad::Tape& tape, ad::Var x) {
  return ad::add_bias(ad::matmul(x, tape.parameter(weight)), tape.parameter(bias));
}

Mlp Mlp::create(const std::string& name, const std::vector<std::size_t>& sizes, std::mt19937_64& rng) {
  if (sizes.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
    mlp.layers.push_back(DenseLayer::create(name + "." + std::to_string(i), sizes[i], sizes[i + 1], rng));
  return mlp;
}

ad::Var Mlp::apply(ad::Tape& tape, ad::Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].apply(tape, x);
    if (i + 1 < layers.size()) x = ad::tanh(x);
  }
  return x;
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

Tensor Model::predict(const Batch& batch) {
  ad::Tape tape;
  return forward(tape, batch).value();
}

std::vector<Tensor> Model::snapshot() {
  std::vector<Tensor> out;
  for (auto* p : parameters()) out.push_back(p->value);
  return out;
}

void Model::restore(const std::vector<Tensor>& values) {
  auto params = parameters();
  if (params.size() != values.size()) throw ContractError("snapshot does not match model parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != values[i].shape())
      throw DimensionError("snapshot shape mismatch for " + params[i]->name);
    params[i]->value = values[i];
  }
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

std::unique_ptr<Model> make_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.strategy == FusionStrategy::CapsNet) return std::make_unique<FusionCapsNet>(config, seed);
  return std::make_unique<BaselineModel>(config, seed);
}

}  // namespace capsfuse
