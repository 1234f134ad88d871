#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "capsfuse/model.hpp"

namespace capsfuse {

// Elementwise sum of equally sized modality vectors [B x d_f].
ad::Var fuse_add(std::span<const ad::Var> adapted);
// Concatenation in the given order (text_a, text_b, image, numeric): [B x 4*d_f].
ad::Var fuse_concat(std::span<const ad::Var> adapted);

struct CrossAttentionParams {
  // One projection per modality, each d_f x d_f.
  std::vector<ad::Var> query;
  std::vector<ad::Var> key;
  std::vector<ad::Var> value;
};

struct CrossAttentionOutput {
  ad::Var fused;  // [B x d_f], mean over modalities of their attended outputs
  // B x M x (M-1): weights each modality puts on the others, in modality
  // order with itself skipped.
  Tensor weights;
};

// Single-head scaled dot-product attention: modality m queries the other
// modalities' keys/values; the outputs are averaged over m.
CrossAttentionOutput fuse_cross_attention(std::span<const ad::Var> adapted, const CrossAttentionParams& params);

namespace ops {

// q[B x D], keys/values [B x M x D] -> sum_m softmax_m(scale * q.k_m) v_m: [B x D].
// If weights_out is non-null it receives the B x M attention weights.
ad::Var attend(ad::Var q, ad::Var keys, ad::Var values, double scale, Tensor* weights_out = nullptr);

}  // namespace ops

// Addition / Concatenation / Cross-Attention comparison model. Each modality
// is reduced to d_f by a learned linear adapter (numeric goes through the
// shared numeric encoder first), fused, then classified by [fused -> hidden -> N_c].
class BaselineModel final : public Model {
 public:
  BaselineModel(const ModelConfig& config, std::uint64_t seed);

  std::vector<Parameter*> parameters() override;
  ad::Var forward(ad::Tape& tape, const Batch& batch) override;

  std::size_t fused_width() const;

  Mlp numeric_encoder;
  std::array<DenseLayer, 4> adapters;
  std::array<Parameter, 4> query;
  std::array<Parameter, 4> key;
  std::array<Parameter, 4> value;
  Mlp classifier;
};

}  // namespace capsfuse
