#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "capsfuse/capsule.hpp"
#include "capsfuse/model.hpp"

namespace capsfuse {

enum class ConfidenceKind { Text, Image, Numeric };
std::string_view to_string(ConfidenceKind k);

// Per-sample confidence values, one per class.
struct ConfidenceVector {
  ConfidenceKind modality = ConfidenceKind::Image;
  std::vector<double> values;
};

// Length of the squashed digit capsule per class: [B x N_c].
ad::Var image_confidence(const CapsuleTensor& digits);
// Per-class cosine between the two text channels' digit capsules: [B x N_c].
// A zero-length operand gives 0 for that class.
ad::Var text_confidence(const CapsuleTensor& first, const CapsuleTensor& second);
// softmax over per-class capsule lengths, then 1 - p log2 p: [B x N_c].
ad::Var numeric_confidence(const CapsuleTensor& digits);

// Per-sample views of the three ops above.
std::vector<ConfidenceVector> confidence_vectors(ConfidenceKind kind, const Tensor& batch_values);

struct GateParams {
  ad::Var omega_text;
  ad::Var omega_image;
  ad::Var omega_numeric;
  ad::Var weight;  // 3*N_c x N_c
  ad::Var bias;    // N_c
};

struct GateOutput {
  ad::Var f;  // [B x 3*N_c], order text | image | numeric
  ad::Var g;  // [B x N_c] in (-1, 1)
};

GateOutput fuse_gate(ad::Var z_text, ad::Var z_image, ad::Var z_numeric, const GateParams& params);

// Interpretability record for one sample.
struct SampleTrace {
  std::size_t index = 0;
  int label = -1;
  // n_primary x N_c routing coefficients keyed by modality role.
  std::vector<std::pair<std::string, Tensor>> routing;
  std::vector<double> z_text;
  std::vector<double> z_image;
  std::vector<double> z_numeric;
  std::array<double, 3> omega{};  // text, image, numeric
  std::vector<double> f;
  std::vector<double> g;
  std::vector<double> probs;
};

using RoutingTrace = std::vector<SampleTrace>;

class FusionCapsNet final : public Model {
 public:
  struct CapsuleStack {
    PrimaryCapsuleLayer primary;
    DigitCapsuleLayer digit;
  };

  struct Output {
    ad::Var probs;
    RoutingTrace trace;
  };

  FusionCapsNet(const ModelConfig& config, std::uint64_t seed);

  std::vector<Parameter*> parameters() override;
  ad::Var forward(ad::Tape& tape, const Batch& batch) override;
  // Forward pass that also records one SampleTrace per row. Sample indices
  // start at first_index.
  Output forward_traced(ad::Tape& tape, const Batch& batch, std::size_t first_index = 0);

  Mlp numeric_encoder;
  CapsuleStack text_a;
  CapsuleStack text_b;  // unused when share_text_weights is set
  CapsuleStack image;
  CapsuleStack numeric;
  Parameter omega_text;
  Parameter omega_image;
  Parameter omega_numeric;
  Parameter gate_weight;
  Parameter gate_bias;
  Parameter head_weight;
  Parameter head_bias;

 private:
  struct Pass;
  Pass run(ad::Tape& tape, const Batch& batch);
};

namespace ops {

// Cosine over the last axis; rows where either operand has zero length give 0.
ad::Var cosine_last(ad::Var a, ad::Var b);
// Elementwise 1 - p log2 p, with the p log p term taken as 0 for p < 1e-12.
ad::Var certainty(ad::Var p);

}  // namespace ops

}  // namespace capsfuse
