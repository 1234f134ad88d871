#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "capsfuse/dataset.hpp"

namespace capsfuse {

// separable:      the label sign is written along one random direction of every modality.
// redundant:      only text_a and text_b carry the label, along one shared direction.
// xor_cross_modal: latents u, v = +-1 with label 1 iff u == v; u lives in both texts,
//                 v in the image, so no single modality is informative.
// noisy_modality: separable, except that noisy_role is pure noise.
enum class SynthMode { Separable, Redundant, XorCrossModal, NoisyModality };

std::string_view to_string(SynthMode m);
SynthMode parse_synth_mode(std::string_view name);

struct SynthSpec {
  std::size_t n = 1000;
  InputDims dims{32, 32, 32, 6};
  SynthMode mode = SynthMode::Separable;
  Role noisy_role = Role::Image;
  double positive_rate = 0.14;
  double noise_sigma = 0.5;
  // Length of the fixed per-modality mean vector every sample is offset by.
  double offset_norm = 1.5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Deterministic given the spec (including seed).
MultimodalDataset gen_synthetic(const SynthSpec& spec);

}  // namespace capsfuse
