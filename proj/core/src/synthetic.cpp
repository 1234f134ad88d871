#include "capsfuse/synthetic.hpp"

#include <array>
#include <cmath>
#include <random>

#include "capsfuse/errors.hpp"

namespace capsfuse {

std::string_view to_string(SynthMode m) {
  switch (m) {
    case SynthMode::Separable: return "separable";
    case SynthMode::Redundant: return "redundant";
    case SynthMode::XorCrossModal: return "xor_cross_modal";
    case SynthMode::NoisyModality: return "noisy_modality";
  }
  return "unknown";
}

SynthMode parse_synth_mode(std::string_view name) {
  if (name == "separable") return SynthMode::Separable;
  if (name == "redundant") return SynthMode::Redundant;
  if (name == "xor_cross_modal" || name == "xor") return SynthMode::XorCrossModal;
  if (name == "noisy_modality" || name == "noisy") return SynthMode::NoisyModality;
  throw ConfigError("unknown synthetic mode '" + std::string(name) +
                    "' (expected separable, redundant, xor_cross_modal, noisy_modality)");
}

void SynthSpec::validate() const {
  if (n < 20) throw ConfigError("synthetic n must be >= 20");
  if (dims.text_a < 2 || dims.text_b < 2 || dims.image < 2 || dims.numeric < 2)
    throw ConfigError("every synthetic modality needs dim >= 2");
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) throw ConfigError("positive_rate must lie in (0, 1)");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (!(offset_norm >= 0.0) || !std::isfinite(offset_norm)) throw ConfigError("offset_norm must be >= 0");
}

namespace {

std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double len = 0.0;
  while (len < 1e-6) {
    len = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      len += x * x;
    }
    len = std::sqrt(len);
  }
  for (auto& x : v) x /= len;
  return v;
}

struct Channel {
  Role role;
  std::size_t dim;
  std::vector<double> offset;
  std::vector<double> direction;
};

}  // namespace

MultimodalDataset gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  const std::array<std::pair<Role, std::size_t>, 4> layout = {
      std::pair{Role::TextA, spec.dims.text_a}, std::pair{Role::TextB, spec.dims.text_b},
      std::pair{Role::Image, spec.dims.image}, std::pair{Role::Numeric, spec.dims.numeric}};
  std::vector<Channel> channels;
  for (auto [role, dim] : layout) {
    Channel c{role, dim, random_unit(dim, rng), random_unit(dim, rng)};
    for (auto& x : c.offset) x *= spec.offset_norm;
    channels.push_back(std::move(c));
  }
  if (spec.mode == SynthMode::Redundant && spec.dims.text_a == spec.dims.text_b) {
    channels[1].offset = channels[0].offset;
    channels[1].direction = channels[0].direction;
  }

  // Latent sign written into each channel, or 0 when the channel is uninformative.
  auto channel_sign = [&](Role role, int label, int u) -> int {
    const int s = label ? 1 : -1;
    switch (spec.mode) {
      case SynthMode::Separable: return s;
      case SynthMode::Redundant: return (role == Role::TextA || role == Role::TextB) ? s : 0;
      case SynthMode::NoisyModality: return role == spec.noisy_role ? 0 : s;
      case SynthMode::XorCrossModal: {
        const int v = label ? u : -u;
        if (role == Role::TextA || role == Role::TextB) return u;
        if (role == Role::Image) return v;
        return 0;
      }
    }
    return 0;
  };

  std::vector<ModalitySpec> mods;
  std::size_t width = 0;
  for (const auto& c : channels) {
    mods.push_back({std::string(to_string(c.role)), c.role, static_cast<std::uint32_t>(c.dim)});
    width += c.dim;
  }
  std::vector<float> values;
  values.reserve(spec.n * width);
  std::vector<std::uint8_t> labels;
  labels.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int label = uniform(rng) < spec.positive_rate ? 1 : 0;
    const int u = uniform(rng) < 0.5 ? 1 : -1;
    labels.push_back(static_cast<std::uint8_t>(label));
    for (const auto& c : channels) {
      const int sign = channel_sign(c.role, label, u);
      // Uninformative channels get unit-variance noise regardless of noise_sigma.
      const double sigma = sign == 0 ? 1.0 : spec.noise_sigma;
      for (std::size_t j = 0; j < c.dim; ++j) {
        const double x = c.offset[j] + sign * c.direction[j] + sigma * normal(rng);
        values.push_back(static_cast<float>(x));
      }
    }
  }
  return MultimodalDataset(std::move(mods), std::move(values), std::move(labels));
}

}  // namespace capsfuse
