#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "capsfuse/model.hpp"
#include "capsfuse/training.hpp"

namespace capsfuse {

struct EvalConfig {
  double fpr_max = 0.10;
  std::size_t n_seeds = 5;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

// JSON run description with sections data, model, train, eval, output.
// Modality widths are not part of it; they come from the dataset.
struct RunConfig {
  std::filesystem::path data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::filesystem::path output = "out";

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Unknown keys and wrongly typed values raise ConfigError.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

// Model/train sections on their own. The model form also carries the
// modality widths so a saved model is self-describing.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json_text);
std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(std::string_view json_text);

}  // namespace capsfuse
