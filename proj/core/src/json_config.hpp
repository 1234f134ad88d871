#pragma once

#include <json.hpp>

#include "capsfuse/config.hpp"

namespace capsfuse::detail {

nlohmann::json model_json(const ModelConfig& c, bool with_inputs);
ModelConfig model_from_json(const nlohmann::json& j);
nlohmann::json train_json(const TrainConfig& c);
TrainConfig train_from_json(const nlohmann::json& j);

}  // namespace capsfuse::detail
