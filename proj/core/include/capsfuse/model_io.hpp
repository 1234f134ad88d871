#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "capsfuse/model.hpp"
#include "capsfuse/training.hpp"

namespace capsfuse {

struct LoadedModel {
  std::unique_ptr<Model> model;
  TrainConfig train;
};

// Little-endian "CFMD" v1: u32 version, u32 metadata length, metadata JSON
// (model and train config), u32 parameter count, then per parameter u16 name
// length, name, u8 rank, u32 dims, f64 values.
std::string encode_model(Model& model, const TrainConfig& train);
LoadedModel decode_model(std::string_view bytes);

void write_model(Model& model, const TrainConfig& train, const std::filesystem::path& path);
LoadedModel read_model(const std::filesystem::path& path);

}  // namespace capsfuse
