#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capsfuse/model.hpp"

namespace capsfuse {

enum class Role : std::uint8_t { TextA = 0, TextB = 1, Image = 2, Numeric = 3 };

std::string_view to_string(Role r);
Role parse_role(std::string_view name);

struct ModalitySpec {
  std::string name;
  Role role = Role::TextA;
  std::uint32_t dim = 0;

  friend bool operator==(const ModalitySpec&, const ModalitySpec&) = default;
};

// Samples stored row-major as f32: each row holds every modality's values in
// header order. Labels are 0 or 1.
class MultimodalDataset {
 public:
  MultimodalDataset() = default;
  MultimodalDataset(std::vector<ModalitySpec> modalities, std::vector<float> values, std::vector<std::uint8_t> labels);

  const std::vector<ModalitySpec>& modalities() const { return modalities_; }
  const std::vector<float>& values() const { return values_; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t row_width() const { return row_width_; }

  const ModalitySpec& modality(Role role) const;
  // Values of one modality for one sample.
  std::span<const float> features(std::size_t sample, Role role) const;
  InputDims input_dims() const;
  std::vector<int> int_labels() const;

  // Gathers the listed samples into a double-precision batch.
  Batch batch(std::span<const std::size_t> indices) const;

  // Every role exactly once, n >= 1, finite values, labels in {0, 1}.
  void validate() const;

  friend bool operator==(const MultimodalDataset&, const MultimodalDataset&) = default;

 private:
  std::vector<ModalitySpec> modalities_;
  std::vector<float> values_;
  std::vector<std::uint8_t> labels_;
  std::size_t row_width_ = 0;
};

// Little-endian "CFDS" v1 container.
std::string encode_dataset(const MultimodalDataset& ds);
MultimodalDataset decode_dataset(std::string_view bytes);

// CSV: header `label,<role>:<index>,...`, one sample per row.
std::string encode_dataset_csv(const MultimodalDataset& ds);
MultimodalDataset decode_dataset_csv(std::string_view text);

// Chooses the format by extension: .csv is CSV, everything else binary.
void write_dataset(const MultimodalDataset& ds, const std::filesystem::path& path);
MultimodalDataset read_dataset(const std::filesystem::path& path);

}  // namespace capsfuse
