#include "capsfuse/dataset.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <sstream>

#include "capsfuse/errors.hpp"
#include "capsfuse/io.hpp"

namespace capsfuse {

namespace {

constexpr std::string_view kMagic = "CFDS";
constexpr std::uint32_t kVersion = 1;

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, const std::string& where) {
  T value{};
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ValidationError(where + ": cannot parse '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace

std::string_view to_string(Role r) {
  switch (r) {
    case Role::TextA: return "text_a";
    case Role::TextB: return "text_b";
    case Role::Image: return "image";
    case Role::Numeric: return "numeric";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  for (auto r : {Role::TextA, Role::TextB, Role::Image, Role::Numeric})
    if (to_string(r) == name) return r;
  throw ConfigError("unknown modality role '" + std::string(name) + "'");
}

MultimodalDataset::MultimodalDataset(std::vector<ModalitySpec> modalities, std::vector<float> values,
                                     std::vector<std::uint8_t> labels)
    : modalities_(std::move(modalities)), values_(std::move(values)), labels_(std::move(labels)) {
  for (const auto& m : modalities_) row_width_ += m.dim;
  if (values_.size() != labels_.size() * row_width_) {
    throw DimensionError("dataset holds " + std::to_string(values_.size()) + " values for " +
                         std::to_string(labels_.size()) + " samples of width " + std::to_string(row_width_));
  }
  validate();
}

void MultimodalDataset::validate() const {
  std::array<int, 4> seen{};
  for (const auto& m : modalities_) {
    if (m.dim == 0) throw ValidationError("modality '" + m.name + "' has zero width");
    seen[static_cast<std::size_t>(m.role)] += 1;
  }
  for (std::size_t r = 0; r < 4; ++r) {
    if (seen[r] != 1) {
      throw ValidationError("role " + std::string(to_string(static_cast<Role>(r))) + " appears " +
                            std::to_string(seen[r]) + " times (expected exactly once)");
    }
  }
  if (labels_.empty()) throw ValidationError("dataset has no samples");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] > 1) throw ValidationError("row " + std::to_string(i) + ": label must be 0 or 1");
    for (std::size_t j = 0; j < row_width_; ++j) {
      if (!std::isfinite(values_[i * row_width_ + j]))
        throw ValidationError("row " + std::to_string(i) + ": non-finite value");
    }
  }
}

const ModalitySpec& MultimodalDataset::modality(Role role) const {
  for (const auto& m : modalities_)
    if (m.role == role) return m;
  throw ValidationError("dataset lacks role " + std::string(to_string(role)));
}

std::span<const float> MultimodalDataset::features(std::size_t sample, Role role) const {
  std::size_t offset = 0;
  for (const auto& m : modalities_) {
    if (m.role == role) return std::span<const float>(values_).subspan(sample * row_width_ + offset, m.dim);
    offset += m.dim;
  }
  throw ValidationError("dataset lacks role " + std::string(to_string(role)));
}

InputDims MultimodalDataset::input_dims() const {
  return {modality(Role::TextA).dim, modality(Role::TextB).dim, modality(Role::Image).dim,
          modality(Role::Numeric).dim};
}

std::vector<int> MultimodalDataset::int_labels() const { return {labels_.begin(), labels_.end()}; }

Batch MultimodalDataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ContractError("empty batch");
  const std::size_t n = indices.size();
  auto gather = [&](Role role) {
    const std::size_t dim = modality(role).dim;
    Tensor t({n, dim}, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
      if (indices[b] >= size()) throw ContractError("sample index out of range");
      auto f = features(indices[b], role);
      for (std::size_t j = 0; j < dim; ++j) t.at(b, j) = static_cast<double>(f[j]);
    }
    return t;
  };
  Batch batch{gather(Role::TextA), gather(Role::TextB), gather(Role::Image), gather(Role::Numeric), {}};
  batch.labels.reserve(n);
  for (auto i : indices) batch.labels.push_back(labels_[i]);
  return batch;
}

std::string encode_dataset(const MultimodalDataset& ds) {
  io::ByteWriter w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.modalities().size()));
  for (const auto& m : ds.modalities()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(m.name.size()));
    w.put_bytes(m.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(m.role));
    w.put<std::uint32_t>(m.dim);
  }
  const std::size_t width = ds.row_width();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < width; ++j) w.put<float>(ds.values()[i * width + j]);
    w.put<std::uint8_t>(ds.labels()[i]);
  }
  return std::move(w.str());
}

MultimodalDataset decode_dataset(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 4 || r.take(4) != kMagic) throw FormatError("not a CFDS dataset (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported CFDS version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  const auto n_mod = r.get<std::uint32_t>();
  std::vector<ModalitySpec> mods;
  std::size_t width = 0;
  for (std::uint32_t m = 0; m < n_mod; ++m) {
    ModalitySpec spec;
    const auto len = r.get<std::uint16_t>();
    spec.name = std::string(r.take(len));
    const auto role = r.get<std::uint8_t>();
    if (role > 3) throw FormatError("invalid role code " + std::to_string(role));
    spec.role = static_cast<Role>(role);
    spec.dim = r.get<std::uint32_t>();
    width += spec.dim;
    mods.push_back(std::move(spec));
  }
  const std::size_t record = width * sizeof(float) + 1;
  if (r.remaining() != static_cast<std::size_t>(n) * record) {
    throw FormatError("dataset body holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                      std::to_string(static_cast<std::size_t>(n) * record));
  }
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(n) * width);
  std::vector<std::uint8_t> labels;
  labels.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < width; ++j) values.push_back(r.get<float>());
    labels.push_back(r.get<std::uint8_t>());
  }
  return MultimodalDataset(std::move(mods), std::move(values), std::move(labels));
}

std::string encode_dataset_csv(const MultimodalDataset& ds) {
  std::string out = "label";
  for (const auto& m : ds.modalities())
    for (std::uint32_t j = 0; j < m.dim; ++j) out += "," + std::string(to_string(m.role)) + ":" + std::to_string(j);
  out += '\n';
  char buf[64];
  const std::size_t width = ds.row_width();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(ds.labels()[i]);
    for (std::size_t j = 0; j < width; ++j) {
      auto res = std::to_chars(buf, buf + sizeof buf, ds.values()[i * width + j]);
      out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

MultimodalDataset decode_dataset_csv(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw FormatError("empty CSV dataset");
  const auto header = split(lines[0], ',');
  if (header.empty() || header[0] != "label") throw FormatError("CSV header must start with 'label'");

  std::vector<ModalitySpec> mods;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto col = header[c];
    const auto colon = col.find(':');
    if (colon == std::string_view::npos) throw FormatError("CSV column '" + std::string(col) + "' lacks ':<index>'");
    const auto name = col.substr(0, colon);
    const auto index = parse_number<std::uint32_t>(col.substr(colon + 1), "header column " + std::to_string(c));
    if (mods.empty() || mods.back().name != name) {
      Role role;
      try {
        role = parse_role(name);
      } catch (const ConfigError&) {
        throw FormatError("CSV modality '" + std::string(name) + "' is not a role name");
      }
      mods.push_back({std::string(name), role, 0});
    }
    if (index != mods.back().dim) {
      throw FormatError("CSV column '" + std::string(col) + "' out of order (expected index " +
                        std::to_string(mods.back().dim) + ")");
    }
    mods.back().dim += 1;
  }

  const std::size_t width = header.size() - 1;
  std::vector<float> values;
  std::vector<std::uint8_t> labels;
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const std::string row = "row " + std::to_string(l - 1);
    const auto cells = split(lines[l], ',');
    if (cells.size() != width + 1) {
      throw ValidationError(row + ": expected " + std::to_string(width) + " values, found " +
                            std::to_string(cells.size() - 1));
    }
    const int label = parse_number<int>(cells[0], row);
    if (label != 0 && label != 1) throw ValidationError(row + ": label must be 0 or 1");
    labels.push_back(static_cast<std::uint8_t>(label));
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const float v = parse_number<float>(cells[c], row);
      if (!std::isfinite(v)) throw ValidationError(row + ": non-finite value");
      values.push_back(v);
    }
  }
  return MultimodalDataset(std::move(mods), std::move(values), std::move(labels));
}

void write_dataset(const MultimodalDataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, path.extension() == ".csv" ? encode_dataset_csv(ds) : encode_dataset(ds));
}

MultimodalDataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return path.extension() == ".csv" ? decode_dataset_csv(bytes) : decode_dataset(bytes);
}

}  // namespace capsfuse
