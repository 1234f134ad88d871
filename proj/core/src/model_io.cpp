#include "capsfuse/model_io.hpp"

#include "capsfuse/errors.hpp"
#include "capsfuse/io.hpp"
#include "json_config.hpp"

namespace capsfuse {

namespace {
constexpr std::string_view kMagic = "CFMD";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::string encode_model(Model& model, const TrainConfig& train) {
  const nlohmann::json meta = {{"model", detail::model_json(model.config(), true)},
                               {"train", detail::train_json(train)}};
  const std::string meta_text = meta.dump();
  io::ByteWriter w;
  w.put_bytes(kMagic);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta_text.size()));
  w.put_bytes(meta_text);
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p->name.size()));
    w.put_bytes(p->name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p->value.rank()));
    for (auto d : p->value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : p->value.data()) w.put<double>(v);
  }
  return std::move(w.str());
}

LoadedModel decode_model(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < 4 || r.take(4) != kMagic) throw FormatError("not a model file (bad magic)");
  if (const auto version = r.get<std::uint32_t>(); version != kVersion)
    throw FormatError("unsupported model file version " + std::to_string(version));
  const auto meta_len = r.get<std::uint32_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.take(meta_len));
  } catch (const nlohmann::json::parse_error&) {
    throw FormatError("model metadata is not valid JSON");
  }
  if (!meta.contains("model") || !meta.contains("train")) throw FormatError("model metadata is incomplete");
  LoadedModel out;
  out.train = detail::train_from_json(meta["train"]);
  out.model = make_model(detail::model_from_json(meta["model"]), 0);

  auto params = out.model->parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size())
    throw FormatError("model file holds " + std::to_string(count) + " parameters, expected " +
                      std::to_string(params.size()));
  for (auto* p : params) {
    const auto name_len = r.get<std::uint16_t>();
    const std::string name(r.take(name_len));
    if (name != p->name) throw FormatError("model file parameter '" + name + "' where '" + p->name + "' expected");
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    if (shape != p->value.shape())
      throw FormatError("parameter '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                        shape_to_string(p->value.shape()));
    for (auto& v : p->value.data()) v = r.get<double>();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after model parameters");
  return out;
}

void write_model(Model& model, const TrainConfig& train, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_model(model, train));
}

LoadedModel read_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace capsfuse
