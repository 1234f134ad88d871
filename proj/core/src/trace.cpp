#include "capsfuse/trace.hpp"

#include <json.hpp>

namespace capsfuse {

namespace {
constexpr std::size_t kChunk = 256;

nlohmann::ordered_json matrix_json(const Tensor& m) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < m.dim(1); ++j) row.push_back(m.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}
}  // namespace

RoutingTrace collect_trace(Model& model, const MultimodalDataset& ds, std::span<const std::size_t> indices) {
  RoutingTrace out;
  auto* capsnet = dynamic_cast<FusionCapsNet*>(&model);
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    auto chunk = indices.subspan(start, std::min(kChunk, indices.size() - start));
    auto batch = ds.batch(chunk);
    if (capsnet) {
      ad::Tape tape;
      auto traced = capsnet->forward_traced(tape, batch);
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        traced.trace[b].index = chunk[b];
        out.push_back(std::move(traced.trace[b]));
      }
    } else {
      const auto probs = model.predict(batch);
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        SampleTrace s;
        s.index = chunk[b];
        s.label = batch.labels[b];
        for (std::size_t c = 0; c < probs.dim(1); ++c) s.probs.push_back(probs.at(b, c));
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::string to_json_line(const SampleTrace& s) {
  nlohmann::ordered_json j;
  j["index"] = s.index;
  j["label"] = s.label;
  auto routing = nlohmann::ordered_json::object();
  for (const auto& [role, coeffs] : s.routing) routing[role] = matrix_json(coeffs);
  j["routing"] = routing;
  if (!s.routing.empty()) {
    j["confidence"] = {{"text", s.z_text}, {"image", s.z_image}, {"numeric", s.z_numeric}};
    j["omega"] = {{"text", s.omega[0]}, {"image", s.omega[1]}, {"numeric", s.omega[2]}};
    j["f"] = s.f;
    j["g"] = s.g;
  }
  j["probs"] = s.probs;
  return j.dump();
}

std::string to_jsonl(const RoutingTrace& trace) {
  std::string out;
  for (const auto& s : trace) {
    out += to_json_line(s);
    out += '\n';
  }
  return out;
}

}  // namespace capsfuse
