#pragma once

#include <span>
#include <string>

#include "capsfuse/dataset.hpp"
#include "capsfuse/fusion.hpp"

namespace capsfuse {

// Per-sample trace records for the listed dataset rows. Baseline models have
// no capsules, so their records only carry index, label and probs.
RoutingTrace collect_trace(Model& model, const MultimodalDataset& ds, std::span<const std::size_t> indices);

// One JSON object per line: index, label, routing{text_a,text_b,image,numeric},
// confidence{text,image,numeric}, omega{text,image,numeric}, f, g, probs.
std::string to_jsonl(const RoutingTrace& trace);
std::string to_json_line(const SampleTrace& sample);

}  // namespace capsfuse
