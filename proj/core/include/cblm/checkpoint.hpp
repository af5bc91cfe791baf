#pragma once

#include <string>
#include <vector>

#include "cblm/concepts.hpp"
#include "cblm/model.hpp"

namespace cblm::train {

// Everything a checkpoint carries beyond the weights: how concepts are
// named, how raw values map to [0,1], and the largest concept activation
// seen while training (clamp interventions scale against it).
struct CheckpointExtras {
  concepts::ConceptRegistry registry = concepts::ConceptRegistry::builtin();
  concepts::NormalizationStats stats;
  std::vector<double> max_activation;
};

struct LoadedCheckpoint {
  model::CbModelF model;
  CheckpointExtras extras;
};

// Self-describing container: an 8-byte magic, a length-prefixed JSON header
// (config, registry, stats, tensor directory), then raw little-endian
// float32 payloads in directory order. Round-trips are bit-exact.
void save_checkpoint(const model::CbModelF& m, const CheckpointExtras& extras,
                     const std::string& path);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Single source of truth for the model-config JSON mapping, shared by the
// checkpoint header and the command-line config. Unknown keys are rejected.
model::ModelConfig parse_model_config(const std::string& json_text);
std::string render_model_config(const model::ModelConfig& cfg);

}  // namespace cblm::train
