// Model checkpoints: named parameter arrays plus the hyperparameters needed
// to rebuild the network, stored as a single versioned JSON document.
#pragma once

#include <string>

#include <json.hpp>

#include "ritw/tape.hpp"

namespace ritw {

struct ModelCheckpoint {
  int format_version = 1;
  std::string model_kind;   // "propensity", "outcome", "end_to_end"
  nlohmann::json meta;      // dims, hyperparameters, training summary
  ParameterStore params;
};

nlohmann::json checkpoint_to_json(const ModelCheckpoint& ckpt);
ModelCheckpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace ritw
