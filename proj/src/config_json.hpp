#pragma once

// JSON mapping of ModelConfig shared by checkpoints and run configs.

#include "json.hpp"
#include "specgen/models.hpp"

namespace specgen::detail {

nlohmann::json model_config_json(const models::ModelConfig& c);
/// Missing keys keep their defaults when `partial` is set; otherwise every key is required.
models::ModelConfig model_config_from(const nlohmann::json& j, bool partial = false);

}  // namespace specgen::detail
