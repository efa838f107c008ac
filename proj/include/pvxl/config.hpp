#pragma once

// JSON forms of the training configuration and the run manifest. Missing keys
// take the struct defaults; unknown keys are rejected by their full path.

#include <string>

#include "json.hpp"
#include "pvxl/trainer.hpp"

namespace pvxl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
/// Throws ConfigError for unknown keys, wrong types or invalid values.
TrainConfig config_from_json(const nlohmann::json& j);
/// Throws IoError when unreadable or not JSON, ConfigError otherwise.
TrainConfig config_load(const std::string& path);
void config_save(const std::string& path, const TrainConfig& cfg);

nlohmann::json model_to_json(const ModelConfig& cfg);
ModelConfig model_from_json(const nlohmann::json& j);

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

}  // namespace pvxl
