#pragma once

#include <json.hpp>

#include "vicon/model.hpp"

namespace vicon {

struct TrainConfig;

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace vicon
