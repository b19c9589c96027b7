#pragma once

#include <string>
#include <string_view>

#include "dfsq/config.hpp"
#include "dfsq/tasks.hpp"
#include "dfsq/train_eval.hpp"
#include "json.hpp"

namespace dfsq {

// Everything a config file can set.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  TaskSpec task;

  // Throws ConfigError; also ties the task vocabulary to the model's.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Flat "key = value" text, '#' starts a comment. Model keys are the ModelConfig field names
// (strategy sub-fields as k, agg_fn, residual_mode); training and task keys are listed in
// config_keys(). Unknown or repeated keys are errors.
RunConfig parse_config(std::string_view text);
RunConfig load_config_file(const std::string& path);
std::string format_config(const RunConfig& cfg);
const std::vector<std::string>& config_keys();

nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const TaskSpec& spec);
nlohmann::json to_json(const RunConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
TaskSpec task_spec_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

}  // namespace dfsq
