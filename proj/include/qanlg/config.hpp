#pragma once

// Run configuration: flat "key = value" lines under [model], [train] and
// [data] headers. Unknown keys are rejected; every key can be overridden
// with "section.key=value".

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "qanlg/model.hpp"
#include "qanlg/trainer.hpp"

namespace qanlg {

struct DataConfig {
  std::map<std::string, std::string> tasks;  // task -> directory holding train.jsonl / dev.jsonl
  std::vector<std::string> metrics{"bleu", "ser_mr", "ser_trg", "ser_mtrg"};

  bool operator==(const DataConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  bool operator==(const RunConfig&) const = default;
};

// Errors are UsageError naming source and line.
RunConfig parse_run_config(std::istream& in, const std::string& source = "config");
RunConfig load_run_config(const std::string& path);
void set_config_value(RunConfig& config, const std::string& section, const std::string& key,
                      const std::string& value);
// "section.key=value"
void apply_override(RunConfig& config, const std::string& assignment);
std::string format_run_config(const RunConfig& config);

std::vector<std::string> split_list(const std::string& value, char sep = ',');

nlohmann::ordered_json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const TrainConfig& config);

}  // namespace qanlg
