#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "relseg/synth.hpp"
#include "relseg/training/model.hpp"
#include "relseg/training/optimizer.hpp"

namespace relseg {

struct TrainConfig {
  int batch_size = 2;
  int total_iters = 5000;
  int checkpoint_every = 1000;  // 0 disables intermediate checkpoints
  training::Schedule schedule;
  double clip_norm = 10.0;
  double alpha = 1.0;  // weight of the duplicate-removal loss
  double beta = 1.0;   // weight of the relation-refined mask loss
  // Train through the plain detector loss code path (modules must be off).
  bool baseline_path = false;
  // Training images used to pick test.output_score_thresh after training;
  // 0 keeps the configured value.
  int calibration_images = 100;
};

struct RunConfig {
  std::uint64_t seed = 0;
  training::ModelConfig model;
  TrainConfig train;
  synth::SceneSpec synth;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

// Every addressable key in dotted form, in declaration order.
std::vector<std::string> config_keys();

// Nested JSON with every key materialized.
nlohmann::json to_json(const RunConfig& config);

// Applies the keys present in `j` (nested objects or dotted keys) on top of
// `base`. Unknown keys and ill-typed values throw ConfigError.
RunConfig apply_json(const nlohmann::json& j, RunConfig base = {});

// Parses `value` according to the key's type.
void set_value(RunConfig& config, const std::string& key, const std::string& value);

// "key=value" override as given on the command line.
void apply_override(RunConfig& config, const std::string& assignment);

RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void save_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace relseg
