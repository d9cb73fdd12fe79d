#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "relseg/nn.hpp"

namespace relseg::training {

struct NamedArray {
  std::string name;
  ag::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json config;  // run configuration snapshot
  int iteration = 0;
  std::vector<NamedArray> arrays;
};

// Single binary file: magic, version, config JSON, iteration, then the named
// arrays in registration order (little-endian doubles). Written through a
// temporary file and renamed, so an interrupted write never replaces a good
// checkpoint.
void save_checkpoint(const std::filesystem::path& path, const nn::ParamStore& store, const nlohmann::json& config,
                     int iteration);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies the arrays into `store`. Throws CheckpointError listing every
// missing, unexpected, or shape-mismatched name.
void load_parameters(const Checkpoint& checkpoint, nn::ParamStore& store);

}  // namespace relseg::training
