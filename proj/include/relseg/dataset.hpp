#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "relseg/image.hpp"

namespace relseg::dataset {

// Row-major run-length encoding: alternating (start_offset, run_length)
// pairs over the set pixels, offsets 0-based.
std::vector<std::int64_t> rle_encode(const Mask& mask);
// Throws Error on overlapping, unordered, or out-of-range runs.
Mask rle_decode(const std::vector<std::int64_t>& rle, int height, int width);

struct Manifest {
  std::filesystem::path root;
  std::vector<std::string> ids;
};

nlohmann::json to_record(const SampleRecord& sample, bool with_scores = false);
// `index` is the record position, reported in CorruptManifestError.
SampleRecord from_record(const nlohmann::json& record, std::size_t index);

// Writes images/<id>.png plus annotations.jsonl under `root`.
Manifest write_dataset(const std::vector<SampleRecord>& samples, const std::filesystem::path& root,
                       bool with_scores = false);
std::vector<SampleRecord> read_dataset(const std::filesystem::path& root);
// Annotations only; images are left empty (height/width still set).
std::vector<SampleRecord> read_annotations(const std::filesystem::path& root);

void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

}  // namespace relseg::dataset
