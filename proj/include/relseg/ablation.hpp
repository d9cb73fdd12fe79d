#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "relseg/config.hpp"
#include "relseg/image.hpp"
#include "relseg/metrics.hpp"

namespace relseg::ablation {

// One relation-module configuration: which encoder inputs are used and
// whether instances exchange messages. All three off disables the module.
struct GridPoint {
  bool df = false;
  bool msk = false;
  bool rl = false;
  bool operator==(const GridPoint&) const = default;
};

// none, DF+MSK, DF+RL, MSK+RL, DF+MSK+RL.
std::vector<GridPoint> default_grid();

// One "DF MSK RL" triple of 0/1 per line; '#' starts a comment.
std::vector<GridPoint> parse_grid(const std::string& text);

// Keeps first occurrences; writes one warning line per dropped duplicate.
std::vector<GridPoint> deduplicate(const std::vector<GridPoint>& grid, std::ostream& warnings);

// The run configuration for a grid point on top of `base`.
RunConfig configure(const RunConfig& base, const GridPoint& point);

struct Row {
  GridPoint point;
  double aji_cyto = 0, aji_nuclei = 0, f1_cyto = 0, f1_nuclei = 0;
  std::string status = "ok";  // "ok" or "error: <message>"
};

std::string csv_header();
std::string csv_row(const Row& row);

// Trains and evaluates every grid point with the shared seed in
// `base.seed`, writing one subdirectory per point under `out_dir` and
// results.csv. A failing point becomes an error row; the rest still run.
std::vector<Row> run(const RunConfig& base, const std::vector<SampleRecord>& train_set,
                     const std::vector<SampleRecord>& test_set, const std::vector<GridPoint>& grid,
                     const std::filesystem::path& out_dir, std::ostream& log);

}  // namespace relseg::ablation
