#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "relseg/image.hpp"

namespace relseg::synth {

// Parameters of one synthetic Pap-smear-like scene. Ranges are inclusive.
struct SceneSpec {
  int image_size = 256;
  int n_clumps = 3;
  int cells_per_clump_min = 1;
  int cells_per_clump_max = 3;
  double cell_radius_min = 16.0;
  double cell_radius_max = 28.0;
  double nucleus_ratio = 0.3;
  // Target IoU between a newly placed cell and the clump member it leans on.
  double overlap_target = 0.3;
  int n_distractors = 3;
  std::uint64_t rng_seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

inline constexpr int kPlacementRetries = 100;
// Accepted deviation of a placed pair's IoU from overlap_target.
inline constexpr double kOverlapTolerance = 0.1;

// Pure function of `spec`. Throws InfeasibleSpecError when a clump cannot be
// placed within kPlacementRetries attempts.
SampleRecord generate_sample(const SceneSpec& spec, const std::string& id = "0");

// `count` samples with ids "000000", "000001", ...; sample i uses a scene
// seed derived from (seed, i), so datasets with the same seed share prefixes.
std::vector<SampleRecord> generate_dataset(SceneSpec spec, int count, std::uint64_t seed);

}  // namespace relseg::synth
