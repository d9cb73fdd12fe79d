#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "relseg/config.hpp"
#include "relseg/image.hpp"
#include "relseg/training/losses.hpp"
#include "relseg/training/model.hpp"
#include "relseg/training/optimizer.hpp"

namespace relseg::training {

struct IterationRecord {
  int iteration = 0;
  double lr = 0.0;
  LossReport loss;
  double grad_norm = 0.0;
  bool clipped = false;
};

struct TrainResult {
  std::unique_ptr<Model> model;
  std::vector<IterationRecord> trace;
  double output_score_thresh = 0.0;  // as used by `model` and stored in the final checkpoint
};

struct TrainOptions {
  // Artifact directory (config snapshot, train_log.jsonl, checkpoints);
  // nothing is written when empty.
  std::filesystem::path out_dir;
  std::function<void(const IterationRecord&)> on_iteration;
};

// Builds the model for `config`, runs config.train.total_iters SGD steps over
// `data` and returns the trained model and loss trace. Afterwards the output
// score cut is calibrated on the first config.train.calibration_images
// training samples and written into the final checkpoint's config. Deterministic in
// (config, data). On a non-finite loss the NumericError propagates after it
// is logged and the untouched weights are saved as kLastGoodCheckpoint;
// earlier checkpoints are left as they are.
TrainResult train(const RunConfig& config, const std::vector<SampleRecord>& data, const TrainOptions& options = {});

struct Calibration {
  double threshold = 0.0;
  std::vector<std::pair<double, double>> mean_aji;  // (threshold, mean AJI over classes)
};

// Candidate final-score cuts tried by calibrate_output_threshold.
const std::vector<double>& calibration_grid();

// The cut from calibration_grid() maximising mean AJI over `samples`
// (lowest cut on ties). Predictions are computed once, then filtered.
Calibration calibrate_output_threshold(const Model& model, const std::vector<SampleRecord>& samples);

// Indices of the images in iteration `iteration`'s batch: consecutive slices
// of per-epoch permutations drawn from the seed.
std::vector<std::size_t> batch_indices(std::uint64_t seed, int iteration, int batch_size, std::size_t dataset_size);

// Runs inference on every sample; results keep the input id and image.
std::vector<SampleRecord> predict_dataset(const Model& model, const std::vector<SampleRecord>& samples);

// Restores a model (configuration and weights) from a checkpoint file.
std::unique_ptr<Model> load_model(const std::filesystem::path& checkpoint, RunConfig* config_out = nullptr);

inline constexpr const char* kFinalCheckpoint = "model_final.ckpt";
inline constexpr const char* kLastGoodCheckpoint = "model_last_good.ckpt";
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kConfigSnapshot = "config.json";
inline constexpr const char* kCalibration = "calibration.json";

}  // namespace relseg::training
