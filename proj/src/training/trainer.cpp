#include "relseg/training/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>

#include "relseg/error.hpp"
#include "relseg/metrics.hpp"
#include "relseg/rng.hpp"
#include "relseg/training/checkpoint.hpp"

namespace relseg::training {

namespace fs = std::filesystem;

std::vector<std::size_t> batch_indices(std::uint64_t seed, int iteration, int batch_size, std::size_t n) {
  std::vector<std::size_t> out;
  if (n == 0) return out;
  int cached_epoch = -1;
  std::vector<std::size_t> perm(n);
  for (int b = 0; b < batch_size; ++b) {
    const std::uint64_t pos = static_cast<std::uint64_t>(iteration) * batch_size + b;
    const int epoch = static_cast<int>(pos / n);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      auto rng = stream_rng(seed, "data.epoch." + std::to_string(epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

TrainResult train(const RunConfig& config, const std::vector<SampleRecord>& data, const TrainOptions& options) {
  config.validate();
  if (data.empty() && config.train.total_iters > 0) throw Error("training set is empty");
  TrainResult result;
  result.model = std::make_unique<Model>(config.model, config.seed);
  Model& model = *result.model;
  Sgd sgd(model.store(), config.train.schedule, config.train.clip_norm);

  const bool write = !options.out_dir.empty();
  const nlohmann::json snapshot = to_json(config);
  std::ofstream log;
  if (write) {
    fs::create_directories(options.out_dir);
    save_config(config, options.out_dir / kConfigSnapshot);
    log.open(options.out_dir / kTrainLog, std::ios::trunc);
    if (!log) throw Error("cannot write " + (options.out_dir / kTrainLog).string());
  }

  const int B = config.train.batch_size;
  for (int it = 0; it < config.train.total_iters; ++it) {
    std::vector<const SampleRecord*> batch;
    std::vector<std::mt19937_64> rngs;
    for (std::size_t k : batch_indices(config.seed, it, B, data.size())) {
      batch.push_back(&data[k]);
      rngs.push_back(stream_rng(config.seed, "sample." + std::to_string(it) + "." + std::to_string(rngs.size())));
    }
    WeightedLoss loss;
    try {
      if (config.train.baseline_path) {
        loss = baseline_loss(model.baseline_losses(batch, rngs));
      } else {
        loss = total_loss(model.losses(batch, rngs), config.train.alpha, config.train.beta);
      }
    } catch (const NumericError& e) {
      if (write) {
        log << nlohmann::json{{"iter", it}, {"error", e.what()}}.dump() << '\n';
        // The weights have not been touched by the failing step.
        save_checkpoint(options.out_dir / kLastGoodCheckpoint, model.store(), snapshot, it);
      }
      throw;
    }
    ag::backward(loss.total);
    const StepInfo step = sgd.step(it);
    if (step.clipped && write) {
      std::cerr << "iteration " << it << ": gradient norm " << step.grad_norm << " clipped to "
                << config.train.clip_norm << '\n';
    }

    IterationRecord rec{it, step.lr, loss.report, step.grad_norm, step.clipped};
    if (write) {
      nlohmann::json j = to_json(rec.loss);
      j["iter"] = it;
      j["lr"] = rec.lr;
      j["grad_norm"] = rec.grad_norm;
      j["clipped"] = rec.clipped;
      log << j.dump() << '\n';
      log.flush();
    }
    if (options.on_iteration) options.on_iteration(rec);
    result.trace.push_back(rec);

    const int done = it + 1;
    if (write && config.train.checkpoint_every > 0 && done % config.train.checkpoint_every == 0 &&
        done < config.train.total_iters) {
      save_checkpoint(options.out_dir / ("model_" + std::to_string(done) + ".ckpt"), model.store(), snapshot, done);
    }
  }

  result.output_score_thresh = config.model.output_score_thresh;
  nlohmann::json final_config = snapshot;
  const std::size_t n_cal = std::min<std::size_t>(config.train.calibration_images, data.size());
  if (n_cal > 0) {
    const std::vector<SampleRecord> cal(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n_cal));
    const Calibration c = calibrate_output_threshold(model, cal);
    result.output_score_thresh = c.threshold;
    model.set_output_score_thresh(c.threshold);
    final_config["test"]["output_score_thresh"] = c.threshold;
    if (write) {
      nlohmann::json j{{"threshold", c.threshold}, {"images", n_cal}, {"mean_aji", nlohmann::json::array()}};
      for (const auto& [t, a] : c.mean_aji) j["mean_aji"].push_back({t, a});
      std::ofstream(options.out_dir / kCalibration) << j.dump(2) << '\n';
    }
  }
  if (write) save_checkpoint(options.out_dir / kFinalCheckpoint, model.store(), final_config, config.train.total_iters);
  return result;
}

const std::vector<double>& calibration_grid() {
  static const std::vector<double> grid{0.01, 0.02, 0.03, 0.05, 0.07, 0.1,  0.15, 0.2,  0.25, 0.3, 0.35,
                                        0.4,  0.45, 0.5,  0.55, 0.6,  0.65, 0.7,  0.75, 0.8,  0.85, 0.9, 0.95};
  return grid;
}

Calibration calibrate_output_threshold(const Model& model, const std::vector<SampleRecord>& samples) {
  std::vector<SampleRecord> raw;
  raw.reserve(samples.size());
  for (const auto& s : samples) raw.push_back({s.id, {}, model.predict(s.image, 0.0), {}});
  Calibration out;
  double best = -1.0;
  for (double t : calibration_grid()) {
    std::vector<SampleRecord> cut = raw;
    for (auto& r : cut) std::erase_if(r.instances, [t](const Instance& i) { return i.score < t; });
    const double aji = metrics::evaluate(samples, cut).mean_aji;
    out.mean_aji.emplace_back(t, aji);
    if (aji > best) {
      best = aji;
      out.threshold = t;
    }
  }
  return out;
}

std::vector<SampleRecord> predict_dataset(const Model& model, const std::vector<SampleRecord>& samples) {
  std::vector<SampleRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, s.image, model.predict(s.image), {}});
  return out;
}

std::unique_ptr<Model> load_model(const fs::path& path, RunConfig* config_out) {
  const Checkpoint ck = read_checkpoint(path);
  RunConfig config;
  try {
    config = apply_json(ck.config);
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": config snapshot rejected: " + e.what());
  }
  auto model = std::make_unique<Model>(config.model, config.seed);
  load_parameters(ck, model->store());
  if (config_out) *config_out = config;
  return model;
}

}  // namespace relseg::training
