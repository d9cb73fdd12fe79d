// relseg: command-line front end for data generation, training, inference,
// evaluation, visualization and ablation runs.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relseg/ablation.hpp"
#include "relseg/config.hpp"
#include "relseg/dataset.hpp"
#include "relseg/error.hpp"
#include "relseg/metrics.hpp"
#include "relseg/render.hpp"
#include "relseg/synth.hpp"
#include "relseg/training/trainer.hpp"

namespace fs = std::filesystem;
using namespace relseg;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

// Distinguishes bad input data from other failures when mapping exit codes.
class DataError : public Error {
 public:
  using Error::Error;
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(config, o);
  if (c.seed) {
    config.seed = *c.seed;
  } else if (const char* env = std::getenv("RELSEG_SEED")) {
    set_value(config, "seed", env);
  }
  config.validate();
  return config;
}

std::vector<SampleRecord> load_data(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  return dataset::read_dataset(dir);
}

void progress(const training::IterationRecord& r, int total) {
  const int done = r.iteration + 1;
  if (done % 100 == 0 || done == total) {
    std::cerr << "iter " << done << "/" << total << " lr " << r.lr << " total " << r.loss.total << '\n';
  }
}

int cmd_generate(const Common& common, const fs::path& out, int count) {
  const RunConfig config = resolve_config(common);
  dataset::write_dataset(synth::generate_dataset(config.synth, count, config.seed), out);
  save_config(config, out / training::kConfigSnapshot);
  return kOk;
}

int cmd_train(const Common& common, const fs::path& data, const fs::path& out) {
  const RunConfig config = resolve_config(common);
  const auto samples = load_data(data);
  const int total = config.train.total_iters;
  training::train(config, samples, {out, [total](const auto& r) { progress(r, total); }});
  return kOk;
}

std::unique_ptr<training::Model> open_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw CheckpointError("checkpoint not found: " + checkpoint.string());
  return training::load_model(checkpoint);
}

int cmd_predict(const fs::path& checkpoint, const fs::path& data, const fs::path& out) {
  const auto model = open_model(checkpoint);
  dataset::write_dataset(training::predict_dataset(*model, load_data(data)), out, true);
  return kOk;
}

int cmd_eval(const fs::path& pred, const fs::path& gt, const fs::path& out) {
  if (!fs::is_directory(pred)) throw DataError("prediction directory not found: " + pred.string());
  if (!fs::is_directory(gt)) throw DataError("ground-truth directory not found: " + gt.string());
  const auto report = metrics::evaluate(dataset::read_annotations(gt), dataset::read_annotations(pred));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << metrics::to_json(report).dump(2) << '\n';
  for (const auto& [name, cs] : report.per_class) {
    std::cout << name << ": aji " << cs.aji << " f1 " << cs.f1 << '\n';
  }
  return kOk;
}

int cmd_visualize(const fs::path& checkpoint, const fs::path& pred, const fs::path& data, const fs::path& out) {
  std::vector<SampleRecord> shown;
  if (!pred.empty()) {
    const auto images = load_data(data);
    std::map<std::string, const SampleRecord*> by_id;
    for (const auto& s : dataset::read_annotations(pred)) shown.push_back(s);
    for (const auto& s : images) by_id[s.id] = &s;
    for (auto& s : shown) {
      auto it = by_id.find(s.id);
      if (it == by_id.end()) throw DataError("no image for prediction '" + s.id + "'");
      s.image = it->second->image;
    }
  } else {
    if (checkpoint.empty()) throw ConfigError("visualize needs --checkpoint or --pred");
    const auto model = open_model(checkpoint);
    shown = training::predict_dataset(*model, load_data(data));
  }
  fs::create_directories(out);
  for (const auto& s : shown) dataset::write_png(render::overlay(s.image, s.instances), out / (s.id + ".png"));
  return kOk;
}

int cmd_ablate(const Common& common, const fs::path& data, const fs::path& test, const fs::path& grid_path,
               const fs::path& out) {
  const RunConfig config = resolve_config(common);
  std::vector<ablation::GridPoint> grid = ablation::default_grid();
  if (!grid_path.empty()) {
    std::ifstream in(grid_path);
    if (!in) throw ConfigError("cannot open grid file " + grid_path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    grid = ablation::parse_grid(ss.str());
  }
  grid = ablation::deduplicate(grid, std::cerr);
  const auto rows = ablation::run(config, load_data(data), load_data(test), grid, out, std::cerr);
  std::cout << ablation::csv_header() << '\n';
  for (const auto& r : rows) std::cout << ablation::csv_row(r) << '\n';
  return kOk;
}

int fail(int code, const std::string& what) {
  std::string line = what;
  for (char& c : line) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "relseg: error: " << line << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Overlapping-cell instance segmentation with relation modules"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* cmd, Common& c, const char* config_flag) {
    cmd->add_option(config_flag, c.config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "Override a config key (key=value), repeatable");
    cmd->add_option("--seed", c.seed, "Random seed (fallback: RELSEG_SEED, then the config)");
  };

  Common gen_c, train_c, ablate_c;
  std::string out, data, pred, gt, checkpoint, test, grid;
  int count = 0;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  add_common(gen, gen_c, "--spec");
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--count", count, "Number of images")->required()->check(CLI::NonNegativeNumber);

  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, train_c, "--config");
  tr->add_option("--data", data, "Training dataset directory")->required();
  tr->add_option("--out", out, "Run directory (config snapshot, log, checkpoints)")->required();

  auto* pr = app.add_subcommand("predict", "Run a checkpoint on a dataset");
  pr->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  pr->add_option("--data", data, "Dataset directory")->required();
  pr->add_option("--out", out, "Prediction directory")->required();

  auto* ev = app.add_subcommand("eval", "Compute AJI and F1");
  ev->add_option("--pred", pred, "Prediction directory")->required();
  ev->add_option("--gt", gt, "Ground-truth dataset directory")->required();
  ev->add_option("--out", out, "Report JSON path")->required();

  auto* vis = app.add_subcommand("visualize", "Render contour overlays");
  vis->add_option("--checkpoint", checkpoint, "Checkpoint file");
  vis->add_option("--pred", pred, "Existing prediction directory (instead of --checkpoint)");
  vis->add_option("--data", data, "Dataset directory")->required();
  vis->add_option("--out", out, "Output image directory")->required();

  auto* ab = app.add_subcommand("ablate", "Train and evaluate a grid of relation-module settings");
  add_common(ab, ablate_c, "--config");
  ab->add_option("--data", data, "Training dataset directory")->required();
  ab->add_option("--test", test, "Test dataset directory")->required();
  ab->add_option("--grid", grid, "Grid file, one 'DF MSK RL' triple of 0/1 per line");
  ab->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kUsage, e.what());
  }

  try {
    if (*gen) return cmd_generate(gen_c, out, count);
    if (*tr) return cmd_train(train_c, data, out);
    if (*pr) return cmd_predict(checkpoint, data, out);
    if (*ev) return cmd_eval(pred, gt, out);
    if (*vis) return cmd_visualize(checkpoint, pred, data, out);
    if (*ab) return cmd_ablate(ablate_c, data, test, grid, out);
  } catch (const ConfigError& e) {
    return fail(kUsage, e.what());
  } catch (const DataError& e) {
    return fail(kData, e.what());
  } catch (const CorruptManifestError& e) {
    return fail(kData, e.what());
  } catch (const CheckpointError& e) {
    return fail(kData, e.what());
  } catch (const InfeasibleSpecError& e) {
    return fail(kData, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kData, e.what());
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
  return kUsage;
}
