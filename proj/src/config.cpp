#include "relseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <variant>

#include "relseg/error.hpp"

namespace relseg {

namespace {

using Ref = std::variant<int*, double*, bool*, std::uint64_t*>;

std::vector<std::pair<std::string, Ref>> bind(RunConfig& c) {
  auto& m = c.model;
  auto& t = c.train;
  auto& s = c.synth;
  return {
      {"seed", &c.seed},
      {"model.channels", &m.channels},
      {"rpn.pre_nms_topk_train", &m.train_proposals.pre_nms_topk},
      {"rpn.post_nms_topk_train", &m.train_proposals.post_nms_topk},
      {"rpn.pre_nms_topk_test", &m.test_proposals.pre_nms_topk},
      {"rpn.post_nms_topk_test", &m.test_proposals.post_nms_topk},
      {"rpn.nms_iou", &m.train_proposals.nms_iou},
      {"rpn.min_size", &m.train_proposals.min_size},
      {"rpn.batch_per_image", &m.rpn_sampling.batch_per_image},
      {"rpn.positive_fraction", &m.rpn_sampling.positive_fraction},
      {"rpn.positive_iou", &m.rpn_sampling.positive_iou},
      {"rpn.negative_iou", &m.rpn_sampling.negative_iou},
      {"roi.batch_per_image", &m.roi_sampling.batch_per_image},
      {"roi.foreground_fraction", &m.roi_sampling.foreground_fraction},
      {"roi.foreground_iou", &m.roi_sampling.foreground_iou},
      {"irm.enabled", &m.irm_enabled},
      {"irm.use_deep_features", &m.irm_flags.use_deep_features},
      {"irm.use_mask", &m.irm_flags.use_mask},
      {"irm.use_relation", &m.irm_flags.use_relation},
      {"irm.gamma_init", &m.irm_gamma_init},
      {"drm.enabled", &m.drm_enabled},
      {"drm.top_k", &m.drm.top_k},
      {"drm.embed_dim", &m.drm.embed_dim},
      {"drm.geometry_dim", &m.drm.geometry_dim},
      {"nms.iou_thresh", &m.nms_iou},
      {"test.score_thresh", &m.score_thresh},
      {"test.candidates_per_class", &m.candidates_per_class},
      {"test.detections_per_image", &m.detections_per_image},
      {"test.output_score_thresh", &m.output_score_thresh},
      {"test.mask_thresh", &m.mask_thresh},
      {"loss.alpha", &t.alpha},
      {"loss.beta", &t.beta},
      {"train.batch_size", &t.batch_size},
      {"train.total_iters", &t.total_iters},
      {"train.checkpoint_every", &t.checkpoint_every},
      {"train.base_lr", &t.schedule.base_lr},
      {"train.bias_lr_factor", &t.schedule.bias_lr_factor},
      {"train.weight_decay", &t.schedule.weight_decay},
      {"train.momentum", &t.schedule.momentum},
      {"train.warmup_iters", &t.schedule.warmup_iters},
      {"train.warmup_factor", &t.schedule.warmup_factor},
      {"train.clip_norm", &t.clip_norm},
      {"train.baseline_path", &t.baseline_path},
      {"train.calibration_images", &t.calibration_images},
      {"synth.image_size", &s.image_size},
      {"synth.n_clumps", &s.n_clumps},
      {"synth.cells_per_clump_min", &s.cells_per_clump_min},
      {"synth.cells_per_clump_max", &s.cells_per_clump_max},
      {"synth.cell_radius_min", &s.cell_radius_min},
      {"synth.cell_radius_max", &s.cell_radius_max},
      {"synth.nucleus_ratio", &s.nucleus_ratio},
      {"synth.overlap_target", &s.overlap_target},
      {"synth.n_distractors", &s.n_distractors},
  };
}

Ref find_ref(RunConfig& c, const std::string& key) {
  for (auto& [name, ref] : bind(c)) {
    if (name == key) return ref;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

void assign_json(Ref ref, const std::string& key, const nlohmann::json& v) {
  auto bad = [&](const char* want) { return ConfigError("config key '" + key + "' expects " + want); };
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) throw bad("a boolean");
          *p = v.get<bool>();
        } else if constexpr (std::is_same_v<T, double>) {
          if (!v.is_number()) throw bad("a number");
          *p = v.get<double>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          if (!v.is_number_unsigned()) throw bad("a non-negative integer");
          *p = v.get<std::uint64_t>();
        } else {
          if (!v.is_number_integer()) throw bad("an integer");
          *p = v.get<int>();
        }
      },
      ref);
}

}  // namespace

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + key + "' " + what);
  };
  need(model.channels > 0, "model.channels", "must be positive");
  need(model.drm.top_k >= 1, "drm.top_k", "must be at least 1");
  need(model.drm.embed_dim > 0 && model.drm.embed_dim % 8 == 0, "drm.embed_dim", "must be a positive multiple of 8");
  need(model.drm.geometry_dim > 0 && model.drm.geometry_dim % 8 == 0, "drm.geometry_dim",
       "must be a positive multiple of 8");
  need(!model.irm_enabled || model.irm_flags.use_deep_features || model.irm_flags.use_mask, "irm.use_mask",
       "or irm.use_deep_features must be enabled when irm.enabled is set");
  need(train.batch_size >= 1, "train.batch_size", "must be at least 1");
  need(train.total_iters >= 0, "train.total_iters", "must be non-negative");
  need(train.checkpoint_every >= 0, "train.checkpoint_every", "must be non-negative");
  need(train.calibration_images >= 0, "train.calibration_images", "must be non-negative");
  need(train.schedule.warmup_iters >= 1, "train.warmup_iters", "must be at least 1");
  need(!train.baseline_path || (!model.irm_enabled && !model.drm_enabled), "train.baseline_path",
       "requires irm.enabled=false and drm.enabled=false");
  need(model.roi_sampling.batch_per_image >= 1, "roi.batch_per_image", "must be at least 1");
  need(model.rpn_sampling.batch_per_image >= 1, "rpn.batch_per_image", "must be at least 1");
  synth.validate();
}

std::vector<std::string> config_keys() {
  RunConfig c;
  std::vector<std::string> keys;
  for (auto& [name, ref] : bind(c)) keys.push_back(name);
  return keys;
}

nlohmann::json to_json(const RunConfig& config) {
  RunConfig copy = config;
  nlohmann::json out = nlohmann::json::object();
  for (auto& [name, ref] : bind(copy)) {
    nlohmann::json* node = &out;
    std::size_t start = 0;
    for (std::size_t dot; (dot = name.find('.', start)) != std::string::npos; start = dot + 1) {
      node = &(*node)[name.substr(start, dot - start)];
    }
    std::visit([&](auto* p) { (*node)[name.substr(start)] = *p; }, ref);
  }
  return out;
}

RunConfig apply_json(const nlohmann::json& j, RunConfig base) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  std::map<std::string, nlohmann::json> flat;
  flatten(j, "", flat);
  for (const auto& [key, value] : flat) assign_json(find_ref(base, key), key, value);
  // The RPN NMS threshold and minimum size are shared by both phases.
  base.model.test_proposals.nms_iou = base.model.train_proposals.nms_iou;
  base.model.test_proposals.min_size = base.model.train_proposals.min_size;
  return base;
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  const Ref ref = find_ref(config, key);
  auto bad = [&] { return ConfigError("config key '" + key + "': cannot parse '" + value + "'"); };
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") {
            *p = true;
          } else if (value == "false" || value == "0") {
            *p = false;
          } else {
            throw bad();
          }
        } else if constexpr (std::is_same_v<T, double>) {
          try {
            std::size_t used = 0;
            const double v = std::stod(value, &used);
            if (used != value.size()) throw bad();
            *p = v;
          } catch (const std::logic_error&) {
            throw bad();
          }
        } else {
          T v{};
          const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
          if (ec != std::errc() || ptr != value.data() + value.size()) throw bad();
          *p = v;
        }
      },
      ref);
  config.model.test_proposals.nms_iou = config.model.train_proposals.nms_iou;
  config.model.test_proposals.min_size = config.model.train_proposals.min_size;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  set_value(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  return apply_json(j, std::move(base));
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace relseg
