#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "relseg/ablation.hpp"
#include "relseg/config.hpp"
#include "relseg/dataset.hpp"
#include "relseg/error.hpp"
#include "relseg/render.hpp"
#include "relseg/synth.hpp"
#include "test_util.hpp"

using namespace relseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("relseg_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code = -1;
  std::string err;
};

// Runs the command-line tool with stdout discarded and stderr captured.
CliResult cli(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" RELSEG_CLI_PATH "\" " + args + " >/dev/null 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err);
  return r;
}

int count_lines(const std::string& s) { return int(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

// ---- config ---------------------------------------------------------------------

TEST_CASE("unknown config keys are rejected by name") {
  CHECK_THROWS_WITH_AS(apply_json(nlohmann::json::parse(R"({"irm": {"use_mask": true, "bogus": 1}})")),
                       doctest::Contains("irm.bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(apply_json(nlohmann::json::parse(R"({"train.nope": 1})")), doctest::Contains("train.nope"),
                       ConfigError);
  RunConfig c;
  CHECK_THROWS_WITH_AS(apply_override(c, "drm.topk=3"), doctest::Contains("drm.topk"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "drm.top_k"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "drm.top_k=abc"), ConfigError);
  CHECK_THROWS_AS(apply_json(nlohmann::json::parse(R"({"irm.enabled": 3})")), ConfigError);
}

TEST_CASE("overrides and nested or dotted json set the same fields") {
  RunConfig a, b;
  apply_override(a, "drm.top_k=12");
  apply_override(a, "irm.use_relation=false");
  apply_override(a, "loss.alpha=0.25");
  b = apply_json(nlohmann::json::parse(R"({"drm": {"top_k": 12}, "irm.use_relation": false, "loss": {"alpha": 0.25}})"));
  CHECK(a.model.drm.top_k == 12);
  CHECK_FALSE(a.model.irm_flags.use_relation);
  CHECK(a.train.alpha == 0.25);
  CHECK(to_json(a) == to_json(b));
}

TEST_CASE("config snapshots materialise every key and round trip") {
  RunConfig c;
  c.seed = 77;
  c.model.channels = 24;
  c.train.schedule.base_lr = 0.001;
  c.synth.overlap_target = 0.25;
  const auto j = to_json(c);
  for (const auto& key : config_keys()) {
    const nlohmann::json* node = &j;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) {
      REQUIRE_MESSAGE(node->contains(part), key);
      node = &(*node)[part];
    }
  }
  const fs::path dir = scratch("config");
  save_config(c, dir / "c.json");
  CHECK(to_json(load_config(dir / "c.json")) == j);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("validation names the offending key") {
  RunConfig c;
  c.model.drm.top_k = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("drm.top_k"), ConfigError);
  c = {};
  c.train.batch_size = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("train.batch_size"), ConfigError);
  c = {};
  c.model.irm_flags = {false, false, true};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(RunConfig{}.validate());
}

// ---- ablation ---------------------------------------------------------------------

TEST_CASE("ablation grid parsing and deduplication") {
  const auto g = ablation::parse_grid("# DF MSK RL\n1 1 1\n\n0 1 1  # trailing\n1 1 1\n");
  CHECK(g.size() == 3);
  std::ostringstream warn;
  const auto d = ablation::deduplicate(g, warn);
  CHECK(d.size() == 2);
  CHECK(count_lines(warn.str()) == 1);
  CHECK(warn.str().find("warning") != std::string::npos);
  CHECK_THROWS_AS(ablation::parse_grid("1 1\n"), ConfigError);
  CHECK_THROWS_AS(ablation::parse_grid("1 2 0\n"), ConfigError);
  const auto def = ablation::default_grid();
  CHECK(def.size() == 5);
  CHECK(def[0] == ablation::GridPoint{});
  CHECK_FALSE(ablation::configure(RunConfig{}, def[0]).model.irm_enabled);
  const auto full = ablation::configure(RunConfig{}, def[4]);
  CHECK(full.model.irm_enabled);
  CHECK(full.model.irm_flags.use_relation);
}

TEST_CASE("ablation csv layout") {
  CHECK(ablation::csv_header() == "DF,MSK,RL,aji_cyto,aji_nuclei,f1_cyto,f1_nuclei,status");
  ablation::Row r{{true, false, true}, 0.5, 0.25, 1.0, 0.0, "ok"};
  CHECK(ablation::csv_row(r) == "1,0,1,0.500000,0.250000,1.000000,0.000000,ok");
  r.status = "error: a, b";
  CHECK(ablation::csv_row(r).ends_with(",\"error: a, b\""));
}

TEST_CASE("ablation run records failures and continues") {
  RunConfig c;
  c.seed = 1;
  c.model.channels = 8;
  c.model.drm.embed_dim = 16;
  c.model.drm.geometry_dim = 8;
  c.train.total_iters = 1;
  c.train.checkpoint_every = 0;
  c.train.baseline_path = true;  // invalid once the relation module is on
  c.model.drm_enabled = false;
  c.synth.image_size = 64;
  c.synth.n_clumps = 1;
  c.synth.cell_radius_min = 8;
  c.synth.cell_radius_max = 12;
  const auto data = synth::generate_dataset(c.synth, 2, 3);
  const fs::path dir = scratch("ablate");
  std::ostringstream log;
  const auto rows = ablation::run(c, data, data, {{false, false, false}, {true, true, true}}, dir, log);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].status == "ok");
  CHECK(rows[1].status.starts_with("error"));
  const std::string csv = slurp(dir / "results.csv");
  CHECK(count_lines(csv) == 3);
  fs::remove_all(dir);
}

// ---- render -----------------------------------------------------------------------

TEST_CASE("contour of a rectangle is its one-pixel ring") {
  const Mask m = testutil::rect_mask(12, 12, 2, 3, 9, 8);
  const Mask c = render::contour(m);
  CHECK(c.area() == 2 * 7 + 2 * 5 - 4);
  CHECK(is_subset(c, m));
  CHECK(render::contour(Mask(4, 4)).empty());
  CHECK(render::contour(testutil::rect_mask(4, 4, 0, 0, 4, 4)).area() == 12);
}

TEST_CASE("overlay of zero detections is the input plus a caption") {
  Image im(32, 40);
  for (std::size_t i = 0; i < im.rgb.size(); ++i) im.rgb[i] = std::uint8_t(i % 200);
  const Image out = render::overlay(im, {});
  REQUIRE(out.height == 32 + render::kCaptionHeight);
  CHECK(std::equal(im.rgb.begin(), im.rgb.end(), out.rgb.begin()));
  Image caption(render::kCaptionHeight, 40);
  render::draw_text(caption, 2, 2, "0 instances", {255, 255, 255});
  CHECK(std::equal(caption.rgb.begin(), caption.rgb.end(), out.rgb.begin() + im.rgb.size()));
  CHECK(std::any_of(caption.rgb.begin(), caption.rgb.end(), [](auto v) { return v != 0; }));
}

TEST_CASE("overlay draws one closed contour per detection in its colour") {
  Image im(64, 64);
  std::vector<Instance> inst;
  for (int k = 0; k < 3; ++k) {
    Mask m = testutil::rect_mask(64, 64, 4 + 20 * k, 40, 14 + 20 * k, 56);
    const Box b = *m.tight_box();
    inst.push_back({CellClass::kCytoplasm, std::move(m), b, 0.9});
  }
  const Image out = render::overlay(im, inst);
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const auto color = render::instance_color(i);
    const Mask ring = render::contour(inst[i].mask);
    std::size_t hit = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (ring.at(y, x)) {
          bool same = true;
          for (int c = 0; c < 3; ++c) same &= out.rgb[(y * 64 + x) * 3 + c] == color[c];
          hit += same;
        }
    CHECK(hit == ring.area());
  }
  CHECK(render::instance_color(0) != render::instance_color(1));
  CHECK(render::overlay(im, inst) == out);
}

// ---- command-line tool ----------------------------------------------------------------

TEST_CASE("cli exit codes and single-line diagnostics") {
  const fs::path dir = scratch("cli");
  auto r = cli("", dir);
  CHECK(r.code == 1);
  r = cli("frobnicate", dir);
  CHECK(r.code == 1);
  r = cli("eval --pred " + (dir / "nope").string() + " --gt " + (dir / "nope").string() + " --out " +
              (dir / "r.json").string(),
          dir);
  CHECK(r.code == 2);
  CHECK(count_lines(r.err) == 1);
  CHECK(r.err.starts_with("relseg: error:"));
  r = cli("generate --out " + (dir / "d").string() + " --count 1 --set synth.bogus=1", dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("synth.bogus") != std::string::npos);
  r = cli("visualize --checkpoint " + (dir / "none.ckpt").string() + " --data " + dir.string() + " --out " +
              (dir / "v").string(),
          dir);
  CHECK(r.code == 2);
  CHECK(count_lines(r.err) == 1);
  fs::remove_all(dir);
}

TEST_CASE("cli generate, eval and visualize are deterministic") {
  const fs::path dir = scratch("cli_flow");
  const std::string size = " --set synth.image_size=64 --set synth.cell_radius_min=8 --set synth.cell_radius_max=12";
  REQUIRE(cli("generate --out " + (dir / "a").string() + " --count 2 --seed 4" + size, dir).code == 0);
  REQUIRE(cli("generate --out " + (dir / "b").string() + " --count 2" + size, dir, "RELSEG_SEED=4").code == 0);
  REQUIRE(cli("generate --out " + (dir / "c").string() + " --count 2" + size, dir, "RELSEG_SEED=5").code == 0);
  CHECK(slurp(dir / "a" / "annotations.jsonl") == slurp(dir / "b" / "annotations.jsonl"));
  CHECK(slurp(dir / "a" / "annotations.jsonl") != slurp(dir / "c" / "annotations.jsonl"));
  CHECK(fs::exists(dir / "a" / "config.json"));

  REQUIRE(cli("eval --pred " + (dir / "a").string() + " --gt " + (dir / "a").string() + " --out " +
                  (dir / "r.json").string(),
              dir)
              .code == 0);
  const auto rep = nlohmann::json::parse(slurp(dir / "r.json"));
  CHECK(rep["aggregate"]["aji"] == 1.0);
  CHECK(rep["aggregate"]["f1"] == 1.0);

  for (const char* out : {"v1", "v2"}) {
    REQUIRE(cli(std::string("visualize --pred ") + (dir / "a").string() + " --data " + (dir / "a").string() +
                    " --out " + (dir / out).string(),
                dir)
                .code == 0);
  }
  CHECK(slurp(dir / "v1" / "000000.png") == slurp(dir / "v2" / "000000.png"));
  CHECK(dataset::read_png(dir / "v1" / "000001.png").height == 64 + render::kCaptionHeight);
  fs::remove_all(dir);
}

TEST_CASE("cli config snapshot replays a training run byte for byte") {
  const fs::path dir = scratch("cli_replay");
  const std::string small = " --set synth.image_size=64 --set synth.cell_radius_min=8 --set synth.cell_radius_max=12";
  REQUIRE(cli("generate --out " + (dir / "d").string() + " --count 3 --seed 2" + small, dir).code == 0);
  const std::string model =
      " --set model.channels=8 --set drm.embed_dim=16 --set drm.geometry_dim=8 --set train.total_iters=2"
      " --set train.checkpoint_every=0 --set train.calibration_images=2 --set rpn.post_nms_topk_train=32";
  REQUIRE(cli("train --data " + (dir / "d").string() + " --out " + (dir / "r1").string() + " --seed 6" + model, dir)
              .code == 0);
  REQUIRE(cli("train --data " + (dir / "d").string() + " --out " + (dir / "r2").string() + " --config " +
                  (dir / "r1" / "config.json").string(),
              dir)
              .code == 0);
  CHECK(slurp(dir / "r1" / "config.json") == slurp(dir / "r2" / "config.json"));
  CHECK(slurp(dir / "r1" / "model_final.ckpt") == slurp(dir / "r2" / "model_final.ckpt"));
  REQUIRE(cli("predict --checkpoint " + (dir / "r1" / "model_final.ckpt").string() + " --data " + (dir / "d").string() +
                  " --out " + (dir / "p").string(),
              dir)
              .code == 0);
  CHECK(dataset::read_annotations(dir / "p").size() == 3);
  fs::remove_all(dir);
}
