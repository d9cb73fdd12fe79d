#include "relseg/ablation.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "relseg/dataset.hpp"
#include "relseg/error.hpp"
#include "relseg/training/trainer.hpp"

namespace relseg::ablation {

namespace fs = std::filesystem;

namespace {

std::string name_of(const GridPoint& p) {
  return std::string("df") + (p.df ? "1" : "0") + "_msk" + (p.msk ? "1" : "0") + "_rl" + (p.rl ? "1" : "0");
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

std::vector<GridPoint> default_grid() {
  return {{false, false, false}, {true, true, false}, {true, false, true}, {false, true, true}, {true, true, true}};
}

std::vector<GridPoint> parse_grid(const std::string& text) {
  std::vector<GridPoint> grid;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = line.substr(0, line.find('#'));
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    auto flag = [&](const std::string& t) {
      if (t == "1") return true;
      if (t == "0") return false;
      throw ConfigError("grid line " + std::to_string(lineno) + ": expected 0 or 1, got '" + t + "'");
    };
    if (tok.size() != 3) throw ConfigError("grid line " + std::to_string(lineno) + ": expected DF MSK RL");
    grid.push_back({flag(tok[0]), flag(tok[1]), flag(tok[2])});
  }
  return grid;
}

std::vector<GridPoint> deduplicate(const std::vector<GridPoint>& grid, std::ostream& warnings) {
  std::vector<GridPoint> out;
  for (const auto& p : grid) {
    if (std::find(out.begin(), out.end(), p) != out.end()) {
      warnings << "warning: duplicate grid point " << name_of(p) << " ignored\n";
    } else {
      out.push_back(p);
    }
  }
  return out;
}

RunConfig configure(const RunConfig& base, const GridPoint& p) {
  RunConfig c = base;
  c.model.irm_enabled = p.df || p.msk || p.rl;
  c.model.irm_flags = {p.df, p.msk, p.rl};
  return c;
}

std::string csv_header() { return "DF,MSK,RL,aji_cyto,aji_nuclei,f1_cyto,f1_nuclei,status"; }

std::string csv_row(const Row& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.6f,%.6f,%.6f,%.6f,", r.point.df, r.point.msk, r.point.rl, r.aji_cyto,
                r.aji_nuclei, r.f1_cyto, r.f1_nuclei);
  return buf + csv_escape(r.status);
}

std::vector<Row> run(const RunConfig& base, const std::vector<SampleRecord>& train_set,
                     const std::vector<SampleRecord>& test_set, const std::vector<GridPoint>& grid,
                     const fs::path& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  std::vector<Row> rows;
  for (const auto& point : grid) {
    Row row{point};
    const fs::path dir = out_dir / name_of(point);
    try {
      const RunConfig config = configure(base, point);
      log << "ablate: " << name_of(point) << '\n';
      auto result = training::train(config, train_set, {dir, {}});
      const auto preds = training::predict_dataset(*result.model, test_set);
      dataset::write_dataset(preds, dir / "predictions", true);
      const metrics::EvalReport report = metrics::evaluate(test_set, preds);
      std::ofstream(dir / "report.json") << metrics::to_json(report, false).dump(2) << '\n';
      row.aji_cyto = report.per_class.at("cytoplasm").aji;
      row.aji_nuclei = report.per_class.at("nucleus").aji;
      row.f1_cyto = report.per_class.at("cytoplasm").f1;
      row.f1_nuclei = report.per_class.at("nucleus").f1;
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
      log << "ablate: " << name_of(point) << " failed: " << e.what() << '\n';
    }
    rows.push_back(row);
  }
  std::ofstream csv(out_dir / "results.csv");
  csv << csv_header() << '\n';
  for (const auto& r : rows) csv << csv_row(r) << '\n';
  return rows;
}

}  // namespace relseg::ablation
