#pragma once

// Seed x variant experiment grids: runs every cell on a bounded worker pool,
// writes runs.csv / norms.json / manifest.json, and turns result directories
// into curves.csv / gaps.csv / poi.csv.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "cftamer/config.hpp"
#include "cftamer/csv.hpp"
#include "cftamer/evaluation.hpp"
#include "cftamer/oracle.hpp"
#include "cftamer/serialize.hpp"
#include "cftamer/trainer.hpp"
#include "cftamer/version.hpp"

namespace cftamer {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CellSpec {
  Variant variant = Variant::vanilla;
  std::uint64_t seed = 0;
};

struct CellResult {
  CellSpec spec;
  TrainingLog log;
  bool ok() const { return !log.aborted; }
};

inline TrainerConfig cell_trainer_config(const ExperimentConfig& cfg, Variant v, std::uint64_t seed) {
  TrainerConfig t = cfg.trainer;
  t.variant = v;
  t.seed = seed;
  return t;
}

inline Norms calibrate(const ExperimentConfig& cfg, const ExpertPolicy& expert = {}) {
  return calibrate_norms(cfg.env, expert, cfg.random_passes, cfg.eval_seeds, cfg.grid);
}

// One training run against the synthetic oracle. The state bank, the oracle
// and the learner all derive their streams from the cell seed.
inline CellResult run_cell(const ExperimentConfig& cfg, const Norms& norms, const CellSpec& cell) {
  CellResult out{cell, {}};
  try {
    const ExpertPolicy expert;
    const StateBank bank = build_state_bank(cfg.env, expert, cfg.bank_episodes, cell.seed, cfg.grid);
    Oracle oracle({cfg.feedback_frequency, cfg.feedback_quality, cell.variant, cell.seed}, bank, expert);
    const EnvId env = cfg.env;
    const GridConfig grid = cfg.grid;
    auto result = run_training<Environment>(
        cell_trainer_config(cfg, cell.variant, cell.seed),
        [env, grid](std::uint64_t s) { return Environment::reset(env, s, grid); }, oracle,
        [&](const HModel& m) { return evaluate_model(m, env, cfg.eval_seeds, norms, grid); });
    out.log = std::move(result.log);
  } catch (const std::exception& e) {
    out.log.aborted = true;
    out.log.error = e.what();
  }
  return out;
}

inline std::vector<CellSpec> expand_cells(const ExperimentConfig& cfg) {
  std::vector<CellSpec> cells;
  for (Variant v : cfg.variants)
    for (std::uint64_t s : cfg.seeds) cells.push_back({v, s});
  return cells;
}

// Results come back in `cells` order whatever the scheduling.
inline std::vector<CellResult> run_cells(const ExperimentConfig& cfg, const Norms& norms,
                                         const std::vector<CellSpec>& cells, int workers = 0) {
  std::vector<CellResult> results(cells.size());
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(std::max<std::size_t>(cells.size(), 1)));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) results[i] = run_cell(cfg, norms, cells[i]);
  };
  if (workers == 1) {
    work();
    return results;
  }
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  pool.clear();
  return results;
}

struct ExperimentResult {
  Norms norms;
  std::vector<CellResult> cells;
  bool all_ok() const {
    for (const auto& c : cells)
      if (!c.ok()) return false;
    return true;
  }
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult r;
  r.norms = calibrate(cfg);
  r.cells = run_cells(cfg, r.norms, expand_cells(cfg), cfg.workers);
  return r;
}

inline std::vector<ResultRow> result_rows(EnvId env, const std::vector<CellResult>& cells) {
  std::vector<ResultRow> rows;
  for (const auto& c : cells) {
    if (!c.ok()) continue;
    for (const auto& cp : c.log.checkpoints)
      rows.push_back({env, c.spec.variant, c.spec.seed, cp.env_steps, cp.score, cp.feedback_count, cp.cf_count});
  }
  return rows;
}

inline const csv::Record kRunsHeader{"env", "variant", "seed", "env_steps", "normalized_score", "feedback_count",
                                     "cf_count"};
inline const csv::Record kCurvesHeader{"env", "variant", "env_steps", "iqm", "ci_low", "ci_high", "n"};
inline const csv::Record kGapsHeader{"env", "variant", "iqm_gap", "ci_low", "ci_high", "n"};
inline const csv::Record kPoiHeader{"env", "variant_x", "variant_y", "poi", "ci_low", "ci_high"};

inline std::string runs_csv_text(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  csv::write_record(os, kRunsHeader);
  for (const auto& r : rows)
    csv::write_record(os, {std::string(to_string(r.env)), std::string(to_string(r.variant)), std::to_string(r.seed),
                           std::to_string(r.env_steps), csv::format_double(r.normalized_score),
                           std::to_string(r.feedback_count), std::to_string(r.cf_count)});
  return os.str();
}

inline std::vector<ResultRow> parse_runs_csv(std::istream& is) {
  const auto records = csv::read_all(is);
  csv::expect_header(records, kRunsHeader);
  std::vector<ResultRow> rows;
  std::map<std::tuple<int, int, std::uint64_t>, ResultRow> last;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    const std::size_t row = i + 1;
    if (rec.size() != kRunsHeader.size())
      throw csv::SchemaError(row, std::min(rec.size(), kRunsHeader.size()) + 1,
                             "expected " + std::to_string(kRunsHeader.size()) + " fields, got " +
                                 std::to_string(rec.size()));
    ResultRow r;
    try {
      r.env = parse_env_id(rec[0]);
    } catch (const std::invalid_argument& e) {
      throw csv::SchemaError(row, 1, e.what());
    }
    try {
      r.variant = parse_variant(rec[1]);
    } catch (const std::invalid_argument& e) {
      throw csv::SchemaError(row, 2, e.what());
    }
    r.seed = csv::parse_uint(rec[2], row, 3);
    r.env_steps = static_cast<int>(csv::parse_int(rec[3], row, 4));
    r.normalized_score = csv::parse_double(rec[4], row, 5);
    r.feedback_count = static_cast<int>(csv::parse_int(rec[5], row, 6));
    r.cf_count = static_cast<int>(csv::parse_int(rec[6], row, 7));
    if (r.env_steps < 0) throw csv::SchemaError(row, 4, "negative env_steps");
    if (r.feedback_count < 0) throw csv::SchemaError(row, 6, "negative count");
    if (r.cf_count < 0 || r.cf_count > r.feedback_count)
      throw csv::SchemaError(row, 7, "cf_count must lie in [0, feedback_count]");
    const auto key = std::make_tuple(static_cast<int>(r.env), static_cast<int>(r.variant), r.seed);
    if (auto it = last.find(key); it != last.end()) {
      if (r.env_steps <= it->second.env_steps) throw csv::SchemaError(row, 4, "env_steps not increasing within run");
      if (r.feedback_count < it->second.feedback_count) throw csv::SchemaError(row, 6, "count decreased within run");
      if (r.cf_count < it->second.cf_count) throw csv::SchemaError(row, 7, "count decreased within run");
    }
    last[key] = r;
    rows.push_back(r);
  }
  return rows;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + p.string());
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

inline json config_to_json(const ExperimentConfig& cfg) {
  json j = json::object();
  std::istringstream is(canonical_text(cfg));
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

// Writes runs.csv, norms.json and manifest.json into the configured output
// directory. The manifest lists every cell and a content digest of each file.
inline void write_experiment(const ExperimentConfig& cfg, const ExperimentResult& r) {
  ensure_dir(cfg.output_dir);
  const std::string hash = config_hash(cfg);
  const std::string runs = runs_csv_text(result_rows(cfg.env, r.cells));
  json eval_seeds = cfg.eval_seeds;
  const std::string norms = json{{"schema_version", kSchemaVersion},
                                 {"config_hash", hash},
                                 {"env", std::string(to_string(cfg.env))},
                                 {"random", r.norms.random},
                                 {"expert", r.norms.expert},
                                 {"eval_seeds", eval_seeds},
                                 {"random_passes", cfg.random_passes}}
                                .dump(2) +
                            "\n";
  json cells = json::array();
  for (const auto& c : r.cells) {
    json e = {{"variant", std::string(to_string(c.spec.variant))},
              {"seed", c.spec.seed},
              {"status", c.ok() ? "ok" : "failed"},
              {"total_steps", c.log.total_steps},
              {"episodes_completed", c.log.episodes_completed}};
    if (!c.ok()) e["error"] = c.log.error;
    cells.push_back(std::move(e));
  }
  const json manifest = {{"schema_version", kSchemaVersion},
                         {"version", kVersion},
                         {"config_hash", hash},
                         {"config", config_to_json(cfg)},
                         {"cells", std::move(cells)},
                         {"failed_cells", std::count_if(r.cells.begin(), r.cells.end(),
                                                        [](const CellResult& c) { return !c.ok(); })},
                         {"files",
                          {{"runs.csv", hex64(fnv1a64(runs))}, {"norms.json", hex64(fnv1a64(norms))}}}};
  write_file(cfg.output_dir / "runs.csv", runs);
  write_file(cfg.output_dir / "norms.json", norms);
  write_file(cfg.output_dir / "manifest.json", manifest.dump(2) + "\n");
}

inline std::vector<ResultRow> load_runs(const fs::path& dir) {
  std::istringstream is(read_file(dir / "runs.csv"));
  return parse_runs_csv(is);
}

inline std::string curves_csv_text(const Report& rep) {
  std::ostringstream os;
  csv::write_record(os, kCurvesHeader);
  for (const auto& c : rep.curves)
    csv::write_record(os, {c.env, c.variant, std::to_string(c.env_steps), csv::format_double(c.stat.point),
                           csv::format_double(c.stat.ci_low), csv::format_double(c.stat.ci_high),
                           std::to_string(c.stat.n_runs)});
  return os.str();
}

inline std::string gaps_csv_text(const Report& rep) {
  std::ostringstream os;
  csv::write_record(os, kGapsHeader);
  for (const auto& g : rep.gaps)
    csv::write_record(os, {g.env, g.variant, csv::format_double(g.stat.point), csv::format_double(g.stat.ci_low),
                           csv::format_double(g.stat.ci_high), std::to_string(g.stat.n_runs)});
  return os.str();
}

inline std::string poi_csv_text(const Report& rep) {
  std::ostringstream os;
  csv::write_record(os, kPoiHeader);
  for (const auto& p : rep.poi)
    csv::write_record(os, {p.env, p.variant_x, p.variant_y, csv::format_double(p.stat.poi),
                           csv::format_double(p.stat.ci_low), csv::format_double(p.stat.ci_high)});
  return os.str();
}

// Aggregates one or more result directories into `out_dir`. Directories are
// merged; mismatched checkpoint grids or duplicated runs are rejected.
inline Report run_stats(const std::vector<fs::path>& dirs, const fs::path& out_dir,
                        const AggregateOptions& opt = {}) {
  if (dirs.empty()) throw std::invalid_argument("stats: no result directories");
  std::vector<ResultRow> rows;
  json sources = json::array();
  for (const auto& d : dirs) {
    auto part = load_runs(d);
    rows.insert(rows.end(), part.begin(), part.end());
    json src = {{"dir", d.string()}, {"config_hash", nullptr}};
    if (fs::exists(d / "manifest.json")) {
      try {
        src["config_hash"] = json::parse(read_file(d / "manifest.json")).at("config_hash");
      } catch (const json::exception& e) {
        throw csv::SchemaError(0, 0, "manifest.json in " + d.string() + ": " + e.what());
      }
    }
    sources.push_back(std::move(src));
  }
  if (rows.empty()) throw std::invalid_argument("stats: no result rows");
  const Report rep = aggregate(group_runs(rows), opt);

  ensure_dir(out_dir);
  const std::string curves = curves_csv_text(rep);
  const std::string gaps = gaps_csv_text(rep);
  const std::string poi = poi_csv_text(rep);
  write_file(out_dir / "curves.csv", curves);
  write_file(out_dir / "gaps.csv", gaps);
  write_file(out_dir / "poi.csv", poi);
  const json meta = {{"schema_version", kSchemaVersion},
                     {"version", kVersion},
                     {"sources", std::move(sources)},
                     {"n_resamples", opt.n_resamples},
                     {"level", opt.level},
                     {"bootstrap_seed", opt.seed},
                     {"files",
                      {{"curves.csv", hex64(fnv1a64(curves))},
                       {"gaps.csv", hex64(fnv1a64(gaps))},
                       {"poi.csv", hex64(fnv1a64(poi))}}}};
  write_file(out_dir / "stats.json", meta.dump(2) + "\n");
  return rep;
}

}  // namespace cftamer
