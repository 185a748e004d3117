// Command-line front end.
//   cftamer run <config> [--out DIR] [--workers N]
//   cftamer stats <dir>... [--compare a,b]... [--out DIR]
//   cftamer serve <config> --port N [--host ADDR]
//   cftamer calibrate <env>
// Exit codes: 0 success, 1 usage or schema error, 2 cell failure, 3 I/O failure.

#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cftamer/experiment.hpp"
#include "cftamer/server.hpp"
#include "cftamer/version.hpp"

namespace {

using namespace cftamer;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCellFailure = 2;
constexpr int kExitIo = 3;

std::pair<Variant, Variant> parse_comparison(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("--compare expects 'a,b', got '" + s + "'");
  return {parse_variant(s.substr(0, comma)), parse_variant(s.substr(comma + 1))};
}

int cmd_run(const std::string& config_path, const std::string& out, int workers) {
  ExperimentConfig cfg = load_config(config_path);
  if (!out.empty()) cfg.output_dir = out;
  if (workers >= 0) cfg.workers = workers;
  std::cerr << "config " << config_hash(cfg) << ": " << to_string(cfg.env) << ", " << cfg.variants.size()
            << " variants x " << cfg.seeds.size() << " seeds\n";
  const auto result = run_experiment(cfg);
  write_experiment(cfg, result);
  int failed = 0;
  for (const auto& c : result.cells)
    if (!c.ok()) {
      ++failed;
      std::cerr << "cell " << to_string(c.spec.variant) << "/" << c.spec.seed << " failed: " << c.log.error << "\n";
    }
  std::cerr << "wrote " << (cfg.output_dir / "runs.csv").string() << "\n";
  return failed ? kExitCellFailure : kExitOk;
}

int cmd_stats(const std::vector<std::string>& dirs, const std::vector<std::string>& compare, const std::string& out,
              int resamples, std::uint64_t seed) {
  AggregateOptions opt;
  opt.n_resamples = resamples;
  opt.seed = seed;
  for (const auto& c : compare) opt.comparisons.push_back(parse_comparison(c));
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  const fs::path out_dir = out.empty() ? paths.front() : fs::path(out);
  const auto rep = run_stats(paths, out_dir, opt);
  for (const auto& g : rep.gaps)
    std::cout << g.env << " " << g.variant << " gap " << g.stat.point << " [" << g.stat.ci_low << ", "
              << g.stat.ci_high << "] n=" << g.stat.n_runs << "\n";
  return kExitOk;
}

int cmd_serve(const std::string& config_path, const std::string& host, int port, int threads) {
  ExperimentConfig cfg = load_config(config_path);
  if (port < 0 || port > 65535) throw std::invalid_argument("--port must lie in [0, 65535]");
  ServerConfig sc{cfg, calibrate(cfg), threads};

  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  SessionServer server(std::move(sc));
  const auto bound = server.start(host, static_cast<unsigned short>(port));
  std::cerr << "serving on " << host << ":" << bound << " (data dir " << cfg.data_dir.string() << ")\n";
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "shutting down\n";
  server.stop();
  return kExitOk;
}

int cmd_calibrate(const std::string& env) {
  ExperimentConfig cfg = ExperimentConfig::defaults_for(parse_env_id(env));
  const Norms n = calibrate(cfg);
  const json out = {{"env", env},
                    {"random", n.random},
                    {"expert", n.expert},
                    {"eval_seeds", cfg.eval_seeds},
                    {"random_passes", cfg.random_passes}};
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual TAMER experiments and interactive sessions"};
  app.set_version_flag("--version", std::string(cftamer::kVersion));
  app.require_subcommand(1);

  std::string config_path, out, host = "127.0.0.1", env;
  std::vector<std::string> dirs, compare;
  int workers = -1, port = -1, threads = 0, resamples = 2000;
  std::uint64_t boot_seed = cftamer::AggregateOptions{}.seed;

  auto* run = app.add_subcommand("run", "Run every (variant, seed) cell of a config");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--out", out, "Output directory (overrides output.dir)");
  run->add_option("--workers", workers, "Worker threads (0 = hardware concurrency)");

  auto* stats = app.add_subcommand("stats", "Aggregate result directories");
  stats->add_option("dirs", dirs, "Directories containing runs.csv")->required();
  stats->add_option("--compare", compare, "Variant pair a,b for probability of improvement (repeatable)");
  stats->add_option("--out", out, "Output directory (default: first input directory)");
  stats->add_option("--resamples", resamples, "Bootstrap resamples")->check(CLI::PositiveNumber);
  stats->add_option("--seed", boot_seed, "Bootstrap seed");

  auto* serve = app.add_subcommand("serve", "Host interactive training sessions");
  serve->add_option("config", config_path, "Config file")->required();
  serve->add_option("--port", port, "TCP port")->required();
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--threads", threads, "I/O threads (0 = hardware concurrency)");

  auto* cal = app.add_subcommand("calibrate", "Print normalization constants for an environment");
  cal->add_option("env", env, "gridworld, cartpole or mountaincar")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(config_path, out, workers);
    if (*stats) return cmd_stats(dirs, compare, out, resamples, boot_seed);
    if (*serve) return cmd_serve(config_path, host, port, threads);
    if (*cal) return cmd_calibrate(env);
  } catch (const cftamer::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const cftamer::csv::SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const cftamer::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
