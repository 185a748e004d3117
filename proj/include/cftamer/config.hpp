#pragma once

// Experiment configuration as a flat text file of dotted `key = value` lines.
// Blank lines and lines starting with '#' are ignored. Environment-dependent
// defaults are applied before the file's values.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cftamer/env.hpp"
#include "cftamer/evaluation.hpp"
#include "cftamer/feedback.hpp"
#include "cftamer/trainer.hpp"

namespace cftamer {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  EnvId env = EnvId::gridworld;
  std::vector<Variant> variants{Variant::vanilla, Variant::cfa};
  std::vector<std::uint64_t> seeds{0};
  double feedback_frequency = 1.0;
  double feedback_quality = 1.0;
  int bank_episodes = 200;
  TrainerConfig trainer;  // variant and seed are filled per cell
  GridConfig grid;
  std::vector<std::uint64_t> eval_seeds = default_eval_seeds();
  int random_passes = kDefaultRandomPasses;
  std::filesystem::path output_dir = "results";
  int workers = 0;  // 0 = hardware concurrency
  std::filesystem::path data_dir = "sessions";
  int feedback_timeout_ms = 10000;

  static ExperimentConfig defaults_for(EnvId env);
  void validate() const;
};

inline ExperimentConfig ExperimentConfig::defaults_for(EnvId env) {
  ExperimentConfig c;
  c.env = env;
  c.trainer.episodes = 300;
  c.trainer.max_steps = max_episode_steps(env, c.grid);
  if (env == EnvId::gridworld) {
    c.trainer.dims.trunk_hidden = {64, 64};
    c.trainer.checkpoint_every = 500;
    c.trainer.horizon = 6000;
  } else {
    c.trainer.dims.trunk_hidden = {32, 32};
    c.trainer.checkpoint_every = 1000;
    c.trainer.horizon = 20000;
  }
  c.trainer.dims.embed_dim = 32;
  return c;
}

inline void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("variants: at least one variant required");
  if (std::set<Variant>(variants.begin(), variants.end()).size() != variants.size())
    throw ConfigError("variants: duplicate entry");
  if (seeds.empty()) throw ConfigError("seeds: at least one seed required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds: seeds must be distinct");
  if (eval_seeds.empty()) throw ConfigError("eval.seeds: at least one evaluation seed required");
  if (!(feedback_frequency >= 0.0 && feedback_frequency <= 1.0))
    throw ConfigError("oracle.feedback_frequency must lie in [0, 1]");
  if (!(feedback_quality >= 0.0 && feedback_quality <= 1.0))
    throw ConfigError("oracle.feedback_quality must lie in [0, 1]");
  if (bank_episodes <= 0) throw ConfigError("oracle.bank_episodes must be positive");
  if (random_passes <= 0) throw ConfigError("eval.random_passes must be positive");
  if (workers < 0) throw ConfigError("run.workers must be >= 0");
  if (feedback_timeout_ms < 0) throw ConfigError("session.feedback_timeout_ms must be >= 0");
  try {
    trainer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument("negative");
    const auto x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

inline int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

// "0-24" or "1,5,9" or a mix ("0-3,10").
inline std::vector<std::uint64_t> to_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(v)) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(to_u64(key, item));
      continue;
    }
    const auto lo = to_u64(key, trim(item.substr(0, dash)));
    const auto hi = to_u64(key, trim(item.substr(dash + 1)));
    if (hi < lo) throw ConfigError(key + ": empty range '" + item + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw ConfigError(key + ": empty seed list");
  return out;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

}  // namespace detail

// Parses config text. Every key is optional; unknown or repeated keys are
// errors.
inline ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }

  EnvId env = EnvId::gridworld;
  if (auto it = kv.find("env"); it != kv.end()) {
    try {
      env = parse_env_id(it->second);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("env: ") + e.what());
    }
  }
  ExperimentConfig c = ExperimentConfig::defaults_for(env);
  bool max_steps_set = false;

  for (const auto& [key, v] : kv) {
    using namespace detail;
    if (key == "env") {
    } else if (key == "variants") {
      c.variants.clear();
      for (const auto& name : split_list(v)) {
        try {
          c.variants.push_back(parse_variant(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(std::string("variants: ") + e.what());
        }
      }
    } else if (key == "seeds") {
      c.seeds = to_seed_list(key, v);
    } else if (key == "oracle.feedback_frequency") {
      c.feedback_frequency = to_double(key, v);
    } else if (key == "oracle.feedback_quality") {
      c.feedback_quality = to_double(key, v);
    } else if (key == "oracle.bank_episodes") {
      c.bank_episodes = to_int(key, v);
    } else if (key == "trainer.episodes") {
      c.trainer.episodes = to_int(key, v);
    } else if (key == "trainer.max_steps") {
      c.trainer.max_steps = to_int(key, v);
      max_steps_set = true;
    } else if (key == "trainer.buffer_capacity") {
      c.trainer.buffer_capacity = static_cast<std::size_t>(to_u64(key, v));
    } else if (key == "trainer.minibatch") {
      c.trainer.minibatch = to_int(key, v);
    } else if (key == "trainer.replay_interval") {
      c.trainer.replay_interval = to_int(key, v);
    } else if (key == "trainer.trunk_hidden") {
      c.trainer.dims.trunk_hidden.clear();
      for (const auto& n : split_list(v)) c.trainer.dims.trunk_hidden.push_back(to_int(key, n));
      for (auto n : c.trainer.dims.trunk_hidden)
        if (n <= 0) throw ConfigError(key + ": layer sizes must be positive");
    } else if (key == "trainer.embed_dim") {
      c.trainer.dims.embed_dim = to_int(key, v);
    } else if (key == "trainer.step_size") {
      c.trainer.adam.step_size = to_double(key, v);
    } else if (key == "eval.checkpoint_every") {
      c.trainer.checkpoint_every = to_int(key, v);
    } else if (key == "eval.horizon") {
      c.trainer.horizon = to_int(key, v);
    } else if (key == "eval.seeds") {
      c.eval_seeds = to_seed_list(key, v);
    } else if (key == "eval.random_passes") {
      c.random_passes = to_int(key, v);
    } else if (key == "grid.width") {
      c.grid.width = to_int(key, v);
    } else if (key == "grid.height") {
      c.grid.height = to_int(key, v);
    } else if (key == "grid.view_size") {
      c.grid.view_size = to_int(key, v);
    } else if (key == "output.dir") {
      c.output_dir = v;
    } else if (key == "run.workers") {
      c.workers = to_int(key, v);
    } else if (key == "session.data_dir") {
      c.data_dir = v;
    } else if (key == "session.feedback_timeout_ms") {
      c.feedback_timeout_ms = to_int(key, v);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  if (!max_steps_set) c.trainer.max_steps = max_episode_steps(env, c.grid);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Canonical text of every result-affecting key, in a fixed order. Output
// location, worker count and session settings are excluded.
inline std::string canonical_text(const ExperimentConfig& c) {
  std::ostringstream os;
  os.precision(17);
  std::vector<std::string> variants;
  for (auto v : c.variants) variants.emplace_back(to_string(v));
  std::vector<Eigen::Index> trunk = c.trainer.dims.trunk_hidden;
  os << "env = " << to_string(c.env) << '\n'
     << "variants = " << detail::join(variants) << '\n'
     << "seeds = " << detail::join(c.seeds) << '\n'
     << "oracle.feedback_frequency = " << c.feedback_frequency << '\n'
     << "oracle.feedback_quality = " << c.feedback_quality << '\n'
     << "oracle.bank_episodes = " << c.bank_episodes << '\n'
     << "trainer.episodes = " << c.trainer.episodes << '\n'
     << "trainer.max_steps = " << c.trainer.max_steps << '\n'
     << "trainer.buffer_capacity = " << c.trainer.buffer_capacity << '\n'
     << "trainer.minibatch = " << c.trainer.minibatch << '\n'
     << "trainer.replay_interval = " << c.trainer.replay_interval << '\n'
     << "trainer.trunk_hidden = " << detail::join(trunk) << '\n'
     << "trainer.embed_dim = " << c.trainer.dims.embed_dim << '\n'
     << "trainer.step_size = " << c.trainer.adam.step_size << '\n'
     << "eval.checkpoint_every = " << c.trainer.checkpoint_every << '\n'
     << "eval.horizon = " << c.trainer.horizon << '\n'
     << "eval.seeds = " << detail::join(c.eval_seeds) << '\n'
     << "eval.random_passes = " << c.random_passes << '\n';
  if (c.env == EnvId::gridworld)
    os << "grid.width = " << c.grid.width << '\n'
       << "grid.height = " << c.grid.height << '\n'
       << "grid.view_size = " << c.grid.view_size << '\n';
  return os.str();
}

inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t x) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, x >>= 4) s[static_cast<std::size_t>(i)] = digits[x & 0xF];
  return s;
}

inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a64(canonical_text(c))); }

}  // namespace cftamer
