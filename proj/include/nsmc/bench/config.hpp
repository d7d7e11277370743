#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "nsmc/errors.hpp"

namespace nsmc::bench {

/// One experiment run: model, algorithm, budgets, horizon, replication and
/// output location. A seed is mandatory; there is no wall-clock default.
struct ExperimentConfig {
  std::string preset;
  std::string model = "gaussian-lattice";  // gaussian-lattice | drought | hmm-test
  std::string algo = "nsmc";               // nsmc | bootstrap | fa-smc | nsis

  int n_particles = 100;  // N
  int precision = 8;      // M (inner budget per sampler)
  int horizon = 10;       // n (steps / years)
  int dim = 4;            // d (gaussian-lattice)
  int n_level2 = 30;      // N1 (drought)
  int n_level3 = 20;      // N2 (drought)
  int grid_rows = 2;      // I (drought)
  int grid_cols = 3;      // J (drought)

  int replicates = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
  std::string out_dir = ".";
  std::vector<std::string> metrics;  // default filled per model

  // model parameters
  double tau_psi = 1.0, a = 0.5, tau_rho = 1.0, tau_phi = 10.0;
  double c1 = 0.5, c2 = 3.0;

  // optional user-supplied data
  std::string obs_csv;     // gaussian-lattice observations
  std::string precip_csv;  // drought precipitation
  std::string hmm_case = "default";  // default | degenerate

  // budget matching: none | count | time; reference budgets for count mode
  std::string match_mode = "none";
  int ref_n = 0;
  int ref_m = 0;
};

inline const std::map<std::string, ExperimentConfig>& presets() {
  static const std::map<std::string, ExperimentConfig> table = [] {
    std::map<std::string, ExperimentConfig> t;
    {
      ExperimentConfig c;  // paper-scale Gaussian lattice runs (N = 500, M = 2d)
      c.model = "gaussian-lattice";
      c.algo = "nsmc";
      c.horizon = 100;
      c.replicates = 100;
      c.metrics = {"ess", "ers"};
      c.dim = 50;
      c.n_particles = 500;
      c.precision = 100;
      t["gauss-d50"] = c;
      c.dim = 100;
      c.precision = 200;
      t["gauss-d100"] = c;
      c.dim = 200;
      c.precision = 400;
      t["gauss-d200"] = c;
    }
    {
      ExperimentConfig c;  // small smoke-scale lattice run
      c.model = "gaussian-lattice";
      c.algo = "nsmc";
      c.dim = 4;
      c.horizon = 10;
      c.n_particles = 50;
      c.precision = 16;
      c.replicates = 8;
      c.metrics = {"ess", "ers", "mse"};
      t["gauss-desk"] = c;
    }
    {
      ExperimentConfig c;  // drought regions, synthetic precipitation
      c.model = "drought";
      c.algo = "nsmc";
      c.n_particles = 100;
      c.n_level3 = 20;
      c.replicates = 1;
      c.metrics = {"ers", "threshold"};
      c.grid_rows = 20;
      c.grid_cols = 30;
      c.horizon = 50;
      c.n_level2 = 30;
      t["drought-na"] = c;
      c.grid_rows = 24;
      c.grid_cols = 44;
      c.horizon = 51;
      c.n_level2 = 40;
      t["drought-sahel"] = c;
      c.grid_rows = 2;
      c.grid_cols = 3;
      c.horizon = 4;
      c.n_level2 = 50;
      c.n_particles = 200;
      c.metrics = {"ess", "ers", "mse", "threshold"};
      t["drought-desk"] = c;
    }
    {
      ExperimentConfig c;
      c.model = "hmm-test";
      c.algo = "nsmc";
      c.horizon = 3;
      c.n_particles = 20;
      c.precision = 4;
      c.replicates = 100;
      c.metrics = {"ess", "ers", "mse"};
      t["hmm-smoke"] = c;
    }
    return t;
  }();
  return table;
}

inline ExperimentConfig apply_preset(const std::string& name) {
  auto it = presets().find(name);
  if (it == presets().end()) throw ConfigError("unknown preset: " + name);
  ExperimentConfig c = it->second;
  c.preset = name;
  return c;
}

inline void validate(const ExperimentConfig& c) {
  if (!c.seed_set) throw ConfigError("a seed is required (--seed)");
  if (c.model != "gaussian-lattice" && c.model != "drought" && c.model != "hmm-test")
    throw ConfigError("unknown model: " + c.model);
  if (c.algo != "nsmc" && c.algo != "bootstrap" && c.algo != "fa-smc" && c.algo != "nsis")
    throw ConfigError("unknown algorithm: " + c.algo);
  if (c.model == "drought" && c.algo != "nsmc")
    throw ConfigError("the drought model runs the three-level nsmc algorithm only");
  if (c.n_particles < 1 || c.precision < 1 || c.horizon < 1 || c.replicates < 1 ||
      c.n_level2 < 1 || c.n_level3 < 1 || c.dim < 1)
    throw ConfigError("all budgets must be >= 1");
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.match_mode != "none" && c.match_mode != "count" && c.match_mode != "time")
    throw ConfigError("unknown match mode: " + c.match_mode);
  if (c.match_mode != "none" && (c.ref_n < 1 || c.ref_m < 1))
    throw ConfigError("budget matching needs --ref-N and --ref-M");
  for (const auto& m : c.metrics) {
    if (m != "ess" && m != "ers" && m != "mse" && m != "ess_var" && m != "mse_var" &&
        m != "threshold")
      throw ConfigError("unknown metric: " + m);
    if ((m == "ess_var" || m == "mse_var") && c.model != "gaussian-lattice")
      throw ConfigError("variance-accuracy metrics are defined for the gaussian-lattice model "
                        "only");
    if (m == "threshold" && c.model != "drought")
      throw ConfigError("threshold counts are a drought-model metric");
  }
}

/// Canonical flat key=value echo; the manifest hash is taken over this.
inline std::string canonical_string(const ExperimentConfig& c) {
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  kv("preset", c.preset);
  kv("model", c.model);
  kv("algo", c.algo);
  kv("N", std::to_string(c.n_particles));
  kv("M", std::to_string(c.precision));
  kv("n", std::to_string(c.horizon));
  kv("d", std::to_string(c.dim));
  kv("N1", std::to_string(c.n_level2));
  kv("N2", std::to_string(c.n_level3));
  kv("I", std::to_string(c.grid_rows));
  kv("J", std::to_string(c.grid_cols));
  kv("replicates", std::to_string(c.replicates));
  kv("seed", std::to_string(c.seed));
  kv("tau_psi", std::to_string(c.tau_psi));
  kv("a", std::to_string(c.a));
  kv("tau_rho", std::to_string(c.tau_rho));
  kv("tau_phi", std::to_string(c.tau_phi));
  kv("c1", std::to_string(c.c1));
  kv("c2", std::to_string(c.c2));
  kv("obs_csv", c.obs_csv);
  kv("precip_csv", c.precip_csv);
  kv("hmm_case", c.hmm_case);
  kv("match_mode", c.match_mode);
  kv("ref_n", std::to_string(c.ref_n));
  kv("ref_m", std::to_string(c.ref_m));
  std::string metrics;
  for (const auto& m : c.metrics) metrics += m + ";";
  kv("metrics", metrics);
  return s;
}

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const ExperimentConfig& c) {
  return fnv1a_hex(canonical_string(c));
}

}  // namespace nsmc::bench
