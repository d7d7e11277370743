// Experiment runner: seeded, replicated benchmark runs over the bundled
// models with CSV metric output. Exit codes: 0 success, 2 configuration
// error, 3 degeneracy during sampling, 4 infeasible oracle request.

#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>

#include "nsmc/bench/config.hpp"
#include "nsmc/bench/runner.hpp"
#include "nsmc/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"nested sequential Monte Carlo benchmark runner"};
  app.set_config("--config", "", "flat key=value config file; flags override");

  nsmc::bench::ExperimentConfig cfg;
  std::string preset;
  std::string metrics_csv;
  long long seed = -1;

  app.add_option("--preset", preset, "start from a named preset (see --list-presets)");
  app.add_option("--model", cfg.model, "gaussian-lattice | drought | hmm-test");
  app.add_option("--algo", cfg.algo, "nsmc | bootstrap | fa-smc | nsis");
  app.add_option("--N", cfg.n_particles, "outer particle count");
  app.add_option("--M", cfg.precision, "inner sampler budget");
  app.add_option("--n", cfg.horizon, "horizon (steps / years)");
  app.add_option("--d", cfg.dim, "state dimension (gaussian-lattice)");
  app.add_option("--N1", cfg.n_level2, "second-level particle count (drought)");
  app.add_option("--N2", cfg.n_level3, "third-level particle count (drought)");
  app.add_option("--I", cfg.grid_rows, "grid rows (drought)");
  app.add_option("--J", cfg.grid_cols, "grid cols (drought)");
  app.add_option("--replicates", cfg.replicates, "independent replicates");
  app.add_option("--seed", seed, "master seed (required)");
  app.add_option("--workers", cfg.workers, "replicate worker threads");
  app.add_option("--out", cfg.out_dir, "output directory");
  app.add_option("--metrics", metrics_csv, "comma list: ess,ers,mse,ess_var,mse_var,threshold");
  app.add_option("--tau-psi", cfg.tau_psi, "spatial coupling precision");
  app.add_option("--a", cfg.a, "temporal coefficient");
  app.add_option("--tau-rho", cfg.tau_rho, "temporal precision");
  app.add_option("--tau-phi", cfg.tau_phi, "observation precision");
  app.add_option("--C1", cfg.c1, "drought spatial coupling");
  app.add_option("--C2", cfg.c2, "drought temporal coupling");
  app.add_option("--obs-csv", cfg.obs_csv, "lattice observations CSV (else simulated)");
  app.add_option("--precip-csv", cfg.precip_csv, "precipitation CSV (else synthetic)");
  app.add_option("--hmm-case", cfg.hmm_case, "default | degenerate");
  app.add_option("--match-mode", cfg.match_mode, "none | count | time");
  app.add_option("--ref-N", cfg.ref_n, "reference N for budget matching");
  app.add_option("--ref-M", cfg.ref_m, "reference M for budget matching");
  bool list_presets = false;
  app.add_flag("--list-presets", list_presets, "list preset names and exit");

  // two passes: --preset seeds the defaults, explicit flags override
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  if (list_presets) {
    for (const auto& [name, unused] : nsmc::bench::presets()) std::printf("%s\n", name.c_str());
    return 0;
  }

  try {
    if (!preset.empty()) {
      nsmc::bench::ExperimentConfig base = nsmc::bench::apply_preset(preset);
      // re-apply explicit flags on top of the preset
      base.model = app.count("--model") ? cfg.model : base.model;
      base.algo = app.count("--algo") ? cfg.algo : base.algo;
      base.n_particles = app.count("--N") ? cfg.n_particles : base.n_particles;
      base.precision = app.count("--M") ? cfg.precision : base.precision;
      base.horizon = app.count("--n") ? cfg.horizon : base.horizon;
      base.dim = app.count("--d") ? cfg.dim : base.dim;
      base.n_level2 = app.count("--N1") ? cfg.n_level2 : base.n_level2;
      base.n_level3 = app.count("--N2") ? cfg.n_level3 : base.n_level3;
      base.grid_rows = app.count("--I") ? cfg.grid_rows : base.grid_rows;
      base.grid_cols = app.count("--J") ? cfg.grid_cols : base.grid_cols;
      base.replicates = app.count("--replicates") ? cfg.replicates : base.replicates;
      base.workers = app.count("--workers") ? cfg.workers : base.workers;
      base.out_dir = app.count("--out") ? cfg.out_dir : base.out_dir;
      base.tau_psi = app.count("--tau-psi") ? cfg.tau_psi : base.tau_psi;
      base.a = app.count("--a") ? cfg.a : base.a;
      base.tau_rho = app.count("--tau-rho") ? cfg.tau_rho : base.tau_rho;
      base.tau_phi = app.count("--tau-phi") ? cfg.tau_phi : base.tau_phi;
      base.c1 = app.count("--C1") ? cfg.c1 : base.c1;
      base.c2 = app.count("--C2") ? cfg.c2 : base.c2;
      base.obs_csv = app.count("--obs-csv") ? cfg.obs_csv : base.obs_csv;
      base.precip_csv = app.count("--precip-csv") ? cfg.precip_csv : base.precip_csv;
      base.hmm_case = app.count("--hmm-case") ? cfg.hmm_case : base.hmm_case;
      base.match_mode = app.count("--match-mode") ? cfg.match_mode : base.match_mode;
      base.ref_n = app.count("--ref-N") ? cfg.ref_n : base.ref_n;
      base.ref_m = app.count("--ref-M") ? cfg.ref_m : base.ref_m;
      cfg = base;
    }
    if (seed >= 0) {
      cfg.seed = static_cast<std::uint64_t>(seed);
      cfg.seed_set = true;
    }
    if (!metrics_csv.empty()) {
      cfg.metrics.clear();
      std::string cur;
      for (char c : metrics_csv + ",") {
        if (c == ',') {
          if (!cur.empty()) cfg.metrics.push_back(cur);
          cur.clear();
        } else {
          cur += c;
        }
      }
    } else if (cfg.metrics.empty()) {
      cfg.metrics = cfg.model == "drought" ? std::vector<std::string>{"ers", "threshold"}
                                           : std::vector<std::string>{"ess", "ers", "mse"};
    }

    auto out = nsmc::bench::run_experiment(cfg);
    std::printf("wrote %zu csv files and %s (config %s)\n", out.csv_files.size(),
                out.manifest_path.c_str(), out.manifest_hash.c_str());
    return 0;
  } catch (const nsmc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const nsmc::OracleInfeasibleError& e) {
    std::fprintf(stderr, "oracle infeasible: %s\n", e.what());
    return 4;
  } catch (const nsmc::DegeneracyError& e) {
    std::fprintf(stderr, "degeneracy: %s\n", e.what());
    return 3;
  } catch (const nsmc::InvalidProposalError& e) {
    std::fprintf(stderr, "degeneracy: %s\n", e.what());
    return 3;
  } catch (const nsmc::SamplerBuildError& e) {
    std::fprintf(stderr, "degeneracy: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
