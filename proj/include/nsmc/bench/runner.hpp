#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "nsmc/backward.hpp"
#include "nsmc/bench/config.hpp"
#include "nsmc/engine.hpp"
#include "nsmc/metrics.hpp"
#include "nsmc/models/drought.hpp"
#include "nsmc/models/gaussian_lattice.hpp"
#include "nsmc/models/hmm.hpp"
#include "nsmc/nested_sis.hpp"
#include "nsmc/oracle/enumerate.hpp"
#include "nsmc/oracle/gaussian_filter.hpp"
#include "nsmc/oracle/hmm.hpp"
#include "nsmc/thread_pool.hpp"

namespace nsmc::bench {

inline constexpr const char* kVersion = "nsmc-bench-v0.1.0";

/// Count-based budget matching: the reference evaluates N * M site densities
/// per step and a flat sampler evaluates N of them, so the comparator gets
/// N_ref * M_ref particles (and unit inner budget).
inline ExperimentConfig matched_budget(ExperimentConfig comparator,
                                       const ExperimentConfig& reference) {
  comparator.n_particles = reference.n_particles * reference.precision;
  comparator.precision = 1;
  return comparator;
}

/// Measured-time matching: scale the reference budget by the measured
/// per-unit cost ratio so the comparator spends about the same wall time.
/// Probes are interleaved and the median of the paired ratios is used, so
/// clock-speed drift and scheduling spikes largely cancel.
template <typename RefFn, typename CompFn>
int matched_budget_measured(int reference_budget, RefFn&& reference_unit, CompFn&& comparator_unit,
                            int probe_iters = 5) {
  using clock = std::chrono::steady_clock;
  auto time_once = [](auto&& fn) {
    const auto t0 = clock::now();
    fn();
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  reference_unit();  // warm up
  comparator_unit();
  std::vector<double> ratios(probe_iters);
  for (int i = 0; i < probe_iters; ++i) {
    const double t_ref = time_once(reference_unit);
    const double t_comp = time_once(comparator_unit);
    ratios[i] = t_comp > 0.0 ? t_ref / t_comp : 1.0;
  }
  std::sort(ratios.begin(), ratios.end());
  const double ratio = ratios[probe_iters / 2];
  return std::max(1, static_cast<int>(std::lround(reference_budget * ratio)));
}

namespace detail {

struct ReplicateStats {
  std::vector<double> mean_est;  // steps * components
  std::vector<double> var_est;   // steps * components
  std::vector<double> ers;       // per step
  double log_z = 0.0;
  double wall_ms = 0.0;
};

inline bool wants(const std::vector<std::string>& metrics, const std::string& name) {
  return std::find(metrics.begin(), metrics.end(), name) != metrics.end();
}

inline bool wants_oracle(const std::vector<std::string>& metrics) {
  return wants(metrics, "ess") || wants(metrics, "mse") || wants(metrics, "ess_var") ||
         wants(metrics, "mse_var");
}

// Normalized linear weights of one history step (uniform for unit weights).
inline std::vector<double> normalized_weights(std::span<const double> log_w) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_w) m = std::max(m, v);
  std::vector<double> w(log_w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = std::exp(log_w[i] - m));
  for (double& v : w) v /= s;
  return w;
}

template <typename State, typename ComponentFn>
void estimates_from_history(const ParticleHistory<State>& h, int components, ComponentFn&& comp,
                            ReplicateStats& out) {
  const int n = h.num_steps(), N = h.num_particles();
  out.mean_est.assign(static_cast<std::size_t>(n) * components, 0.0);
  out.var_est.assign(static_cast<std::size_t>(n) * components, 0.0);
  out.ers.resize(n);
  for (int k = 0; k < n; ++k) {
    const auto w = normalized_weights(h.log_weights(k));
    for (int i = 0; i < N; ++i) {
      const State& x = h.value(k, i);
      for (int l = 0; l < components; ++l) {
        const double v = comp(x, l);
        out.mean_est[static_cast<std::size_t>(k) * components + l] += w[i] * v;
        out.var_est[static_cast<std::size_t>(k) * components + l] += w[i] * v * v;
      }
    }
    for (int l = 0; l < components; ++l) {
      double& vv = out.var_est[static_cast<std::size_t>(k) * components + l];
      const double mm = out.mean_est[static_cast<std::size_t>(k) * components + l];
      vv -= mm * mm;
    }
    out.ers[k] = ers_of_step(h, k);
  }
  out.log_z = h.final_log_z().log();
}

template <typename State, typename ComponentFn>
void estimates_from_sis(const SisState<State>& s, int components, ComponentFn&& comp,
                        ReplicateStats& out) {
  const int n = static_cast<int>(s.step_log_weights.size());
  const int N = static_cast<int>(s.trajectories.size());
  out.mean_est.assign(static_cast<std::size_t>(n) * components, 0.0);
  out.var_est.assign(static_cast<std::size_t>(n) * components, 0.0);
  out.ers.resize(n);
  std::vector<LogWeight> lw(N);
  for (int k = 0; k < n; ++k) {
    const auto w = normalized_weights(s.step_log_weights[k]);
    for (int i = 0; i < N; ++i) {
      const State& x = s.trajectories[i][k];
      for (int l = 0; l < components; ++l) {
        const double v = comp(x, l);
        out.mean_est[static_cast<std::size_t>(k) * components + l] += w[i] * v;
        out.var_est[static_cast<std::size_t>(k) * components + l] += w[i] * v * v;
      }
    }
    for (int l = 0; l < components; ++l) {
      double& vv = out.var_est[static_cast<std::size_t>(k) * components + l];
      const double mm = out.mean_est[static_cast<std::size_t>(k) * components + l];
      vv -= mm * mm;
    }
    for (int i = 0; i < N; ++i) {
      const double v = s.step_log_weights[k][i];
      lw[i] = v == -std::numeric_limits<double>::infinity() ? LogWeight::zero()
                                                            : LogWeight::from_log(v);
    }
    out.ers[k] = ers(lw);
  }
  out.log_z = s.log_z.log();
}

}  // namespace detail

struct RunOutputs {
  std::vector<std::string> csv_files;
  std::string manifest_path;
  std::string manifest_hash;
  std::vector<detail::ReplicateStats> replicates;  // per-replicate summaries
};

namespace detail {

inline std::vector<MetricRow> summarize_over_components(const std::string& metric,
                                                        const Matrix& per_kl, int replicates) {
  std::vector<MetricRow> rows;
  std::vector<double> vals(per_kl.cols);
  for (int k = 0; k < per_kl.rows; ++k) {
    for (int l = 0; l < per_kl.cols; ++l) vals[l] = per_kl.at(k, l);
    std::sort(vals.begin(), vals.end());
    rows.push_back({metric, k, "median", percentile_linear(vals, 50.0),
                    percentile_linear(vals, 15.0), percentile_linear(vals, 85.0), replicates});
  }
  return rows;
}

inline std::vector<MetricRow> summarize_ers(const std::vector<ReplicateStats>& reps, int n) {
  std::vector<MetricRow> rows;
  std::vector<double> vals(reps.size());
  for (int k = 0; k < n; ++k) {
    for (std::size_t r = 0; r < reps.size(); ++r) vals[r] = reps[r].ers[k];
    std::sort(vals.begin(), vals.end());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    rows.push_back({"ers", k, "resample", mean, percentile_linear(vals, 15.0),
                    percentile_linear(vals, 85.0), static_cast<int>(reps.size())});
  }
  return rows;
}

inline RunEstimates collect(const std::vector<ReplicateStats>& reps, int steps, int components,
                            bool variance) {
  RunEstimates est(static_cast<int>(reps.size()), steps, components);
  for (std::size_t r = 0; r < reps.size(); ++r)
    for (int k = 0; k < steps; ++k)
      for (int l = 0; l < components; ++l)
        est.at(static_cast<int>(r), k, l) =
            (variance ? reps[r].var_est : reps[r].mean_est)[static_cast<std::size_t>(k) *
                                                                components +
                                                            l];
  return est;
}

inline std::vector<MetricRow> mse_rows(const std::string& metric, const RunEstimates& est,
                                       const Matrix& truth_mean) {
  TruthMarginals t;
  t.mean = truth_mean;
  t.variance = Matrix(truth_mean.rows, truth_mean.cols, 1.0);
  auto summary = mse_summary(est, t);
  std::vector<MetricRow> rows;
  for (int k = 0; k < static_cast<int>(summary.size()); ++k)
    rows.push_back({metric, k, "median", summary[k].median, summary[k].lo15, summary[k].hi85,
                    est.replicates});
  return rows;
}

}  // namespace detail

/// Run one experiment end to end: build (or load) the dataset, run the
/// replicates in a worker pool on split streams, aggregate the requested
/// metrics, and write CSVs plus a manifest. Deterministic given
/// (config, seed) at any worker count.
inline RunOutputs run_experiment(ExperimentConfig cfg) {
  validate(cfg);
  namespace fs = std::filesystem;
  using clock = std::chrono::steady_clock;
  const auto run_start = clock::now();

  if (cfg.match_mode == "count") {
    ExperimentConfig reference = cfg;
    reference.n_particles = cfg.ref_n;
    reference.precision = cfg.ref_m;
    cfg = matched_budget(cfg, reference);
  } else if (cfg.match_mode == "time") {
    // wall-clock matching: probe single replicates of the nsmc reference and
    // of this algorithm, then rescale N by the measured ratio
    const auto probe_dir = fs::temp_directory_path() / ("nsmc-probe-" + config_hash(cfg));
    auto probe = [&](ExperimentConfig p, const char* sub) {
      p.match_mode = "none";
      p.replicates = 1;
      p.workers = 1;
      p.metrics.clear();
      p.out_dir = (probe_dir / sub).string();
      const auto t0 = clock::now();
      run_experiment(p);
      return std::chrono::duration<double>(clock::now() - t0).count();
    };
    ExperimentConfig ref = cfg;
    ref.algo = "nsmc";
    ref.n_particles = cfg.ref_n;
    ref.precision = cfg.ref_m;
    const double t_ref = probe(ref, "ref");
    const double t_comp = probe(cfg, "comp");
    fs::remove_all(probe_dir);
    if (t_comp > 0.0)
      cfg.n_particles =
          std::max(1, static_cast<int>(std::lround(cfg.n_particles * t_ref / t_comp)));
  }

  fs::create_directories(cfg.out_dir);
  const std::string hash = config_hash(cfg);
  RunOutputs out;
  out.manifest_hash = hash;
  auto out_path = [&cfg](const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
  };

  RngStream master(cfg.seed);
  RngStream data_rng = master.split(0);
  RngStream rep_master = master.split(1);

  const bool needs_oracle = detail::wants_oracle(cfg.metrics);
  std::vector<detail::ReplicateStats> reps(cfg.replicates);
  TruthMarginals truth;
  int components = 0;
  std::vector<Matrix> drought_marginal_sum;

  if (cfg.model == "gaussian-lattice") {
    models::GaussianLatticeParams params{cfg.dim, cfg.tau_psi, cfg.a, cfg.tau_rho, cfg.tau_phi};
    Matrix y;
    if (!cfg.obs_csv.empty()) {
      y = models::read_lattice_csv(cfg.obs_csv);
      if (y.cols != cfg.dim) throw ConfigError("observation csv does not match --d");
      if (y.rows < cfg.horizon) throw ConfigError("observation csv shorter than --n");
      y.rows = cfg.horizon;
      y.data.resize(static_cast<std::size_t>(y.rows) * y.cols);
    } else {
      auto [x, y_sim] = models::simulate_generating_ssm(params, cfg.horizon, data_rng);
      y = std::move(y_sim);
      models::write_lattice_csv(out_path("observations.csv"), y, "y", "manifest=" + hash);
      models::write_lattice_csv(out_path("latent_truth.csv"), x, "x", "manifest=" + hash);
      out.csv_files.push_back(out_path("observations.csv"));
      out.csv_files.push_back(out_path("latent_truth.csv"));
    }
    models::LatticeModel model(params, std::move(y));
    components = cfg.dim;

    if (needs_oracle) {
      try {
        auto fm = oracle::gaussian_filter(params, model.observations());
        truth.mean = std::move(fm.mean);
        truth.variance = std::move(fm.variance);
      } catch (const OracleInfeasibleError& e) {
        throw OracleInfeasibleError(std::string(e.what()) + "; available metrics: ers");
      }
    }

    parallel_for(cfg.replicates, cfg.workers, [&](int r) {
      const auto t0 = clock::now();
      RngStream stream = rep_master.split(r);
      detail::ReplicateStats& st = reps[r];
      auto comp = [](const std::vector<double>& x, int l) { return x[l]; };
      if (cfg.algo == "nsmc") {
        auto h = run_nested_smc_fa(model, models::LatticeInnerPfFactory(model), cfg.n_particles,
                                   cfg.precision, stream);
        detail::estimates_from_history(h, components, comp, st);
      } else if (cfg.algo == "bootstrap") {
        auto h = run_nested_smc_aux(model, models::LatticeBootstrapFactory(model),
                                    models::LatticeBootstrapDensity(model), UnitAdjustment{},
                                    cfg.n_particles, 1, stream);
        detail::estimates_from_history(h, components, comp, st);
      } else if (cfg.algo == "fa-smc") {
        auto h = run_fully_adapted_smc(model, models::LatticeOptimalProposal(model),
                                       cfg.n_particles, stream);
        detail::estimates_from_history(h, components, comp, st);
      } else {  // nsis
        auto s = run_nested_sis(model, models::LatticeBootstrapDensity(model),
                                models::LatticeBootstrapFactory(model), cfg.n_particles, 1,
                                stream);
        detail::estimates_from_sis(s, components, comp, st);
      }
      st.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    });
  } else if (cfg.model == "hmm-test") {
    oracle::Hmm hmm = models::default_test_hmm();
    if (cfg.hmm_case == "degenerate") {
      hmm.emission = {{0.8, 0.2, 0.0}, {0.6, 0.4, 0.0}};
    } else if (cfg.hmm_case != "default") {
      throw ConfigError("unknown hmm case: " + cfg.hmm_case);
    }
    std::vector<int> obs(cfg.horizon);
    {
      RngStream gen = data_rng.split(0);
      int x = 0;
      for (int k = 0; k < cfg.horizon; ++k) {
        std::vector<LogWeight> w;
        for (double p : (k == 0 ? hmm.init : hmm.transition[x]))
          w.push_back(LogWeight::from_linear(p));
        x = static_cast<int>(sample_categorical(gen, w));
        if (cfg.hmm_case == "degenerate" && k == cfg.horizon - 1) {
          obs[k] = 2;  // impossible symbol: every particle weight vanishes
          continue;
        }
        std::vector<LogWeight> we;
        for (double p : hmm.emission[x]) we.push_back(LogWeight::from_linear(p));
        obs[k] = static_cast<int>(sample_categorical(gen, we));
      }
    }
    models::HmmTarget model(hmm, obs);
    components = 1;

    if (needs_oracle) {
      auto fw = oracle::hmm_forward(hmm, obs);
      truth.mean = Matrix(cfg.horizon, 1);
      truth.variance = Matrix(cfg.horizon, 1);
      for (int k = 0; k < cfg.horizon; ++k) {
        const double p = fw.filter[k][1];
        truth.mean.at(k, 0) = p;
        truth.variance.at(k, 0) = std::max(p * (1.0 - p), 1e-12);
      }
    }

    parallel_for(cfg.replicates, cfg.workers, [&](int r) {
      const auto t0 = clock::now();
      RngStream stream = rep_master.split(r);
      detail::ReplicateStats& st = reps[r];
      auto comp = [](const int& x, int) { return static_cast<double>(x); };
      if (cfg.algo == "nsmc") {
        auto h = run_nested_smc_fa(model, models::HmmNestedIsFactory(model), cfg.n_particles,
                                   cfg.precision, stream);
        detail::estimates_from_history(h, 1, comp, st);
      } else if (cfg.algo == "bootstrap") {
        auto h = run_nested_smc_aux(model, models::HmmPriorFactory(model),
                                    models::HmmPriorDensity(model), UnitAdjustment{},
                                    cfg.n_particles, 1, stream);
        detail::estimates_from_history(h, 1, comp, st);
      } else if (cfg.algo == "fa-smc") {
        auto h = run_fully_adapted_smc(model, models::HmmOptimalProposal(model), cfg.n_particles,
                                       stream);
        detail::estimates_from_history(h, 1, comp, st);
      } else {
        auto s = run_nested_sis(model, models::HmmPriorDensity(model),
                                models::HmmPriorFactory(model), cfg.n_particles, 1, stream);
        detail::estimates_from_sis(s, 1, comp, st);
      }
      st.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    });
  } else {  // drought
    models::PrecipGrid precip;
    if (!cfg.precip_csv.empty()) {
      precip = models::read_precip_csv(cfg.precip_csv);
      cfg.grid_rows = precip.rows;
      cfg.grid_cols = precip.cols;
    } else {
      precip =
          models::generate_synthetic_precip(cfg.grid_rows, cfg.grid_cols, cfg.horizon, data_rng);
      models::write_precip_csv(out_path("precip.csv"), precip);
      // prepend the manifest marker
      auto text = read_text_file(out_path("precip.csv"));
      write_text_file(out_path("precip.csv"), "# manifest=" + hash + "\n" + text);
      out.csv_files.push_back(out_path("precip.csv"));
    }
    const int n = precip.horizon();
    models::DroughtParams params = models::estimate_site_params(precip, cfg.c1, cfg.c2);
    components = params.sites();

    if (needs_oracle) {
      if (params.sites() > 12)
        throw OracleInfeasibleError(
            "exact drought marginals infeasible for this grid; available metrics: ers, "
            "threshold");
      auto en = oracle::enumerate_filter(models::make_enumeration_model(params, precip));
      truth.mean = Matrix(n, components);
      truth.variance = Matrix(n, components);
      for (int k = 0; k < n; ++k)
        for (int s = 0; s < components; ++s) {
          double p = 0.0;
          for (int state = 0; state < (1 << components); ++state)
            if ((state >> s) & 1) p += en.filter[k][state];
          truth.mean.at(k, s) = p;
          truth.variance.at(k, s) = std::max(p * (1.0 - p), 1e-12);
        }
    }

    drought_marginal_sum.assign(n, Matrix(cfg.grid_rows, cfg.grid_cols, 0.0));
    std::vector<std::vector<Matrix>> per_rep(cfg.replicates);
    parallel_for(cfg.replicates, cfg.workers, [&](int r) {
      const auto t0 = clock::now();
      RngStream stream = rep_master.split(r);
      detail::ReplicateStats& st = reps[r];
      auto res = models::three_level_nsmc(params, precip, cfg.n_particles, cfg.n_level2,
                                          cfg.n_level3, stream);
      st.mean_est.assign(static_cast<std::size_t>(n) * components, 0.0);
      st.var_est.assign(static_cast<std::size_t>(n) * components, 0.0);
      st.ers.resize(n);
      for (int k = 0; k < n; ++k) {
        for (int s = 0; s < components; ++s) {
          const double p = res.marginals[k].data[s];
          st.mean_est[static_cast<std::size_t>(k) * components + s] = p;
          st.var_est[static_cast<std::size_t>(k) * components + s] = p * (1.0 - p);
        }
        st.ers[k] = ers_of_step(res.history, k);
      }
      st.log_z = res.history.final_log_z().log();
      per_rep[r] = std::move(res.marginals);
      st.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    });
    for (int r = 0; r < cfg.replicates; ++r)
      for (int k = 0; k < n; ++k)
        for (int s = 0; s < components; ++s)
          drought_marginal_sum[k].data[s] += per_rep[r][k].data[s] / cfg.replicates;
    models::write_marginals_csv(out_path("marginals.csv"), drought_marginal_sum, hash);
    out.csv_files.push_back(out_path("marginals.csv"));
  }

  // metric CSVs
  const int n_steps = static_cast<int>(reps[0].ers.size());
  if (detail::wants(cfg.metrics, "ess")) {
    auto est = detail::collect(reps, n_steps, components, false);
    auto rows = detail::summarize_over_components("ess", ess(est, truth), cfg.replicates);
    write_metric_csv(out_path("ess.csv"), rows, hash);
    out.csv_files.push_back(out_path("ess.csv"));
  }
  if (detail::wants(cfg.metrics, "ess_var")) {
    auto est = detail::collect(reps, n_steps, components, true);
    auto rows =
        detail::summarize_over_components("ess_var", ess_for_variance(est, truth), cfg.replicates);
    write_metric_csv(out_path("ess_var.csv"), rows, hash);
    out.csv_files.push_back(out_path("ess_var.csv"));
  }
  if (detail::wants(cfg.metrics, "mse")) {
    auto est = detail::collect(reps, n_steps, components, false);
    write_metric_csv(out_path("mse.csv"), detail::mse_rows("mse", est, truth.mean), hash);
    out.csv_files.push_back(out_path("mse.csv"));
  }
  if (detail::wants(cfg.metrics, "mse_var")) {
    auto est = detail::collect(reps, n_steps, components, true);
    write_metric_csv(out_path("mse_var.csv"), detail::mse_rows("mse_var", est, truth.variance),
                     hash);
    out.csv_files.push_back(out_path("mse_var.csv"));
  }
  if (detail::wants(cfg.metrics, "ers")) {
    write_metric_csv(out_path("ers.csv"), detail::summarize_ers(reps, n_steps), hash);
    out.csv_files.push_back(out_path("ers.csv"));
  }

  // manifest
  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["config_hash"] = hash;
  manifest["percentile_method"] = "linear";
  manifest["config_echo"] = canonical_string(cfg);
  if (cfg.match_mode != "none") {
    manifest["budget_match"] = {{"mode", cfg.match_mode},
                                {"ref_n", cfg.ref_n},
                                {"ref_m", cfg.ref_m},
                                {"adjusted_n", cfg.n_particles},
                                {"unit", "site density evaluations per step"}};
  }
  std::vector<double> wall;
  for (const auto& r : reps) wall.push_back(r.wall_ms);
  manifest["replicate_wall_ms"] = wall;
  manifest["total_wall_ms"] =
      std::chrono::duration<double, std::milli>(clock::now() - run_start).count();
  std::vector<std::string> files;
  for (const auto& f : out.csv_files) files.push_back(fs::path(f).filename().string());
  manifest["outputs"] = files;
  out.manifest_path = out_path("manifest.json");
  write_text_file(out.manifest_path, manifest.dump(2) + "\n");
  out.replicates = std::move(reps);
  return out;
}

}  // namespace nsmc::bench
