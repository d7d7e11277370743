#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsmc/csv.hpp"
#include "nsmc/engine.hpp"
#include "nsmc/matrix.hpp"

namespace nsmc {

/// Per-replicate, per-step, per-component point estimates x_hat of the
/// filtering means (or variances), laid out replicate-major.
struct RunEstimates {
  int replicates = 0;
  int steps = 0;
  int components = 0;
  std::vector<double> data;

  RunEstimates() = default;
  RunEstimates(int r, int k, int l)
      : replicates(r), steps(k), components(l),
        data(static_cast<std::size_t>(r) * k * l, 0.0) {}

  double& at(int r, int k, int l) {
    return data[(static_cast<std::size_t>(r) * steps + k) * components + l];
  }
  double at(int r, int k, int l) const {
    return data[(static_cast<std::size_t>(r) * steps + k) * components + l];
  }
};

/// Reference marginals the estimates are judged against.
struct TruthMarginals {
  Matrix mean;      // steps x components
  Matrix variance;  // steps x components
};

/// Equivalent number of iid samples:
/// ESS(k, l) = 1 / mean_r[ (x_hat - mu)^2 / sigma^2 ].
/// +inf marks an exact estimator (zero error across all replicates).
/// `truth_variance_scale` switches the denominator: 1 judges mean estimates
/// against sigma^2; for variance estimates the Gaussian fourth-moment value
/// 2 sigma^4 applies (pass scale = 2 and square the variance), see
/// ess_for_variance.
inline Matrix ess(const RunEstimates& estimates, const Matrix& truth_mean,
                  const Matrix& truth_denominator) {
  if (estimates.replicates < 1) throw std::invalid_argument("ess: need at least one replicate");
  if (truth_mean.rows != estimates.steps || truth_mean.cols != estimates.components)
    throw std::invalid_argument("ess: truth shape mismatch");
  Matrix out(estimates.steps, estimates.components);
  for (int k = 0; k < estimates.steps; ++k) {
    for (int l = 0; l < estimates.components; ++l) {
      const double denom = truth_denominator.at(k, l);
      if (!(denom > 0.0)) throw std::invalid_argument("ess: zero truth variance");
      double mean_sq = 0.0;
      for (int r = 0; r < estimates.replicates; ++r) {
        const double e = estimates.at(r, k, l) - truth_mean.at(k, l);
        mean_sq += e * e / denom;
      }
      mean_sq /= estimates.replicates;
      out.at(k, l) = mean_sq == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / mean_sq;
    }
  }
  return out;
}

/// ESS of filtering-mean estimates against exact means and variances.
inline Matrix ess(const RunEstimates& estimates, const TruthMarginals& truth) {
  return ess(estimates, truth.mean, truth.variance);
}

/// ESS of filtering-variance estimates; the error scale is the Gaussian
/// sampling variance of a variance estimate, 2 sigma^4.
inline Matrix ess_for_variance(const RunEstimates& estimates, const TruthMarginals& truth) {
  Matrix denom(truth.variance.rows, truth.variance.cols);
  for (std::size_t i = 0; i < denom.data.size(); ++i)
    denom.data[i] = 2.0 * truth.variance.data[i] * truth.variance.data[i];
  return ess(estimates, truth.variance, denom);
}

/// Linear-interpolation percentile of a sorted sample, p in [0, 100].
inline double percentile_linear(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile_linear: empty sample");
  if (sorted.size() == 1) return sorted[0];
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Per-step summary of per-component MSEs: median over components plus the
/// 15-85% percentile band (linear interpolation).
struct MseSummaryRow {
  double median = 0.0;
  double lo15 = 0.0;
  double hi85 = 0.0;
};

inline std::vector<MseSummaryRow> mse_summary(const RunEstimates& estimates,
                                              const TruthMarginals& truth) {
  if (estimates.replicates < 2) throw std::invalid_argument("mse_summary: need >= 2 replicates");
  if (truth.mean.rows != estimates.steps || truth.mean.cols != estimates.components)
    throw std::invalid_argument("mse_summary: truth shape mismatch");
  std::vector<MseSummaryRow> out(estimates.steps);
  std::vector<double> mse(estimates.components);
  for (int k = 0; k < estimates.steps; ++k) {
    for (int l = 0; l < estimates.components; ++l) {
      double s = 0.0;
      for (int r = 0; r < estimates.replicates; ++r) {
        const double e = estimates.at(r, k, l) - truth.mean.at(k, l);
        s += e * e;
      }
      mse[l] = s / estimates.replicates;
    }
    std::sort(mse.begin(), mse.end());
    out[k] = {percentile_linear(mse, 50.0), percentile_linear(mse, 15.0),
              percentile_linear(mse, 85.0)};
  }
  return out;
}

/// One row of the metric output CSV.
struct MetricRow {
  std::string metric;
  int step = 0;
  std::string component_or_median;  // component index, "median", or "resample"
  double value = 0.0;
  double lo15 = std::numeric_limits<double>::quiet_NaN();
  double hi85 = std::numeric_limits<double>::quiet_NaN();
  int replicates = 0;
};

/// Schema: metric,step,component_or_median,value,lo15,hi85,replicates.
/// Infinite values are written as the marker "exact"; absent band cells are
/// empty.
inline void write_metric_csv(const std::string& path, const std::vector<MetricRow>& rows,
                             const std::string& manifest_hash) {
  auto cell = [](double v) -> std::string {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return "exact";
    return format_double(v);
  };
  std::string out;
  if (!manifest_hash.empty()) out += "# manifest=" + manifest_hash + "\n";
  out += csv_line({"metric", "step", "component_or_median", "value", "lo15", "hi85", "replicates"});
  for (const auto& r : rows)
    out += csv_line({r.metric, std::to_string(r.step), r.component_or_median, cell(r.value),
                     cell(r.lo15), cell(r.hi85), std::to_string(r.replicates)});
  write_text_file(path, out);
}

}  // namespace nsmc
