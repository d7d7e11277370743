#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "nsmc/particle_history.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sampling.hpp"

namespace testutil {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= (n - 1.0);
  return {m, std::sqrt(v / n)};
}

inline MeanSe mean_se(const std::vector<double>& xs) {
  return mean_se(std::span<const double>(xs));
}

/// Pearson chi-square statistic against expected probabilities.
inline double chi_square(std::span<const long> counts, std::span<const double> probs) {
  long total = 0;
  for (long c : counts) total += c;
  double stat = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double expected = probs[i] * static_cast<double>(total);
    const double d = static_cast<double>(counts[i]) - expected;
    stat += d * d / expected;
  }
  return stat;
}

// p = 0.001 upper-tail critical values of the chi-square distribution
inline double chi_square_crit_p001(int dof) {
  static const double table[] = {0.0,    10.828, 13.816, 16.266, 18.467, 20.515,
                                 22.458, 24.322, 26.124, 27.877, 29.588};
  return table[dof];
}

/// Simple ancestral-tracing baseline: draw the final index, then follow the
/// stored ancestor chain (no backward reweighting). Used only to demonstrate
/// the path-degeneracy gap.
template <typename State>
std::vector<State> ancestral_trajectory(const nsmc::ParticleHistory<State>& h,
                                        nsmc::RngStream& rng) {
  const int n = h.num_steps();
  const int N = h.num_particles();
  std::vector<nsmc::LogWeight> w(N, nsmc::LogWeight::one());
  int b = static_cast<int>(nsmc::sample_categorical(rng, w));
  std::vector<State> out(n);
  for (int k = n - 1; k >= 0; --k) {
    out[k] = h.value(k, b);
    b = h.ancestor(k, b);
  }
  return out;
}

/// log_increment and log_density must agree on random probe paths.
template <typename Target, typename MakeState>
double max_target_inconsistency(const Target& target, MakeState&& make_state, int probes,
                                nsmc::RngStream rng) {
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    nsmc::RngStream probe = rng.split(p);
    const int n = target.horizon();
    std::vector<typename Target::State> path;
    path.reserve(n);
    for (int k = 0; k < n; ++k) path.push_back(make_state(probe));
    for (int k = 0; k < n; ++k) {
      const double lhs = target.log_density(k, std::span<const typename Target::State>(path));
      const double prev =
          k == 0 ? 0.0 : target.log_density(k - 1, std::span<const typename Target::State>(path));
      const double inc = target.log_increment(k, std::span<const typename Target::State>(path));
      worst = std::max(worst, std::abs(lhs - (prev + inc)));
    }
  }
  return worst;
}

}  // namespace testutil
