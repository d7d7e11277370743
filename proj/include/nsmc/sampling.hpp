#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "nsmc/errors.hpp"
#include "nsmc/log_weight.hpp"
#include "nsmc/rng.hpp"

namespace nsmc {

namespace detail {

// Max log weight, throwing on an empty or all-zero set.
inline double require_mass(std::span<const LogWeight> weights, int step = -1) {
  if (weights.empty()) throw std::invalid_argument("empty weight set");
  double m = -std::numeric_limits<double>::infinity();
  for (LogWeight w : weights) m = std::max(m, w.log());
  if (m == -std::numeric_limits<double>::infinity())
    throw DegeneracyError("degenerate weights: all zero", step);
  return m;
}

}  // namespace detail

/// Draw index i with probability proportional to exp(weights[i]).
inline std::size_t sample_categorical(RngStream& rng, std::span<const LogWeight> weights) {
  const double m = detail::require_mass(weights);
  double total = 0.0;
  for (LogWeight w : weights) total += std::exp(w.log() - m);
  const double u = rng.next_double() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double p = std::exp(weights[i].log() - m);
    if (p > 0.0) last_positive = i;
    cum += p;
    if (u < cum) return i;
  }
  return last_positive;  // guards against rounding in the final partial sum
}

inline std::size_t sample_categorical(RngStream& rng, const std::vector<LogWeight>& weights) {
  return sample_categorical(rng, std::span<const LogWeight>(weights));
}

/// Offspring counts of an exact multinomial(n, normalized weights) draw,
/// generated with one sweep over n sorted uniforms (exponential spacings).
inline std::vector<std::uint32_t> resample_multinomial(RngStream& rng,
                                                       std::span<const LogWeight> weights,
                                                       std::size_t n) {
  if (n < 1) throw std::invalid_argument("resample_multinomial: n must be >= 1");
  const double m = detail::require_mass(weights);

  std::vector<double> sorted_u(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += rng.next_exponential();
    sorted_u[i] = s;
  }
  s += rng.next_exponential();
  for (double& u : sorted_u) u /= s;

  double total = 0.0;
  for (LogWeight w : weights) total += std::exp(w.log() - m);

  std::vector<std::uint32_t> counts(weights.size(), 0);
  double cum = 0.0;
  std::size_t i = 0;
  for (std::size_t j = 0; j < weights.size() && i < n; ++j) {
    cum += std::exp(weights[j].log() - m) / total;
    while (i < n && sorted_u[i] < cum) {
      ++counts[j];
      ++i;
    }
  }
  if (i < n) {
    // rounding left the CDF fractionally short of 1; assign the stragglers
    // to the last particle with positive weight
    std::size_t j = weights.size();
    while (j-- > 0)
      if (!weights[j].is_zero()) break;
    counts[j] += static_cast<std::uint32_t>(n - i);
  }
  return counts;
}

inline std::vector<std::uint32_t> resample_multinomial(RngStream& rng,
                                                       const std::vector<LogWeight>& weights,
                                                       std::size_t n) {
  return resample_multinomial(rng, std::span<const LogWeight>(weights), n);
}

/// Expand offspring counts to sorted 0-based ancestor indices:
/// counts[j] copies of j, in order.
inline std::vector<std::uint32_t> ancestor_indices_from_counts(
    std::span<const std::uint32_t> counts) {
  std::vector<std::uint32_t> indices;
  std::size_t total = 0;
  for (std::uint32_t c : counts) total += c;
  indices.reserve(total);
  for (std::uint32_t j = 0; j < counts.size(); ++j)
    indices.insert(indices.end(), counts[j], j);
  return indices;
}

inline std::vector<std::uint32_t> ancestor_indices_from_counts(
    const std::vector<std::uint32_t>& counts) {
  return ancestor_indices_from_counts(std::span<const std::uint32_t>(counts));
}

}  // namespace nsmc
