#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nsmc/errors.hpp"
#include "nsmc/log_weight.hpp"
#include "nsmc/proper_sampler.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sampling.hpp"

namespace nsmc {

/// Weighted particle approximation of an unnormalized target, with the
/// normalizing-constant estimate log_z = log mean linear weight.
template <typename Value>
struct WeightedSet {
  std::vector<Value> values;
  std::vector<LogWeight> log_weights;
  LogWeight log_z;
};

/// Importance sampling where the proposal itself is only available through a
/// properly weighted sampler: each particle gets a fresh sampler instance,
/// and its weight carries the sampler's normalizing-constant estimate,
/// w_i = z_i * pi(x_i) / q(x_i).
template <typename Value, typename PiFn, typename QFn, typename Factory>
  requires SamplerFactoryFor<Factory, Value>
WeightedSet<Value> nested_is(PiFn&& log_pi, QFn&& log_q, const Factory& factory, int n_samples,
                             int precision, RngStream rng) {
  if (n_samples < 1) throw std::invalid_argument("nested_is: n_samples must be >= 1");
  WeightedSet<Value> out;
  out.values.reserve(n_samples);
  out.log_weights.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    RngStream item = rng.split(i);
    RngStream construct = item.split(0);
    RngStream simulate = item.split(1);
    auto sampler = [&] {
      try {
        return factory(precision, construct);
      } catch (const std::exception& e) {
        throw SamplerBuildError(0, i, e.what());
      }
    }();
    const LogWeight z = sampler.log_z();
    out.values.push_back(sampler.simulate(simulate));
    const Value& x = out.values.back();
    const double lq = log_q(x);
    if (std::isnan(lq) || lq == -std::numeric_limits<double>::infinity())
      throw InvalidProposalError("proposal density zero at own sample (particle " +
                                 std::to_string(i) + ")");
    const double lp = log_pi(x);
    out.log_weights.push_back(lp == -std::numeric_limits<double>::infinity() || z.is_zero()
                                  ? LogWeight::zero()
                                  : LogWeight::from_log(z.log() + lp - lq));
  }
  out.log_z = LogWeight::from_log(log_sum_exp(out.log_weights).log() - std::log(n_samples));
  return out;
}

/// A nested-IS run packaged as a properly weighted sampler for its target:
/// construction runs nested_is once and caches the weighted set; log_z()
/// returns the cached estimate; simulate() draws a categorical index into the
/// cached set. Repeated simulate() calls reuse the one set with fresh
/// categorical draws, so samples from one object are correlated.
template <typename Value>
class NestedIsSampler {
public:
  template <typename PiFn, typename QFn, typename Factory>
    requires SamplerFactoryFor<Factory, Value>
  static NestedIsSampler make(PiFn&& log_pi, QFn&& log_q, const Factory& factory, int n_samples,
                              int precision, RngStream rng) {
    return NestedIsSampler(nested_is<Value>(std::forward<PiFn>(log_pi), std::forward<QFn>(log_q),
                                            factory, n_samples, precision, rng));
  }

  explicit NestedIsSampler(WeightedSet<Value> set) : set_(std::move(set)) {
    const double m = log_sum_exp(set_.log_weights).log();
    if (m == -std::numeric_limits<double>::infinity())
      throw DegeneracyError("degenerate weights: all zero");
    cdf_.reserve(set_.log_weights.size());
    double cum = 0.0;
    for (std::size_t i = 0; i < set_.log_weights.size(); ++i) {
      const double p = std::exp(set_.log_weights[i].log() - m);
      if (p > 0.0) last_positive_ = i;
      cum += p;
      cdf_.push_back(cum);
    }
  }

  LogWeight log_z() const { return set_.log_z; }

  Value simulate(RngStream& rng) const {
    const double u = rng.next_double() * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t i =
        it == cdf_.end() ? last_positive_ : static_cast<std::size_t>(it - cdf_.begin());
    return set_.values[i];
  }

  /// The (value, weight) pair of the proper-weighting contract.
  ProperSample<Value> sample(RngStream& rng) const { return {simulate(rng), log_z()}; }

  const WeightedSet<Value>& set() const { return set_; }

private:
  WeightedSet<Value> set_;
  std::vector<double> cdf_;
  std::size_t last_positive_ = 0;
};

}  // namespace nsmc
