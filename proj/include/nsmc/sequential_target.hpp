#pragma once

#include <concepts>
#include <span>

#include "nsmc/rng.hpp"

namespace nsmc {

/// Evaluator of a sequence of unnormalized densities over growing paths.
/// Steps are 0-based: log_density(k, path) is the log unnormalized density of
/// x_{0:k} (path spans at least k+1 states), and log_increment(k, path) is
/// log_density(k, .) - log_density(k-1, .), with the empty-path density
/// defined as 1.
template <typename T>
concept SequentialTargetFor = requires(const T& t, int k,
                                       std::span<const typename T::State> path) {
  typename T::State;
  { t.horizon() } -> std::convertible_to<int>;
  { t.log_density(k, path) } -> std::convertible_to<double>;
  { t.log_increment(k, path) } -> std::convertible_to<double>;
};

/// Step-wise oracle for the optimal proposal q_k = increment of the target:
/// exact normalizing constant given the prefix, and exact draws from the
/// normalized proposal. Only available for targets with tractable steps.
template <typename P, typename State>
concept ExactProposalFor = requires(const P& p, int k, std::span<const State> prefix,
                                    RngStream& rng) {
  { p.log_z(k, prefix) } -> std::convertible_to<double>;
  { p.sample(k, prefix, rng) } -> std::convertible_to<State>;
};

/// Evaluator of an arbitrary unnormalized step proposal density
/// q_k(x | prefix), in log scale.
template <typename Q, typename State>
concept ProposalDensityFor = requires(const Q& q, int k, std::span<const State> prefix,
                                      const State& x) {
  { q(k, prefix, x) } -> std::convertible_to<double>;
};

/// Adjustment multiplier nu_k(prefix, z_hat) biasing the resampling weights;
/// repaid inside the importance weight.
template <typename Nu, typename State>
concept AdjustmentFor = requires(const Nu& nu, int k, std::span<const State> prefix,
                                 LogWeight z_hat) {
  { nu(k, prefix, z_hat) } -> std::convertible_to<LogWeight>;
};

/// The fully adapted choice: multiplier equal to the inner z estimate.
struct FullyAdaptedAdjustment {
  template <typename State>
  LogWeight operator()(int, std::span<const State>, LogWeight z_hat) const {
    return z_hat;
  }
};

/// Neutral multiplier (plain auxiliary weights).
struct UnitAdjustment {
  template <typename State>
  LogWeight operator()(int, std::span<const State>, LogWeight) const {
    return LogWeight::one();
  }
};

}  // namespace nsmc
