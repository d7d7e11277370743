#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nsmc/engine.hpp"
#include "nsmc/errors.hpp"
#include "nsmc/particle_history.hpp"
#include "nsmc/proper_sampler.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sampling.hpp"
#include "nsmc/sequential_target.hpp"

namespace nsmc {

/// A trajectory assembled from a particle history: one value per step plus
/// the particle index it was taken from.
template <typename State>
struct Trajectory {
  std::vector<State> values;
  std::vector<std::int32_t> source_indices;
};

namespace detail {

// Shared backward pass. The final index is categorical over the stored step-n
// weights (uniform for a fully adapted history); earlier indices use
//   w_j = [stored weight] * pi_n(prefix_j ++ tail) / pi_k(prefix_j),
// each ratio computed from two full log-density evaluations, no caching.
template <typename Target>
Trajectory<typename Target::State> backward_simulate_impl(
    const ParticleHistory<typename Target::State>& history, const Target& target, RngStream& rng,
    bool use_weights) {
  using State = typename Target::State;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const int n = history.num_steps();
  const int N = history.num_particles();
  if (n < 1) throw std::invalid_argument("backward_simulate: empty history");

  Trajectory<State> traj;
  traj.values.resize(n);
  traj.source_indices.resize(n);

  std::vector<LogWeight> w(N);
  for (int j = 0; j < N; ++j)
    w[j] = use_weights ? LogWeight::from_log(history.log_weight(n - 1, j)) : LogWeight::one();
  int b = static_cast<int>(sample_categorical(rng, w));
  traj.values[n - 1] = history.value(n - 1, b);
  traj.source_indices[n - 1] = b;

  std::vector<State> buf(n);
  buf[n - 1] = traj.values[n - 1];
  for (int k = n - 2; k >= 0; --k) {
    buf[k + 1] = traj.values[k + 1];
    for (int j = 0; j < N; ++j) {
      history.assemble_prefix(k, j, std::span<State>(buf.data(), k + 1));
      const double den = target.log_density(k, std::span<const State>(buf.data(), k + 1));
      double lw;
      if (den == kNegInf) {
        lw = kNegInf;
      } else {
        const double num = target.log_density(n - 1, std::span<const State>(buf));
        lw = num - den;
      }
      if (use_weights) lw += history.log_weight(k, j);
      w[j] = std::isnan(lw) || lw == kNegInf ? LogWeight::zero() : LogWeight::from_log(lw);
    }
    try {
      b = static_cast<int>(sample_categorical(rng, w));
    } catch (const DegeneracyError&) {
      throw DegeneracyError("backward degeneracy at step " + std::to_string(k), k);
    }
    traj.values[k] = history.value(k, b);
    traj.source_indices[k] = b;
  }
  return traj;
}

}  // namespace detail

/// Backward simulator for fully adapted histories (unit weights): the final
/// index is uniform, earlier indices are drawn from the smoothing weights.
template <typename Target>
  requires SequentialTargetFor<Target>
Trajectory<typename Target::State> backward_simulate_fa(
    const ParticleHistory<typename Target::State>& history, const Target& target, RngStream& rng) {
  return detail::backward_simulate_impl(history, target, rng, false);
}

/// Backward simulator for general weighted histories.
template <typename Target>
  requires SequentialTargetFor<Target>
Trajectory<typename Target::State> backward_simulate_weighted(
    const ParticleHistory<typename Target::State>& history, const Target& target, RngStream& rng) {
  return detail::backward_simulate_impl(history, target, rng, true);
}

/// A complete nested SMC run packaged as a properly weighted sampler for the
/// final target: the constructor runs the forward pass once and caches the
/// history; log_z() is the final normalizing-constant estimate; simulate()
/// backward-simulates a full trajectory from the cached history with fresh
/// randomness per call. This is the nesting mechanism: instances serve as the
/// step factory of an outer sampler.
///
/// Memory: the full history, O(n * N * sizeof(State)).
template <typename Target>
  requires SequentialTargetFor<Target>
class NsmcSampler {
public:
  using State = typename Target::State;

  template <typename Factory>
    requires StepSamplerFactoryFor<Factory, State>
  static NsmcSampler fully_adapted(Target target, const Factory& factory, int n_particles,
                                   int precision, RngStream rng) {
    auto history = run_nested_smc_fa(target, factory, n_particles, precision, rng);
    return NsmcSampler(std::move(target), std::move(history), false);
  }

  template <typename Factory, typename QDensity, typename Adjust>
  static NsmcSampler auxiliary(Target target, const Factory& factory,
                               const QDensity& q_log_density, const Adjust& nu, int n_particles,
                               int precision, RngStream rng) {
    auto history =
        run_nested_smc_aux(target, factory, q_log_density, nu, n_particles, precision, rng);
    return NsmcSampler(std::move(target), std::move(history), true);
  }

  NsmcSampler(Target target, ParticleHistory<State> history, bool weighted)
      : target_(std::move(target)), history_(std::move(history)), weighted_(weighted) {}

  LogWeight log_z() const { return history_.final_log_z(); }

  std::vector<State> simulate(RngStream& rng) const {
    auto traj = weighted_ ? backward_simulate_weighted(history_, target_, rng)
                          : backward_simulate_fa(history_, target_, rng);
    return std::move(traj.values);
  }

  /// The (trajectory, weight) pair of the proper-weighting contract.
  ProperSample<std::vector<State>> sample(RngStream& rng) const {
    return {simulate(rng), log_z()};
  }

  const ParticleHistory<State>& history() const { return history_; }
  const Target& target() const { return target_; }

private:
  Target target_;
  ParticleHistory<State> history_;
  bool weighted_;
};

}  // namespace nsmc
