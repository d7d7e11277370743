#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nsmc/errors.hpp"
#include "nsmc/log_weight.hpp"
#include "nsmc/particle_history.hpp"
#include "nsmc/proper_sampler.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sampling.hpp"
#include "nsmc/sequential_target.hpp"

namespace nsmc {

// Stream layout within one step: split(0) resamples, split(1+j) constructs
// the sampler of ancestor j, split(1+N+i) drives the simulate call that fills
// offspring slot i. Splitting is position-independent, so the exact-proposal
// engine and the nested engine consume identical streams at identical points.
namespace detail {

inline RngStream resample_stream(RngStream& step) { return step.split(0); }
inline RngStream construct_stream(RngStream& step, int j) { return step.split(1 + j); }
inline RngStream offspring_stream(RngStream& step, int n, int i) {
  return step.split(1 + static_cast<std::uint64_t>(n) + i);
}

inline void require_some_mass(std::span<const LogWeight> w, int step) {
  for (LogWeight v : w)
    if (!v.is_zero()) return;
  throw DegeneracyError("full degeneracy at step " + std::to_string(step) +
                            ": all resampling weights zero",
                        step);
}

template <typename State>
void record_step(ParticleHistory<State>& h, int step, std::span<const LogWeight> inner_z,
                 std::span<const LogWeight> resample_w) {
  auto iz = h.inner_log_z(step);
  auto rw = h.resample_weights(step);
  for (int j = 0; j < h.num_particles(); ++j) {
    iz[j] = inner_z[j];
    rw[j] = resample_w[j];
  }
}

}  // namespace detail

/// Fully adapted SMC: resample on the exact per-prefix proposal normalizing
/// constants, propagate with exact draws from the optimal proposal; all
/// importance weights are identically one. The first-step resampling acts on
/// equal weights and is kept so the nested variant needs no special case.
template <typename Target, typename Proposal>
  requires SequentialTargetFor<Target> &&
           ExactProposalFor<Proposal, typename Target::State>
ParticleHistory<typename Target::State> run_fully_adapted_smc(const Target& target,
                                                              const Proposal& proposal,
                                                              int n_particles, RngStream rng) {
  using State = typename Target::State;
  const int n = target.horizon();
  if (n < 1 || n_particles < 1)
    throw std::invalid_argument("run_fully_adapted_smc: horizon and N must be >= 1");
  const int N = n_particles;

  ParticleHistory<State> history(n, N);
  std::vector<std::vector<State>> paths(N), next_paths(N);
  std::vector<LogWeight> z(N);
  double log_z = 0.0;

  for (int k = 0; k < n; ++k) {
    RngStream step = rng.split(k);
    for (int j = 0; j < N; ++j)
      z[j] = LogWeight::from_log(proposal.log_z(k, std::span<const State>(paths[j])));

    log_z += log_sum_exp(z).log() - std::log(static_cast<double>(N));
    history.log_z_trace()[k] = log_z;

    detail::require_some_mass(z, k);
    RngStream resample_rng = detail::resample_stream(step);
    const auto counts = resample_multinomial(resample_rng, z, N);

    int slot = 0;
    for (int j = 0; j < N; ++j) {
      for (std::uint32_t c = 0; c < counts[j]; ++c, ++slot) {
        RngStream sim = detail::offspring_stream(step, N, slot);
        State x = proposal.sample(k, std::span<const State>(paths[j]), sim);
        next_paths[slot] = paths[j];
        next_paths[slot].push_back(x);
        history.value(k, slot) = std::move(x);
        history.ancestor(k, slot) = j;
      }
    }
    detail::record_step(history, k, z, z);
    std::swap(paths, next_paths);
  }
  return history;
}

/// Nested SMC, fully adapted: one properly weighted sampler per ancestor
/// provides both the resampling weight (its normalizing-constant estimate)
/// and the offspring draws; samplers are destroyed after their offspring
/// block. With an exact factory this reproduces run_fully_adapted_smc
/// bit for bit.
template <typename Target, typename Factory>
  requires SequentialTargetFor<Target> &&
           StepSamplerFactoryFor<Factory, typename Target::State>
ParticleHistory<typename Target::State> run_nested_smc_fa(const Target& target,
                                                          const Factory& factory, int n_particles,
                                                          int precision, RngStream rng) {
  using State = typename Target::State;
  using Sampler = std::invoke_result_t<const Factory&, int, std::span<const State>, int, RngStream>;
  const int n = target.horizon();
  if (n < 1 || n_particles < 1 || precision < 1)
    throw std::invalid_argument("run_nested_smc_fa: horizon, N and M must be >= 1");
  const int N = n_particles;

  ParticleHistory<State> history(n, N);
  std::vector<std::vector<State>> paths(N), next_paths(N);
  std::vector<std::optional<Sampler>> samplers(N);
  std::vector<LogWeight> z(N);
  double log_z = 0.0;

  for (int k = 0; k < n; ++k) {
    RngStream step = rng.split(k);
    for (int j = 0; j < N; ++j) {
      try {
        samplers[j].emplace(factory(k, std::span<const State>(paths[j]), precision,
                                    detail::construct_stream(step, j)));
      } catch (const SamplerBuildError&) {
        throw;
      } catch (const std::exception& e) {
        throw SamplerBuildError(k, j, e.what());
      }
      z[j] = samplers[j]->log_z();
    }

    log_z += log_sum_exp(z).log() - std::log(static_cast<double>(N));
    history.log_z_trace()[k] = log_z;

    detail::require_some_mass(z, k);
    RngStream resample_rng = detail::resample_stream(step);
    const auto counts = resample_multinomial(resample_rng, z, N);

    int slot = 0;
    for (int j = 0; j < N; ++j) {
      for (std::uint32_t c = 0; c < counts[j]; ++c, ++slot) {
        RngStream sim = detail::offspring_stream(step, N, slot);
        State x = samplers[j]->simulate(sim);
        next_paths[slot] = paths[j];
        next_paths[slot].push_back(x);
        history.value(k, slot) = std::move(x);
        history.ancestor(k, slot) = j;
      }
      samplers[j].reset();
    }
    detail::record_step(history, k, z, z);
    std::swap(paths, next_paths);
  }
  return history;
}

/// Nested SMC in the general auxiliary formulation: arbitrary unnormalized
/// step proposals (available through properly weighted samplers), arbitrary
/// adjustment multipliers for the resampling weights, and explicit importance
/// weights
///   W_k = increment(x) * z_hat / (nu * q_k(x | prefix))
/// with the normalizing-constant update
///   Z_k = Z_{k-1} * mean(nu * W_{k-1}) * sum(W_k) / sum(W_{k-1}).
template <typename Target, typename Factory, typename QDensity, typename Adjust>
  requires SequentialTargetFor<Target> &&
           StepSamplerFactoryFor<Factory, typename Target::State> &&
           ProposalDensityFor<QDensity, typename Target::State> &&
           AdjustmentFor<Adjust, typename Target::State>
ParticleHistory<typename Target::State> run_nested_smc_aux(const Target& target,
                                                           const Factory& factory,
                                                           const QDensity& q_log_density,
                                                           const Adjust& nu, int n_particles,
                                                           int precision, RngStream rng) {
  using State = typename Target::State;
  using Sampler = std::invoke_result_t<const Factory&, int, std::span<const State>, int, RngStream>;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const int n = target.horizon();
  if (n < 1 || n_particles < 1 || precision < 1)
    throw std::invalid_argument("run_nested_smc_aux: horizon, N and M must be >= 1");
  const int N = n_particles;

  ParticleHistory<State> history(n, N);
  std::vector<std::vector<State>> paths(N), next_paths(N);
  std::vector<std::optional<Sampler>> samplers(N);
  std::vector<LogWeight> z(N), resample_w(N);
  std::vector<LogWeight> w_prev(N, LogWeight::one()), w_new(N);
  std::vector<State> path_buf;
  double log_z = 0.0;

  for (int k = 0; k < n; ++k) {
    RngStream step = rng.split(k);
    for (int j = 0; j < N; ++j) {
      std::span<const State> prefix(paths[j]);
      try {
        samplers[j].emplace(factory(k, prefix, precision, detail::construct_stream(step, j)));
      } catch (const SamplerBuildError&) {
        throw;
      } catch (const std::exception& e) {
        throw SamplerBuildError(k, j, e.what());
      }
      z[j] = samplers[j]->log_z();
      resample_w[j] = nu(k, prefix, z[j]) * w_prev[j];
    }

    detail::require_some_mass(resample_w, k);
    RngStream resample_rng = detail::resample_stream(step);
    const auto counts = resample_multinomial(resample_rng, resample_w, N);

    int slot = 0;
    for (int j = 0; j < N; ++j) {
      std::span<const State> prefix(paths[j]);
      const LogWeight nu_j = nu(k, prefix, z[j]);
      for (std::uint32_t c = 0; c < counts[j]; ++c, ++slot) {
        RngStream sim = detail::offspring_stream(step, N, slot);
        State x = samplers[j]->simulate(sim);

        const double lq = q_log_density(k, prefix, x);
        if (std::isnan(lq) || lq == kNegInf)
          throw InvalidProposalError("proposal density zero at own sample (step " +
                                     std::to_string(k) + ", particle " + std::to_string(slot) +
                                     ")");
        path_buf.assign(paths[j].begin(), paths[j].end());
        path_buf.push_back(x);
        const double inc = target.log_increment(k, std::span<const State>(path_buf));
        // grouped so the fully adapted choice (q = increment, nu = z) cancels
        // exactly instead of up to rounding
        w_new[slot] = (z[j].is_zero() || inc == kNegInf)
                          ? LogWeight::zero()
                          : LogWeight::from_log((inc - lq) + (z[j].log() - nu_j.log()));

        next_paths[slot] = std::move(path_buf);
        path_buf.clear();
        history.value(k, slot) = std::move(x);
        history.ancestor(k, slot) = j;
        history.log_weight(k, slot) = w_new[slot].log();
      }
      samplers[j].reset();
    }

    log_z += log_sum_exp(resample_w).log() - std::log(static_cast<double>(N));
    log_z += log_sum_exp(w_new).log() - log_sum_exp(w_prev).log();
    history.log_z_trace()[k] = log_z;
    if (log_z == kNegInf)
      throw DegeneracyError(
          "full degeneracy at step " + std::to_string(k) + ": all particle weights zero", k);

    detail::record_step(history, k, z, resample_w);
    std::swap(w_prev, w_new);
    std::swap(paths, next_paths);
  }
  return history;
}

/// Effective resample size of the resampling step at `step`:
/// (sum w)^2 / sum(w^2), in [1, N].
inline double ers(std::span<const LogWeight> weights) {
  detail::require_mass(weights, -1);
  double sum1 = log_sum_exp(weights).log();
  std::vector<LogWeight> sq(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i)
    sq[i] = weights[i] * weights[i];
  double sum2 = log_sum_exp(sq).log();
  return std::exp(2.0 * sum1 - sum2);
}

template <typename State>
double ers_of_step(const ParticleHistory<State>& history, int step) {
  return ers(history.resample_weights(step));
}

/// Factory adapter turning an exact step-proposal oracle into a (degenerate)
/// properly weighted sampler factory; the precision argument is ignored.
template <typename Proposal, typename State>
class ExactStepSampler {
public:
  ExactStepSampler(const Proposal* proposal, int step, std::vector<State> prefix, double log_z)
      : proposal_(proposal), step_(step), prefix_(std::move(prefix)), log_z_(log_z) {}
  LogWeight log_z() const { return LogWeight::from_log(log_z_); }
  State simulate(RngStream& rng) const {
    return proposal_->sample(step_, std::span<const State>(prefix_), rng);
  }

private:
  const Proposal* proposal_;
  int step_;
  std::vector<State> prefix_;
  double log_z_;
};

template <typename Proposal>
class ExactStepFactory {
public:
  using State = typename Proposal::State;
  explicit ExactStepFactory(Proposal proposal) : proposal_(std::move(proposal)) {}

  ExactStepSampler<Proposal, State> operator()(int step, std::span<const State> prefix, int,
                                               RngStream) const {
    return {&proposal_, step, std::vector<State>(prefix.begin(), prefix.end()),
            proposal_.log_z(step, prefix)};
  }

  const Proposal& proposal() const { return proposal_; }

private:
  Proposal proposal_;
};

}  // namespace nsmc
