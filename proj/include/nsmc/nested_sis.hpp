#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nsmc/errors.hpp"
#include "nsmc/log_weight.hpp"
#include "nsmc/nested_is.hpp"
#include "nsmc/proper_sampler.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sequential_target.hpp"

namespace nsmc {

/// Output of a nested sequential importance sampling run: N full trajectories
/// with their final weights, the evidence estimate, and the per-step weight /
/// inner-z traces.
template <typename State>
struct SisState {
  std::vector<std::vector<State>> trajectories;       // N trajectories of length n
  std::vector<LogWeight> log_weights;                 // final weights W_n
  LogWeight log_z;                                    // log mean final weight
  std::vector<std::vector<double>> step_log_weights;  // n x N
  std::vector<std::vector<double>> inner_log_z;       // n x N
};

/// Sequential importance sampling with properly weighted step proposals and
/// no resampling:
///   W_k = W_{k-1} * z_hat_k * increment(x_k) / q_k(x_k | prefix).
/// Trajectories are fully independent. Kept mainly as the bridge to the
/// IS-squared construction; weight degeneracy rules it out for long horizons.
template <typename Target, typename QDensity, typename Factory>
  requires SequentialTargetFor<Target> &&
           StepSamplerFactoryFor<Factory, typename Target::State> &&
           ProposalDensityFor<QDensity, typename Target::State>
SisState<typename Target::State> run_nested_sis(const Target& target,
                                                const QDensity& q_log_density,
                                                const Factory& factory, int n_trajectories,
                                                int precision, RngStream rng) {
  using State = typename Target::State;
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const int n = target.horizon();
  if (n < 1 || n_trajectories < 1 || precision < 1)
    throw std::invalid_argument("run_nested_sis: horizon, N and M must be >= 1");
  const int N = n_trajectories;

  SisState<State> out;
  out.trajectories.assign(N, {});
  out.log_weights.assign(N, LogWeight::one());
  out.step_log_weights.assign(n, std::vector<double>(N));
  out.inner_log_z.assign(n, std::vector<double>(N));

  for (int i = 0; i < N; ++i) {
    RngStream item = rng.split(i);
    std::vector<State>& path = out.trajectories[i];
    path.reserve(n);
    LogWeight w = LogWeight::one();
    for (int k = 0; k < n; ++k) {
      std::span<const State> prefix(path);
      RngStream construct = item.split(2 * k);
      RngStream simulate = item.split(2 * k + 1);
      auto sampler = [&] {
        try {
          return factory(k, prefix, precision, construct);
        } catch (const std::exception& e) {
          throw SamplerBuildError(k, i, e.what());
        }
      }();
      const LogWeight z = sampler.log_z();
      out.inner_log_z[k][i] = z.log();
      State x = sampler.simulate(simulate);
      const double lq = q_log_density(k, prefix, x);
      if (std::isnan(lq) || lq == kNegInf)
        throw InvalidProposalError("proposal density zero at own sample (step " +
                                   std::to_string(k) + ", trajectory " + std::to_string(i) + ")");
      path.push_back(std::move(x));
      const double inc = target.log_increment(k, std::span<const State>(path));
      w = (w.is_zero() || z.is_zero() || inc == kNegInf)
              ? LogWeight::zero()
              : LogWeight::from_log(w.log() + z.log() + inc - lq);
      out.step_log_weights[k][i] = w.log();
    }
    out.log_weights[i] = w;
  }
  out.log_z = LogWeight::from_log(log_sum_exp(out.log_weights).log() -
                                  std::log(static_cast<double>(N)));
  return out;
}

/// Problem statement for importance sampling squared over a scalar parameter
/// with a scalar latent variable: prior and parameter proposal over theta,
/// latent proposal h(x | y, theta), and the joint likelihood term
/// p(y | x, theta) p(x | theta) with the observation baked in.
struct IsSquaredSpec {
  std::function<double(double)> log_prior;                 // log p(theta)
  std::function<double(double)> log_param_proposal;        // log g(theta), normalized
  std::function<double(RngStream&)> sample_param;          // draw theta ~ g
  std::function<double(double, double)> log_joint;         // log p(y|x,theta) p(x|theta)
  std::function<double(double, double)> log_latent_proposal;  // log h(x | y, theta)
  std::function<double(double, RngStream&)> sample_latent;    // draw x ~ h(. | y, theta)
};

namespace detail {

// Two-step chain: step 0 is theta with increment log p(theta), step 1 is the
// latent x with increment log p(y|x,theta) p(x|theta).
struct IsSquaredTarget {
  using State = double;
  const IsSquaredSpec* spec;
  int horizon() const { return 2; }
  double log_increment(int k, std::span<const double> path) const {
    return k == 0 ? spec->log_prior(path[0]) : spec->log_joint(path[1], path[0]);
  }
  double log_density(int k, std::span<const double> path) const {
    double s = 0.0;
    for (int j = 0; j <= k; ++j) s += log_increment(j, path);
    return s;
  }
};

}  // namespace detail

/// IS-squared realized as a two-step nested SIS run: an exact sampler for the
/// parameter proposal at step 0 (unit normalizing constant), and a nested-IS
/// sampler with M latent draws from h at step 1, whose z estimate is the
/// likelihood estimate p_hat_M(y | theta). Final weights are
/// p_hat_M(y | theta) p(theta) / g(theta), attached to the step-0 values.
inline SisState<double> is_squared(const IsSquaredSpec& spec, int n_params, int n_latent,
                                   RngStream rng) {
  detail::IsSquaredTarget target{&spec};

  auto q_log_density = [&spec](int k, std::span<const double> prefix, const double& x) {
    return k == 0 ? spec.log_param_proposal(x) : spec.log_joint(x, prefix[0]);
  };

  auto factory = [&spec](int k, std::span<const double> prefix, int precision, RngStream r) {
    using IsSampler = NestedIsSampler<double>;
    if (k == 0) {
      // exact sampler for the normalized parameter proposal, wrapped as a
      // one-point weighted set so both steps expose the same sampler type
      WeightedSet<double> set;
      set.values.push_back(spec.sample_param(r));
      set.log_weights.push_back(LogWeight::one());
      set.log_z = LogWeight::one();
      return IsSampler(std::move(set));
    }
    const double theta = prefix[0];
    auto h_factory = [&spec, theta](int, RngStream) {
      return make_exact_sampler<double>(
          LogWeight::one(), [&spec, theta](RngStream& s) { return spec.sample_latent(theta, s); });
    };
    return IsSampler::make([&spec, theta](double x) { return spec.log_joint(x, theta); },
                           [&spec, theta](double x) { return spec.log_latent_proposal(x, theta); },
                           h_factory, precision, 1, r);
  };

  return run_nested_sis(target, q_log_density, factory, n_params, n_latent, rng);
}

}  // namespace nsmc
