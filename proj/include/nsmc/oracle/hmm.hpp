#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsmc/log_weight.hpp"

namespace nsmc::oracle {

/// Discrete hidden Markov model: row-stochastic transition and emission
/// matrices plus an initial distribution.
struct Hmm {
  std::vector<std::vector<double>> transition;  // S x S
  std::vector<std::vector<double>> emission;    // S x O
  std::vector<double> init;                     // S

  int num_states() const { return static_cast<int>(init.size()); }
};

struct HmmForwardResult {
  std::vector<std::vector<double>> filter;   // per step: P(x_k = s | y_{0:k})
  std::vector<double> log_likelihood_trace;  // cumulative log p(y_{0:k})
  double log_likelihood = 0.0;
};

namespace detail {

inline void require_stochastic(std::span<const double> row, const char* what) {
  double s = 0.0;
  for (double p : row) {
    if (p < 0.0 || std::isnan(p))
      throw std::invalid_argument(std::string(what) + ": negative entry");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-12)
    throw std::invalid_argument(std::string(what) + ": rows must sum to 1 within 1e-12");
}

}  // namespace detail

/// Exact forward recursion in log space with arbitrary per-step observation
/// log-likelihood vectors (one entry per state); handles continuous
/// observation densities and time-varying likelihoods.
inline HmmForwardResult hmm_forward_loglik(const std::vector<std::vector<double>>& transition,
                                           const std::vector<double>& init,
                                           const std::vector<std::vector<double>>& log_obs_lik) {
  const int S = static_cast<int>(init.size());
  if (S < 1) throw std::invalid_argument("hmm_forward: empty model");
  detail::require_stochastic(init, "init");
  for (const auto& row : transition) detail::require_stochastic(row, "transition");

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  HmmForwardResult out;
  std::vector<double> log_alpha(S, kNegInf), next(S, kNegInf);
  std::vector<LogWeight> terms(S), col(S);
  double log_like = 0.0;

  for (std::size_t k = 0; k < log_obs_lik.size(); ++k) {
    for (int s = 0; s < S; ++s) {
      double pred;
      if (k == 0) {
        pred = std::log(init[s]);
      } else {
        for (int sp = 0; sp < S; ++sp)
          terms[sp] = LogWeight::from_linear(transition[sp][s]) *
                      LogWeight::from_log(log_alpha[sp]);
        pred = log_sum_exp(terms).log();
      }
      next[s] = pred + log_obs_lik[k][s];
    }
    for (int s = 0; s < S; ++s)
      col[s] = next[s] == kNegInf ? LogWeight::zero() : LogWeight::from_log(next[s]);
    const double step_norm = log_sum_exp(col).log();
    if (step_norm == kNegInf)
      throw std::invalid_argument("hmm_forward: observation has zero likelihood at step " +
                                  std::to_string(static_cast<int>(k)));
    log_like += step_norm;
    out.log_likelihood_trace.push_back(log_like);
    std::vector<double> filt(S);
    for (int s = 0; s < S; ++s) {
      filt[s] = std::exp(next[s] - step_norm);
      log_alpha[s] = next[s] - step_norm;  // keep alphas normalized
    }
    out.filter.push_back(std::move(filt));
  }
  out.log_likelihood = log_like;
  return out;
}

/// Exact forward recursion for a discrete-observation model.
inline HmmForwardResult hmm_forward(const Hmm& model, std::span<const int> observations) {
  const int S = model.num_states();
  if (S < 1) throw std::invalid_argument("hmm_forward: empty model");
  for (const auto& row : model.emission) detail::require_stochastic(row, "emission");
  std::vector<std::vector<double>> loglik(observations.size(), std::vector<double>(S));
  for (std::size_t k = 0; k < observations.size(); ++k)
    for (int s = 0; s < S; ++s) {
      const double p = model.emission[s][observations[k]];
      loglik[k][s] = p <= 0.0 ? -std::numeric_limits<double>::infinity() : std::log(p);
    }
  return hmm_forward_loglik(model.transition, model.init, loglik);
}

}  // namespace nsmc::oracle
