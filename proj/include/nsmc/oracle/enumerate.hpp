#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsmc/errors.hpp"
#include "nsmc/log_weight.hpp"

namespace nsmc::oracle {

/// A finite-state chain given by unnormalized log potentials: log_init(x) for
/// the first step (emission included) and log_step(k, x_prev, x) for later
/// steps. Used to brute-force tiny discrete models, e.g. small drought grids
/// where a state enumerates the whole binary grid.
struct DiscreteChainModel {
  int num_states = 0;
  int horizon = 0;
  std::function<double(int)> log_init;
  std::function<double(int, int, int)> log_step;
};

struct EnumerateResult {
  std::vector<std::vector<double>> filter;   // per step: normalized P(x_k = s | ...)
  std::vector<double> log_evidence_trace;    // cumulative log of the summed potentials
  double log_evidence = 0.0;
};

/// Exact filtering and evidence by dense per-step transition application.
inline EnumerateResult enumerate_filter(const DiscreteChainModel& model, int max_states = 4096) {
  const int S = model.num_states;
  if (S < 1 || model.horizon < 1)
    throw std::invalid_argument("enumerate_filter: empty model");
  if (S > max_states)
    throw OracleInfeasibleError("enumeration infeasible: " + std::to_string(S) + " states exceeds " +
                                std::to_string(max_states));

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  EnumerateResult out;
  std::vector<double> log_alpha(S), next(S);
  double log_evidence = 0.0;

  for (int k = 0; k < model.horizon; ++k) {
    if (k == 0) {
      for (int s = 0; s < S; ++s) next[s] = model.log_init(s);
    } else {
      std::vector<LogWeight> terms(S);
      for (int s = 0; s < S; ++s) {
        for (int sp = 0; sp < S; ++sp) {
          const double t = model.log_step(k, sp, s);
          terms[sp] = (log_alpha[sp] == kNegInf || t == kNegInf)
                          ? LogWeight::zero()
                          : LogWeight::from_log(log_alpha[sp] + t);
        }
        next[s] = log_sum_exp(terms).log();
      }
    }
    std::vector<LogWeight> col(S);
    for (int s = 0; s < S; ++s)
      col[s] = next[s] == kNegInf ? LogWeight::zero() : LogWeight::from_log(next[s]);
    const double norm = log_sum_exp(col).log();
    if (norm == kNegInf)
      throw DegeneracyError("enumerate_filter: zero total mass at step " + std::to_string(k), k);
    log_evidence += norm;
    out.log_evidence_trace.push_back(log_evidence);
    std::vector<double> filt(S);
    for (int s = 0; s < S; ++s) {
      filt[s] = std::exp(next[s] - norm);
      log_alpha[s] = next[s] - norm;
    }
    out.filter.push_back(std::move(filt));
  }
  out.log_evidence = log_evidence;
  return out;
}

}  // namespace nsmc::oracle
