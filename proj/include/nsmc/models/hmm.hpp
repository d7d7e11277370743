#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nsmc/log_weight.hpp"
#include "nsmc/nested_is.hpp"
#include "nsmc/oracle/hmm.hpp"
#include "nsmc/proper_sampler.hpp"
#include "nsmc/rng.hpp"
#include "nsmc/sampling.hpp"
#include "nsmc/sequential_target.hpp"

namespace nsmc::models {

/// A discrete HMM with a fixed observation sequence as a sequential target:
/// increment = transition times emission (initial distribution at step 0).
/// Small and fully tractable; the workhorse of the discrete test zoo.
class HmmTarget {
public:
  using State = int;

  HmmTarget(oracle::Hmm model, std::vector<int> observations)
      : model_(std::move(model)), obs_(std::move(observations)) {}

  int horizon() const { return static_cast<int>(obs_.size()); }
  int num_states() const { return model_.num_states(); }
  const oracle::Hmm& model() const { return model_; }
  const std::vector<int>& observations() const { return obs_; }

  double log_increment(int k, std::span<const int> path) const {
    const int x = path[k];
    const double trans = k == 0 ? model_.init[x] : model_.transition[path[k - 1]][x];
    const double em = model_.emission[x][obs_[k]];
    if (trans <= 0.0 || em <= 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(trans) + std::log(em);
  }

  double log_density(int k, std::span<const int> path) const {
    double s = 0.0;
    for (int j = 0; j <= k; ++j) {
      const double inc = log_increment(j, path);
      if (inc == -std::numeric_limits<double>::infinity()) return inc;
      s += inc;
    }
    return s;
  }

private:
  oracle::Hmm model_;
  std::vector<int> obs_;
};

/// Exact optimal proposal for the HMM: Z_q by summing the increment over the
/// finite state set, draws by categorical sampling.
class HmmOptimalProposal {
public:
  using State = int;

  explicit HmmOptimalProposal(const HmmTarget& target) : target_(&target) {}

  double log_z(int k, std::span<const int> prefix) const {
    return log_sum_exp(step_weights(k, prefix)).log();
  }

  int sample(int k, std::span<const int> prefix, RngStream& rng) const {
    return static_cast<int>(sample_categorical(rng, step_weights(k, prefix)));
  }

private:
  std::vector<LogWeight> step_weights(int k, std::span<const int> prefix) const {
    const int S = target_->num_states();
    std::vector<int> path(prefix.begin(), prefix.end());
    path.push_back(0);
    std::vector<LogWeight> w(S);
    for (int s = 0; s < S; ++s) {
      path[k] = s;
      const double inc = target_->log_increment(k, path);
      w[s] = inc == -std::numeric_limits<double>::infinity() ? LogWeight::zero()
                                                             : LogWeight::from_log(inc);
    }
    return w;
  }

  const HmmTarget* target_;
};

/// Bootstrap proposal: the transition prior row (initial distribution at
/// step 0), normalized, so Z_q = 1. Used with unit adjustment multipliers to
/// realize the plain bootstrap filter through the auxiliary engine.
class HmmPriorFactory {
public:
  explicit HmmPriorFactory(const HmmTarget& target) : target_(&target) {}

  auto operator()(int k, std::span<const int> prefix, int, RngStream) const {
    const auto& m = target_->model();
    std::vector<double> row = k == 0 ? m.init : m.transition[prefix[k - 1]];
    return make_exact_sampler<int>(LogWeight::one(), [row = std::move(row)](RngStream& rng) {
      std::vector<LogWeight> w(row.size());
      for (std::size_t s = 0; s < row.size(); ++s) w[s] = LogWeight::from_linear(row[s]);
      return static_cast<int>(sample_categorical(rng, w));
    });
  }

private:
  const HmmTarget* target_;
};

class HmmPriorDensity {
public:
  explicit HmmPriorDensity(const HmmTarget& target) : target_(&target) {}

  double operator()(int k, std::span<const int> prefix, const int& x) const {
    const auto& m = target_->model();
    const double p = k == 0 ? m.init[x] : m.transition[prefix[k - 1]][x];
    return p <= 0.0 ? -std::numeric_limits<double>::infinity() : std::log(p);
  }

private:
  const HmmTarget* target_;
};

/// Properly weighted (but inexact) step factory: a nested-IS sampler with
/// `precision` prior draws reweighted to the optimal step proposal. Exercises
/// the full nested pipeline on a model where every oracle is available.
class HmmNestedIsFactory {
public:
  explicit HmmNestedIsFactory(const HmmTarget& target) : target_(&target) {}

  NestedIsSampler<int> operator()(int k, std::span<const int> prefix, int precision,
                                  RngStream rng) const {
    const auto& m = target_->model();
    std::vector<int> path(prefix.begin(), prefix.end());
    path.push_back(0);
    auto log_pi = [this, k, path](int x) mutable {
      path[k] = x;
      return target_->log_increment(k, path);
    };
    const std::vector<double>& row = k == 0 ? m.init : m.transition[prefix[k - 1]];
    auto log_q = [row](int x) {
      return row[x] <= 0.0 ? -std::numeric_limits<double>::infinity() : std::log(row[x]);
    };
    auto prior_factory = [&row](int, RngStream) {
      return make_exact_sampler<int>(LogWeight::one(), [row](RngStream& r) {
        std::vector<LogWeight> w(row.size());
        for (std::size_t s = 0; s < row.size(); ++s) w[s] = LogWeight::from_linear(row[s]);
        return static_cast<int>(sample_categorical(r, w));
      });
    };
    return NestedIsSampler<int>::make(log_pi, log_q, prior_factory, precision, 1, rng);
  }

private:
  const HmmTarget* target_;
};

/// The fixed 2-state reference model used across the test suite.
inline oracle::Hmm default_test_hmm() {
  oracle::Hmm m;
  m.transition = {{0.7, 0.3}, {0.2, 0.8}};
  m.emission = {{0.8, 0.1, 0.1}, {0.15, 0.25, 0.6}};
  m.init = {0.6, 0.4};
  return m;
}

}  // namespace nsmc::models
