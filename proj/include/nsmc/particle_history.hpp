#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "nsmc/log_weight.hpp"

namespace nsmc {

/// Write-once-per-step record of a forward SMC run: per-step particle values,
/// ancestor indices, importance weights, the inner normalizing-constant
/// estimates and resampling weights per ancestor slot, and the cumulative
/// log Z trace. Full path prefixes are reachable through the ancestor chain
/// rather than stored as copies.
template <typename State>
class ParticleHistory {
public:
  ParticleHistory() : n_(0), num_particles_(0) {}
  ParticleHistory(int n_steps, int n_particles)
      : n_(n_steps),
        num_particles_(n_particles),
        values_(static_cast<std::size_t>(n_steps) * n_particles),
        ancestors_(static_cast<std::size_t>(n_steps) * n_particles, 0),
        log_weights_(static_cast<std::size_t>(n_steps) * n_particles, 0.0),
        inner_log_z_(static_cast<std::size_t>(n_steps) * n_particles),
        resample_weights_(static_cast<std::size_t>(n_steps) * n_particles),
        log_z_trace_(n_steps, 0.0) {}

  int num_steps() const { return n_; }
  int num_particles() const { return num_particles_; }

  const State& value(int step, int i) const { return values_[idx(step, i)]; }
  State& value(int step, int i) { return values_[idx(step, i)]; }

  std::int32_t ancestor(int step, int i) const { return ancestors_[idx(step, i)]; }
  std::int32_t& ancestor(int step, int i) { return ancestors_[idx(step, i)]; }

  double log_weight(int step, int i) const { return log_weights_[idx(step, i)]; }
  double& log_weight(int step, int i) { return log_weights_[idx(step, i)]; }

  /// Z_{q_step} estimates, indexed by ancestor slot j at step-1.
  std::span<const LogWeight> inner_log_z(int step) const {
    return {inner_log_z_.data() + idx(step, 0), static_cast<std::size_t>(num_particles_)};
  }
  std::span<LogWeight> inner_log_z(int step) {
    return {inner_log_z_.data() + idx(step, 0), static_cast<std::size_t>(num_particles_)};
  }

  /// The weights the multinomial resampling at `step` actually used.
  std::span<const LogWeight> resample_weights(int step) const {
    return {resample_weights_.data() + idx(step, 0), static_cast<std::size_t>(num_particles_)};
  }
  std::span<LogWeight> resample_weights(int step) {
    return {resample_weights_.data() + idx(step, 0), static_cast<std::size_t>(num_particles_)};
  }

  std::span<const double> log_weights(int step) const {
    return {log_weights_.data() + idx(step, 0), static_cast<std::size_t>(num_particles_)};
  }

  const std::vector<double>& log_z_trace() const { return log_z_trace_; }
  std::vector<double>& log_z_trace() { return log_z_trace_; }

  LogWeight final_log_z() const {
    if (n_ == 0) return LogWeight::one();
    return LogWeight::from_log(log_z_trace_.back());
  }

  /// Fill out[0..step] with the full prefix of particle i at `step`,
  /// following the ancestor chain. out must have size >= step+1.
  void assemble_prefix(int step, int i, std::span<State> out) const {
    int b = i;
    for (int s = step; s >= 0; --s) {
      out[s] = value(s, b);
      b = ancestor(s, b);
    }
  }

  std::vector<State> path(int step, int i) const {
    std::vector<State> out(step + 1);
    assemble_prefix(step, i, out);
    return out;
  }

private:
  std::size_t idx(int step, int i) const {
    return static_cast<std::size_t>(step) * num_particles_ + i;
  }

  int n_;
  int num_particles_;
  std::vector<State> values_;
  std::vector<std::int32_t> ancestors_;
  std::vector<double> log_weights_;
  std::vector<LogWeight> inner_log_z_;
  std::vector<LogWeight> resample_weights_;
  std::vector<double> log_z_trace_;
};

}  // namespace nsmc
