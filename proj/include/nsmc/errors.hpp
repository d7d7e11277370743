#pragma once

#include <stdexcept>
#include <string>

namespace nsmc {

/// Raised when a weight set that must carry mass is entirely zero
/// (all-zero weights signal a model/proposal mismatch the caller must see).
class DegeneracyError : public std::runtime_error {
public:
  explicit DegeneracyError(std::string msg, int step = -1)
      : std::runtime_error(std::move(msg)), step_(step) {}
  int step() const { return step_; }

private:
  int step_;
};

/// Raised when a proposal density evaluates to zero (or NaN) at one of its
/// own simulated points.
class InvalidProposalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Wraps a failure thrown while constructing an inner sampler, carrying the
/// (step, particle) coordinates where it happened.
class SamplerBuildError : public std::runtime_error {
public:
  SamplerBuildError(int step, int particle, const std::string& what)
      : std::runtime_error("sampler construction failed at step " + std::to_string(step) +
                           ", particle " + std::to_string(particle) + ": " + what),
        step_(step), particle_(particle) {}
  int step() const { return step_; }
  int particle() const { return particle_; }

private:
  int step_;
  int particle_;
};

/// Invalid experiment configuration (bad flag value, missing seed, ...).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// An exact oracle was requested outside its feasible regime.
class OracleInfeasibleError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace nsmc
