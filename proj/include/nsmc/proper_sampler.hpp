#pragma once

#include <concepts>
#include <functional>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "nsmc/log_weight.hpp"
#include "nsmc/rng.hpp"

namespace nsmc {

/// A draw bundled with the weight that makes it properly weighted for the
/// density it was produced for: E[weight * f(value)] estimates the
/// unnormalized integral of f. The guarantee is statistical (suite-level),
/// not per-instance.
template <typename Value>
struct ProperSample {
  Value value;
  LogWeight weight;
};

/// The properly-weighted-sampler contract. log_z() is fixed at construction
/// and is a nonnegative unbiased estimate of the normalizing constant of the
/// density the sampler was built for; (simulate(rng), log_z()) is properly
/// weighted for that density. Internal state stays private to the sampler.
template <typename S, typename State>
concept ProperSamplerFor = requires(const S& s, RngStream& rng) {
  { s.log_z() } -> std::convertible_to<LogWeight>;
  { s.simulate(rng) } -> std::convertible_to<State>;
};

/// Factory for plain (non-sequential) targets: callable as
/// f(precision, rng) -> sampler.
template <typename F, typename Value>
concept SamplerFactoryFor =
    std::invocable<const F&, int, RngStream> &&
    ProperSamplerFor<std::invoke_result_t<const F&, int, RngStream>, Value>;

/// Per-step factory for sequential targets: callable as
/// f(step, prefix, precision, rng) -> sampler for q_step(. | prefix).
template <typename F, typename State>
concept StepSamplerFactoryFor =
    std::invocable<const F&, int, std::span<const State>, int, RngStream> &&
    ProperSamplerFor<std::invoke_result_t<const F&, int, std::span<const State>, int, RngStream>,
                     State>;

/// Sampler with an exactly known normalizing constant and an exact draw
/// function; the degenerate case of the contract (precision is irrelevant).
template <typename Value, typename DrawFn>
class ExactSampler {
public:
  ExactSampler(LogWeight log_z, DrawFn draw) : log_z_(log_z), draw_(std::move(draw)) {}
  LogWeight log_z() const { return log_z_; }
  Value simulate(RngStream& rng) const { return draw_(rng); }

private:
  LogWeight log_z_;
  DrawFn draw_;
};

template <typename Value, typename DrawFn>
ExactSampler<Value, std::decay_t<DrawFn>> make_exact_sampler(LogWeight log_z, DrawFn&& draw) {
  return {log_z, std::forward<DrawFn>(draw)};
}

/// Wraps a sampler so that simulate() output is passed through a mapping
/// (used to assemble an inner trajectory into the outer state type).
template <typename Inner, typename MapFn>
class MappedSampler {
public:
  MappedSampler(Inner inner, MapFn map) : inner_(std::move(inner)), map_(std::move(map)) {}
  LogWeight log_z() const { return inner_.log_z(); }
  auto simulate(RngStream& rng) const { return map_(inner_.simulate(rng)); }

private:
  Inner inner_;
  MapFn map_;
};

template <typename Inner, typename MapFn>
MappedSampler<std::decay_t<Inner>, std::decay_t<MapFn>> map_sampler(Inner&& inner, MapFn&& map) {
  return {std::forward<Inner>(inner), std::forward<MapFn>(map)};
}

}  // namespace nsmc
