#pragma once

#include <cmath>
#include <compare>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace nsmc {

/// A nonnegative weight stored on the log scale. -inf encodes an exact zero.
/// The stored value is never NaN and never +inf; every operation below
/// preserves that.
class LogWeight {
public:
  /// Default-constructed weight is zero.
  constexpr LogWeight() : log_(-std::numeric_limits<double>::infinity()) {}

  static LogWeight from_log(double log_value) {
    if (std::isnan(log_value)) throw std::invalid_argument("LogWeight: NaN log value");
    if (log_value == std::numeric_limits<double>::infinity())
      throw std::invalid_argument("LogWeight: +inf log value");
    LogWeight w;
    w.log_ = log_value;
    return w;
  }

  static LogWeight from_linear(double value) {
    if (std::isnan(value) || value < 0.0)
      throw std::invalid_argument("LogWeight: weight must be nonnegative");
    LogWeight w;
    w.log_ = std::log(value);  // log(0) == -inf
    return w;
  }

  static constexpr LogWeight zero() { return LogWeight{}; }
  static LogWeight one() { return from_log(0.0); }

  double log() const { return log_; }
  double linear() const { return std::exp(log_); }
  bool is_zero() const { return log_ == -std::numeric_limits<double>::infinity(); }

  LogWeight operator*(LogWeight o) const {
    if (is_zero() || o.is_zero()) return zero();
    return from_log(log_ + o.log_);
  }
  LogWeight& operator*=(LogWeight o) { return *this = *this * o; }

  LogWeight operator/(LogWeight o) const {
    if (o.is_zero()) throw std::domain_error("LogWeight: division by zero weight");
    if (is_zero()) return zero();
    return from_log(log_ - o.log_);
  }

  auto operator<=>(const LogWeight&) const = default;

private:
  double log_;
};

/// log(sum(exp(v_i))) with max-subtraction; -inf iff every input is zero.
inline LogWeight log_sum_exp(std::span<const LogWeight> values) {
  if (values.empty()) throw std::invalid_argument("empty weight set");
  double m = -std::numeric_limits<double>::infinity();
  for (LogWeight v : values) m = std::max(m, v.log());
  if (m == -std::numeric_limits<double>::infinity()) return LogWeight::zero();
  double s = 0.0;
  for (LogWeight v : values) s += std::exp(v.log() - m);
  return LogWeight::from_log(m + std::log(s));
}

inline LogWeight log_sum_exp(const std::vector<LogWeight>& values) {
  return log_sum_exp(std::span<const LogWeight>(values));
}

inline LogWeight log_sum_exp(std::initializer_list<LogWeight> values) {
  return log_sum_exp(std::span<const LogWeight>(values.begin(), values.size()));
}

}  // namespace nsmc
