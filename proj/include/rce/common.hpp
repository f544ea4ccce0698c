#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace rce {

// Error taxonomy. Everything the library throws derives from std::exception
// through one of these, so callers can distinguish caller bugs (DimensionError,
// DomainError, ContractError, ConfigError) from runtime conditions
// (NumericError, IoError, PlannerError).

// Shape mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input value outside the mathematical domain of an operation.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. asking for gradients that were never computed.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid configuration value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite value produced where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File corrupt, truncated, or unreadable.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trajectory optimization could not make progress.
class PlannerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kPi = 3.14159265358979323846;

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Numerically stable log(1 + exp(x)).
inline double stable_softplus(double x) {
  return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

// Numerically stable logistic function.
inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace rce
