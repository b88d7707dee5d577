#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace eiou {

// Error categories. The CLI maps them onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or arguments (exit 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable, unwritable or malformed files (exit 3).
class IoError : public Error {
 public:
  using Error::Error;
};

// Numerical guards, kept in one place.
namespace constants {
inline constexpr double kMassEpsilon = 1e-12;     // minimum soft-box mass
inline constexpr double kAspectEpsilon = 1e-9;    // v and 1-IoU both below => aspect term 0
inline constexpr double kRelErrorFloor = 1e-8;    // denominator floor for relative errors
inline constexpr double kAspectScale = 4.0 / (std::numbers::pi * std::numbers::pi);
inline constexpr double kDefaultRopeBase = 10000.0;
}  // namespace constants

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// softplus(t) = ln(1 + e^t), evaluated as max(t,0) + ln(1 + e^{-|t|}).
inline double softplus(double t) {
  if (t == -std::numeric_limits<double>::infinity()) return 0.0;
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

inline double relative_error(double analytic, double numeric) {
  const double denom =
      std::max({std::abs(analytic), std::abs(numeric), constants::kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace eiou
