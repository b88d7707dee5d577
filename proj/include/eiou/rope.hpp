#pragma once

#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "eiou/common.hpp"

namespace eiou {

// Rotates each pair (v[2t], v[2t+1]) by pos * base^(-2t/d). A negative pos
// applies the transpose (inverse) rotation.
inline void rope_rotate_inplace(std::span<double> v, double pos,
                                double base = constants::kDefaultRopeBase) {
  const std::size_t d = v.size();
  if (d % 2 != 0) throw Error("rotary dimension must be even, got " + std::to_string(d));
  for (std::size_t t = 0; t < d / 2; ++t) {
    const double theta = pos * std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(d));
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    const double x = v[2 * t];
    const double y = v[2 * t + 1];
    v[2 * t] = x * c - y * s;
    v[2 * t + 1] = x * s + y * c;
  }
}

inline Eigen::VectorXd rope_rotate(const Eigen::VectorXd& v, double pos,
                                   double base = constants::kDefaultRopeBase) {
  Eigen::VectorXd out = v;
  rope_rotate_inplace(std::span<double>(out.data(), static_cast<std::size_t>(out.size())), pos, base);
  return out;
}

}  // namespace eiou
