#pragma once

#include <Eigen/Dense>

#include <complex>
#include <numbers>
#include <string>

namespace koopman {

using Index = Eigen::Index;
using Complex = std::complex<double>;

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr double pi = std::numbers::pi;

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

/// Wrap an angle to the half-open interval (-pi, pi].
inline double wrap_phase(double theta) {
  double t = std::remainder(theta, 2.0 * pi);
  if (t <= -pi) t += 2.0 * pi;
  return t;
}

/// Wrap an angle to [0, 2*pi).
inline double wrap_two_pi(double theta) {
  double t = std::fmod(theta, 2.0 * pi);
  if (t < 0.0) t += 2.0 * pi;
  return t;
}

}  // namespace koopman
