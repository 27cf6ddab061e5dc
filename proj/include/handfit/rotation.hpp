#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/Geometry>

#include "handfit/common.hpp"

namespace handfit {

// Below this angle the Rodrigues coefficients switch to their Taylor series.
inline constexpr double kSeriesAngle = 1e-2;

template <typename T>
Matrix3<T> skew(const Vector3<T>& v) {
  Matrix3<T> k;
  k << T(0), -v.z(), v.y(),
       v.z(), T(0), -v.x(),
       -v.y(), v.x(), T(0);
  return k;
}

// R = I + a·K + b·K², with a = sin θ / θ and b = (1 − cos θ) / θ².
template <typename T>
struct RodriguesCoeffs {
  T a;
  T b;
};

template <typename T>
RodriguesCoeffs<T> rodrigues_coeffs(const T& angle_sq) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (angle_sq < T(kSeriesAngle * kSeriesAngle)) {
    const T t2 = angle_sq;
    const T a = T(1) - t2 * (T(1.0 / 6) - t2 * (T(1.0 / 120) - t2 * T(1.0 / 5040)));
    const T b = T(0.5) - t2 * (T(1.0 / 24) - t2 * (T(1.0 / 720) - t2 * T(1.0 / 40320)));
    return {a, b};
  }
  const T angle = sqrt(angle_sq);
  return {sin(angle) / angle, (T(1) - cos(angle)) / angle_sq};
}

template <typename T>
Matrix3<T> rodrigues(const Vector3<T>& axis_angle) {
  const auto [a, b] = rodrigues_coeffs<T>(axis_angle.squaredNorm());
  const Matrix3<T> k = skew<T>(axis_angle);
  return Matrix3<T>::Identity() + a * k + b * (k * k);
}

// Rotation together with its partial derivatives w.r.t. the three axis-angle
// components. Plain doubles only; the dual path differentiates rodrigues().
struct RotationJacobian {
  Eigen::Matrix3d rotation;
  std::array<Eigen::Matrix3d, 3> partials;
};

inline RotationJacobian rodrigues_jacobian(const Eigen::Vector3d& w) {
  const double t2 = w.squaredNorm();
  double a, b, c, d;  // c = a'(θ)/θ, d = b'(θ)/θ
  if (t2 < kSeriesAngle * kSeriesAngle) {
    a = 1 - t2 * (1.0 / 6 - t2 * (1.0 / 120 - t2 / 5040));
    b = 0.5 - t2 * (1.0 / 24 - t2 * (1.0 / 720 - t2 / 40320));
    c = -1.0 / 3 + t2 * (1.0 / 30 - t2 * (1.0 / 840 - t2 / 45360));
    d = -1.0 / 12 + t2 * (1.0 / 180 - t2 * (1.0 / 6720 - t2 / 453600));
  } else {
    const double t = std::sqrt(t2);
    const double s = std::sin(t);
    const double co = std::cos(t);
    a = s / t;
    b = (1 - co) / t2;
    c = (t * co - s) / (t2 * t);
    d = (t * s - 2 * (1 - co)) / (t2 * t2);
  }
  const Eigen::Matrix3d k = skew<double>(w);
  const Eigen::Matrix3d k2 = k * k;
  RotationJacobian out;
  out.rotation = Eigen::Matrix3d::Identity() + a * k + b * k2;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Matrix3d e = skew<double>(Eigen::Vector3d::Unit(i));
    out.partials[i] = c * w[i] * k + a * e + d * w[i] * k2 + b * (e * k + k * e);
  }
  return out;
}

// Reduces the rotation angle below 2π while keeping the axis.
inline Eigen::Vector3d wrap_axis_angle(const Eigen::Vector3d& w) {
  constexpr double two_pi = 2 * std::numbers::pi;
  const double angle = w.norm();
  if (angle < two_pi) return w;
  const double wrapped = std::fmod(angle, two_pi);
  return w * (wrapped / angle);
}

inline Eigen::Vector3d log_rotation(const Eigen::Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

// Geodesic distance on SO(3), radians.
inline double geodesic_angle(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2) {
  const double c = std::clamp(((r1.transpose() * r2).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace handfit
