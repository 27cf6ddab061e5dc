#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace handfit {

// N×3 point sets are row-major so a point cloud maps onto a flat 3N vector.
template <typename T>
using Points = Eigen::Matrix<T, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using Vector3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Matrix3 = Eigen::Matrix<T, 3, 3>;

using PointsD = Points<double>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;

template <typename T>
inline Eigen::Map<const VectorX<T>> flatten(const Points<T>& p) {
  return {p.data(), p.size()};
}

template <typename T>
inline Eigen::Map<VectorX<T>> flatten(Points<T>& p) {
  return {p.data(), p.size()};
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Array shapes disagree with the model or with each other.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A model, regressor or fusion spec violates one of its structural invariants.
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite objective or diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace handfit
