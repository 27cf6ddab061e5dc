#pragma once

// Forward-mode dual numbers carrying a single tangent. Used as an independent
// gradient route next to the hand-written adjoints.

#include <cmath>
#include <ostream>

#include <Eigen/Core>

namespace handfit {

template <typename T>
struct Dual {
  T val{};
  T eps{};

  constexpr Dual() = default;
  constexpr Dual(T v) : val(v) {}  // NOLINT: implicit lift of constants
  constexpr Dual(T v, T d) : val(v), eps(d) {}

  constexpr Dual& operator+=(const Dual& o) {
    val += o.val;
    eps += o.eps;
    return *this;
  }
  constexpr Dual& operator-=(const Dual& o) {
    val -= o.val;
    eps -= o.eps;
    return *this;
  }
  constexpr Dual& operator*=(const Dual& o) {
    eps = eps * o.val + val * o.eps;
    val *= o.val;
    return *this;
  }
  constexpr Dual& operator/=(const Dual& o) {
    const T inv = T(1) / o.val;
    eps = (eps - val * inv * o.eps) * inv;
    val *= inv;
    return *this;
  }
};

template <typename T>
constexpr Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T>
constexpr Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T>
constexpr Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T>
constexpr Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <typename T>
constexpr Dual<T> operator-(const Dual<T>& a) { return {-a.val, -a.eps}; }
template <typename T>
constexpr Dual<T> operator+(const Dual<T>& a) { return a; }

template <typename T>
constexpr Dual<T> operator+(Dual<T> a, T b) { a.val += b; return a; }
template <typename T>
constexpr Dual<T> operator+(T a, Dual<T> b) { b.val += a; return b; }
template <typename T>
constexpr Dual<T> operator-(Dual<T> a, T b) { a.val -= b; return a; }
template <typename T>
constexpr Dual<T> operator-(T a, const Dual<T>& b) { return {a - b.val, -b.eps}; }
template <typename T>
constexpr Dual<T> operator*(const Dual<T>& a, T b) { return {a.val * b, a.eps * b}; }
template <typename T>
constexpr Dual<T> operator*(T a, const Dual<T>& b) { return {a * b.val, a * b.eps}; }
template <typename T>
constexpr Dual<T> operator/(const Dual<T>& a, T b) { return {a.val / b, a.eps / b}; }
template <typename T>
constexpr Dual<T> operator/(T a, const Dual<T>& b) { return Dual<T>(a) / b; }

template <typename T>
constexpr bool operator==(const Dual<T>& a, const Dual<T>& b) { return a.val == b.val; }
template <typename T>
constexpr bool operator!=(const Dual<T>& a, const Dual<T>& b) { return a.val != b.val; }
template <typename T>
constexpr bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.val < b.val; }
template <typename T>
constexpr bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.val > b.val; }
template <typename T>
constexpr bool operator<=(const Dual<T>& a, const Dual<T>& b) { return a.val <= b.val; }
template <typename T>
constexpr bool operator>=(const Dual<T>& a, const Dual<T>& b) { return a.val >= b.val; }

template <typename T>
Dual<T> sqrt(const Dual<T>& a) {
  const T s = std::sqrt(a.val);
  return {s, a.eps / (T(2) * s)};
}
template <typename T>
Dual<T> sin(const Dual<T>& a) { return {std::sin(a.val), a.eps * std::cos(a.val)}; }
template <typename T>
Dual<T> cos(const Dual<T>& a) { return {std::cos(a.val), -a.eps * std::sin(a.val)}; }
template <typename T>
Dual<T> abs(const Dual<T>& a) { return a.val < T(0) ? -a : a; }
template <typename T>
Dual<T> exp(const Dual<T>& a) {
  const T e = std::exp(a.val);
  return {e, a.eps * e};
}
template <typename T>
Dual<T> log(const Dual<T>& a) { return {std::log(a.val), a.eps / a.val}; }
template <typename T>
bool isfinite(const Dual<T>& a) { return std::isfinite(a.val) && std::isfinite(a.eps); }

template <typename T>
std::ostream& operator<<(std::ostream& os, const Dual<T>& a) {
  return os << a.val << "+" << a.eps << "e";
}

// Strips the tangent; identity on plain scalars.
inline double value_of(double x) { return x; }
template <typename T>
T value_of(const Dual<T>& x) { return x.val; }

}  // namespace handfit

namespace Eigen {

template <typename T>
struct NumTraits<handfit::Dual<T>> : GenericNumTraits<handfit::Dual<T>> {
  using Real = handfit::Dual<T>;
  using NonInteger = handfit::Dual<T>;
  using Nested = handfit::Dual<T>;
  using Literal = handfit::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2,
    AddCost = 2,
    MulCost = 4
  };
  static inline Real epsilon() { return Real(NumTraits<T>::epsilon()); }
  static inline Real dummy_precision() { return Real(NumTraits<T>::dummy_precision()); }
  static inline int digits10() { return NumTraits<T>::digits10(); }
};

template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<T, handfit::Dual<T>, BinaryOp> {
  using ReturnType = handfit::Dual<T>;
};

template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<handfit::Dual<T>, T, BinaryOp> {
  using ReturnType = handfit::Dual<T>;
};

}  // namespace Eigen
