#pragma once

// Forward-mode Taylor arithmetic in three variables. Jet1 carries value and
// gradient, Jet2 adds the Hessian. Only the operations the field formulas use
// are provided.

#include <Eigen/Dense>

#include <cmath>

namespace iontrap::detail {

struct Jet1 {
  double v = 0.0;
  Eigen::Vector3d g = Eigen::Vector3d::Zero();

  Jet1() = default;
  Jet1(double value) : v(value) {}  // NOLINT: constants promote implicitly
  Jet1(double value, const Eigen::Vector3d& grad) : v(value), g(grad) {}

  static Jet1 variable(double value, int axis) {
    Jet1 j(value);
    j.g[axis] = 1.0;
    return j;
  }

  // f(this) given f(v), f'(v)
  Jet1 chain(double f0, double f1) const { return {f0, f1 * g}; }
};

inline Jet1 operator+(const Jet1& a, const Jet1& b) { return {a.v + b.v, a.g + b.g}; }
inline Jet1 operator-(const Jet1& a, const Jet1& b) { return {a.v - b.v, a.g - b.g}; }
inline Jet1 operator-(const Jet1& a) { return {-a.v, -a.g}; }
inline Jet1 operator*(const Jet1& a, const Jet1& b) { return {a.v * b.v, a.g * b.v + b.g * a.v}; }
inline Jet1 operator*(double s, const Jet1& a) { return {s * a.v, s * a.g}; }
inline Jet1 operator*(const Jet1& a, double s) { return s * a; }
inline Jet1 operator/(const Jet1& a, const Jet1& b) {
  const double q = a.v / b.v;
  return {q, (a.g - q * b.g) / b.v};
}
inline Jet1 sqrt(const Jet1& a) {
  const double r = std::sqrt(a.v);
  return a.chain(r, 0.5 / r);
}

struct Jet2 {
  double v = 0.0;
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();

  Jet2() = default;
  Jet2(double value) : v(value) {}  // NOLINT
  Jet2(double value, const Eigen::Vector3d& grad, const Eigen::Matrix3d& hess) : v(value), g(grad), h(hess) {}

  static Jet2 variable(double value, int axis) {
    Jet2 j(value);
    j.g[axis] = 1.0;
    return j;
  }

  Jet2 chain(double f0, double f1, double f2) const {
    return {f0, f1 * g, f1 * h + f2 * (g * g.transpose())};
  }
};

inline Jet2 operator+(const Jet2& a, const Jet2& b) { return {a.v + b.v, a.g + b.g, a.h + b.h}; }
inline Jet2 operator-(const Jet2& a, const Jet2& b) { return {a.v - b.v, a.g - b.g, a.h - b.h}; }
inline Jet2 operator-(const Jet2& a) { return {-a.v, -a.g, -a.h}; }
inline Jet2 operator*(const Jet2& a, const Jet2& b) {
  const Eigen::Matrix3d cross = a.g * b.g.transpose();
  return {a.v * b.v, a.g * b.v + b.g * a.v, a.h * b.v + b.h * a.v + cross + cross.transpose()};
}
inline Jet2 operator*(double s, const Jet2& a) { return {s * a.v, s * a.g, s * a.h}; }
inline Jet2 operator*(const Jet2& a, double s) { return s * a; }
inline Jet2 reciprocal(const Jet2& a) {
  const double r = 1.0 / a.v;
  return a.chain(r, -r * r, 2.0 * r * r * r);
}
inline Jet2 operator/(const Jet2& a, const Jet2& b) { return a * reciprocal(b); }
inline Jet2 sqrt(const Jet2& a) {
  const double r = std::sqrt(a.v);
  return a.chain(r, 0.5 / r, -0.25 / (r * a.v));
}

inline double sqrt(double a) { return std::sqrt(a); }

}  // namespace iontrap::detail
