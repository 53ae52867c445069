#pragma once

// Gapless-plane electrostatics: an electrode held at 1 V in an otherwise
// grounded infinite plane produces phi(r) = Omega(r) / (2 pi), with Omega the
// signed solid angle its area subtends at r.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "iontrap/detail/jet.hpp"
#include "iontrap/error.hpp"
#include "iontrap/geometry.hpp"
#include "iontrap/layout.hpp"

namespace iontrap {

struct FieldSample {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
  Mat3 hessian = Mat3::Zero();

  FieldSample& operator+=(const FieldSample& o) {
    value += o.value;
    gradient += o.gradient;
    hessian += o.hessian;
    return *this;
  }
  FieldSample& operator*=(double s) {
    value *= s;
    gradient *= s;
    hessian *= s;
    return *this;
  }
};

inline FieldSample operator*(double s, FieldSample f) { return f *= s; }
inline FieldSample operator+(FieldSample a, const FieldSample& b) { return a += b; }

/// third[a](b, c) = d^3 phi / dx_a dx_b dx_c
using Tensor3 = std::array<Mat3, 3>;

namespace detail {

template <class T>
using V3 = std::array<T, 3>;

// Line integral of dl x (r - r') / |r - r'|^3 along the straight edge a -> b.
template <class T>
V3<T> edge_kernel(const V3<T>& r, const Vec2& a, const Vec2& b) {
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  const T ax = r[0] - a.x(), ay = r[1] - a.y();
  const T bx = r[0] - b.x(), by = r[1] - b.y();
  const T& z = r[2];
  const T z2 = z * z;
  const T na = sqrt(ax * ax + ay * ay + z2);
  const T nb = sqrt(bx * bx + by * by + z2);
  const T cz = dx * ay - dy * ax;
  const T cross2 = (dx * dx + dy * dy) * z2 + cz * cz;
  const T f = ((dx * ax + dy * ay) / na - (dx * bx + dy * by) / nb) / cross2;
  return {dy * z * f, -dx * z * f, cz * f};
}

inline double triangle_solid_angle(const Vec3& r, const std::array<Vec2, 3>& t) {
  const Vec3 a(t[0].x() - r.x(), t[0].y() - r.y(), -r.z());
  const Vec3 b(t[1].x() - r.x(), t[1].y() - r.y(), -r.z());
  const Vec3 c(t[2].x() - r.x(), t[2].y() - r.y(), -r.z());
  const double la = a.norm(), lb = b.norm(), lc = c.norm();
  const double num = a.dot(b.cross(c));
  const double den = la * lb * lc + a.dot(b) * lc + a.dot(c) * lb + b.dot(c) * la;
  return -2.0 * std::atan2(num, den);
}

inline void require_above_plane(const Vec3& r) {
  if (!(r.z() > 0.0) || !r.allFinite()) throw Error(ErrorKind::BelowPlane, "evaluation point must satisfy z > 0");
}

}  // namespace detail

/// Unit-voltage potential of one electrode. Immutable after construction.
class BasisPotential {
 public:
  BasisPotential() = default;

  explicit BasisPotential(const Electrode& e) : id_(e.id) {
    for (const auto& ring : e.rings) {
      auto tris = geometry::ear_clip(ring);
      triangles_.insert(triangles_.end(), tris.begin(), tris.end());
      for (std::size_t i = 0; i < ring.size(); ++i) edges_.push_back({ring[i], ring[(i + 1) % ring.size()]});
    }
  }

  const std::string& id() const { return id_; }
  const std::vector<std::array<Vec2, 3>>& triangles() const { return triangles_; }

  double value(const Vec3& r) const {
    detail::require_above_plane(r);
    double omega = 0.0;
    for (const auto& t : triangles_) omega += detail::triangle_solid_angle(r, t);
    return omega / (2.0 * std::numbers::pi);
  }

  Vec3 gradient(const Vec3& r) const {
    detail::require_above_plane(r);
    const detail::V3<double> rr{r.x(), r.y(), r.z()};
    Vec3 g = Vec3::Zero();
    for (const auto& [a, b] : edges_) {
      const auto k = detail::edge_kernel(rr, a, b);
      g += Vec3(k[0], k[1], k[2]);
    }
    return -g / (2.0 * std::numbers::pi);
  }

  /// order 0: value; 1: + gradient; 2: + Hessian.
  FieldSample eval(const Vec3& r, int order = 2) const {
    detail::require_above_plane(r);
    if (order < 0 || order > 2) throw Error(ErrorKind::InvalidArgument, "order must be 0, 1 or 2");
    FieldSample s;
    s.value = value(r);
    if (order == 1) s.gradient = gradient(r);
    if (order == 2) {
      using detail::Jet1;
      const detail::V3<Jet1> rr{Jet1::variable(r.x(), 0), Jet1::variable(r.y(), 1), Jet1::variable(r.z(), 2)};
      for (const auto& [a, b] : edges_) {
        const auto k = detail::edge_kernel(rr, a, b);
        for (int i = 0; i < 3; ++i) {
          s.gradient[i] += k[i].v;
          s.hessian.row(i) += k[i].g.transpose();
        }
      }
      const double c = -1.0 / (2.0 * std::numbers::pi);
      s.gradient *= c;
      const Mat3 raw = s.hessian;
      s.hessian = 0.5 * c * (raw + raw.transpose());
    }
    return s;
  }

  /// Gradient, Hessian and third derivatives in one pass.
  void eval3(const Vec3& r, Vec3& grad, Mat3& hess, Tensor3& third) const {
    detail::require_above_plane(r);
    using detail::Jet2;
    const detail::V3<Jet2> rr{Jet2::variable(r.x(), 0), Jet2::variable(r.y(), 1), Jet2::variable(r.z(), 2)};
    grad.setZero();
    hess.setZero();
    for (auto& t : third) t.setZero();
    for (const auto& [a, b] : edges_) {
      const auto k = detail::edge_kernel(rr, a, b);
      for (int i = 0; i < 3; ++i) {
        grad[i] += k[i].v;
        hess.row(i) += k[i].g.transpose();
        third[i] += k[i].h;
      }
    }
    const double c = -1.0 / (2.0 * std::numbers::pi);
    grad *= c;
    const Mat3 raw = hess;
    hess = 0.5 * c * (raw + raw.transpose());
    for (auto& t : third) t *= c;
    // symmetrize over all index permutations
    Tensor3 sym;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k)
          sym[i](j, k) = (third[i](j, k) + third[i](k, j) + third[j](i, k) + third[j](k, i) + third[k](i, j) +
                          third[k](j, i)) / 6.0;
    third = sym;
  }

 private:
  std::string id_;
  std::vector<std::array<Vec2, 3>> triangles_;
  std::vector<std::pair<Vec2, Vec2>> edges_;
};

inline FieldSample basis_eval(const BasisPotential& basis, const Vec3& r, int order) { return basis.eval(r, order); }

/// Basis potentials for every electrode of a layout.
class FieldModel {
 public:
  FieldModel() = default;

  explicit FieldModel(ElectrodeLayout layout) : layout_(std::move(layout)) {
    for (const auto& e : layout_.electrodes()) basis_.emplace_back(e);
  }

  const ElectrodeLayout& layout() const { return layout_; }
  std::size_t control_count() const { return layout_.control_count(); }
  const BasisPotential& rf() const { return basis_[layout_.rf_index()]; }
  /// k is 0-based over control electrodes.
  const BasisPotential& control(std::size_t k) const { return basis_[layout_.control_indices().at(k)]; }
  const BasisPotential& electrode(std::size_t i) const { return basis_.at(i); }

  /// Potential in volts of absolute control voltages (one per control electrode).
  FieldSample control_potential(const Eigen::VectorXd& volts, const Vec3& r, int order) const {
    if (static_cast<std::size_t>(volts.size()) != control_count())
      throw Error(ErrorKind::DimensionMismatch, "voltage vector length " + std::to_string(volts.size()) +
                                                    " does not match control_count " +
                                                    std::to_string(control_count()));
    detail::require_above_plane(r);
    FieldSample total;
    for (std::size_t k = 0; k < control_count(); ++k) {
      if (volts[static_cast<Eigen::Index>(k)] == 0.0) continue;
      total += volts[static_cast<Eigen::Index>(k)] * control(k).eval(r, order);
    }
    return total;
  }

 private:
  ElectrodeLayout layout_;
  std::vector<BasisPotential> basis_;
};

/// U_c * sum_n v_hat[n] * phi_n(r). v_hat must be unit length unless
/// allow_unnormalized is set.
inline FieldSample superpose(const FieldModel& model, const Eigen::VectorXd& v_hat, double u_c, const Vec3& r,
                             int order, bool allow_unnormalized = false) {
  if (static_cast<std::size_t>(v_hat.size()) != model.control_count())
    throw Error(ErrorKind::DimensionMismatch, "v_hat length does not match control_count");
  if (!allow_unnormalized && std::abs(v_hat.norm() - 1.0) > 1e-9)
    throw Error(ErrorKind::NotNormalized, "v_hat must have unit norm");
  if (u_c == 0.0) {
    detail::require_above_plane(r);
    return {};
  }
  return model.control_potential(u_c * v_hat, r, order);
}

}  // namespace iontrap
