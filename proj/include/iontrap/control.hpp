#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "iontrap/error.hpp"
#include "iontrap/fields.hpp"
#include "iontrap/lp.hpp"
#include "iontrap/physics.hpp"
#include "iontrap/trap.hpp"

namespace iontrap {

/// Traceless symmetric curvature from its five independent entries; zz = -xx - yy.
struct Curvature5 {
  double xx = 0.0, yy = 0.0, xy = 0.0, xz = 0.0, yz = 0.0;

  Mat3 matrix() const {
    Mat3 m;
    m << xx, xy, xz, xy, yy, yz, xz, yz, -xx - yy;
    return m;
  }
  std::array<double, 5> values() const { return {xx, yy, xy, xz, yz}; }

  static Curvature5 from_matrix(const Mat3& m, double trace_tol = 1e-9) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if (std::abs(m.trace()) > trace_tol * scale)
      throw Error(ErrorKind::InvalidArgument, "curvature target must be traceless");
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw Error(ErrorKind::InvalidArgument, "curvature target must be symmetric");
    return {m(0, 0), m(1, 1), m(0, 1), m(0, 2), m(1, 2)};
  }
};

inline Curvature5 curvature5_of(const Mat3& h) { return {h(0, 0), h(1, 1), h(0, 1), h(0, 2), h(1, 2)}; }

/// Per-site target; an empty optional leaves that quantity free.
struct ConstraintTarget {
  Vec3 site = Vec3::Zero();
  std::optional<Vec3> gradient;
  std::optional<Curvature5> curvature;
};

struct ControlSet {
  Eigen::VectorXd v_hat;  // unit vector over control electrodes, or zero when U_c = 0
  double u_c = 0.0;       // V
  std::string label;

  Eigen::VectorXd volts() const { return u_c * v_hat; }
};

struct SiteResidual {
  Vec3 site = Vec3::Zero();
  Vec3 gradient = Vec3::Zero();   // achieved, V/m
  Mat3 curvature = Mat3::Zero();  // achieved, V/m^2
  double gradient_error = 0.0;    // |achieved - target|, 0 when free
  double curvature_error = 0.0;   // Frobenius norm, 0 when free
  bool gradient_free = true, curvature_free = true;
};

struct ControlSolution {
  ControlSet set;
  std::vector<SiteResidual> residuals;
  int rank = 0;
  int nullspace_dim = 0;
  double max_relative_residual = 0.0;  // max over constrained rows, relative to target scale
};

/// Rank deficiency or inconsistency; rows() names the dependent constraint rows.
class ConstraintError : public Error {
 public:
  ConstraintError(ErrorKind kind, const std::string& what, std::vector<std::string> rows)
      : Error(kind, what), rows_(std::move(rows)) {}
  const std::vector<std::string>& rows() const { return rows_; }

 private:
  std::vector<std::string> rows_;
};

enum class VoltageNorm { Euclidean, MaxAbs };

namespace detail {

struct ConstraintSystem {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::vector<std::string> labels;
};

inline ConstraintSystem build_constraints(const FieldModel& model, const std::vector<ConstraintTarget>& targets) {
  static const char* grad_names[] = {"grad_x", "grad_y", "grad_z"};
  static const char* curv_names[] = {"curv_xx", "curv_yy", "curv_xy", "curv_xz", "curv_yz"};
  const auto n = static_cast<Eigen::Index>(model.control_count());
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  ConstraintSystem sys;
  for (std::size_t s = 0; s < targets.size(); ++s) {
    const auto& t = targets[s];
    if (!t.gradient && !t.curvature) continue;
    std::vector<FieldSample> basis(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k)
      basis[static_cast<std::size_t>(k)] = model.control(static_cast<std::size_t>(k)).eval(t.site, t.curvature ? 2 : 1);
    const std::string prefix = "site " + std::to_string(s) + " ";
    if (t.gradient) {
      for (int a = 0; a < 3; ++a) {
        Eigen::RowVectorXd row(n);
        for (Eigen::Index k = 0; k < n; ++k) row[k] = basis[static_cast<std::size_t>(k)].gradient[a];
        rows.push_back(row);
        rhs.push_back((*t.gradient)[a]);
        sys.labels.push_back(prefix + grad_names[a]);
      }
    }
    if (t.curvature) {
      const auto vals = t.curvature->values();
      for (int c = 0; c < 5; ++c) {
        Eigen::RowVectorXd row(n);
        for (Eigen::Index k = 0; k < n; ++k) row[k] = curvature5_of(basis[static_cast<std::size_t>(k)].hessian).values()[static_cast<std::size_t>(c)];
        rows.push_back(row);
        rhs.push_back(vals[static_cast<std::size_t>(c)]);
        sys.labels.push_back(prefix + curv_names[c]);
      }
    }
  }
  sys.A.resize(static_cast<Eigen::Index>(rows.size()), n);
  sys.b.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    sys.A.row(static_cast<Eigen::Index>(i)) = rows[i];
    sys.b[static_cast<Eigen::Index>(i)] = rhs[i];
  }
  return sys;
}

inline Eigen::VectorXd chebyshev_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  // variables: u (n, free), t >= 0, s+ (n), s- (n) >= 0
  //   A u = b;  u - t + s+ = 0;  -u - t + s- = 0;  minimize t
  const auto m = A.rows(), n = A.cols();
  lp::Problem p;
  const Eigen::Index nv = 3 * n + 1;
  p.A = Eigen::MatrixXd::Zero(m + 2 * n, nv);
  p.b = Eigen::VectorXd::Zero(m + 2 * n);
  p.A.topLeftCorner(m, n) = A;
  p.b.head(m) = b;
  for (Eigen::Index i = 0; i < n; ++i) {
    p.A(m + i, i) = 1.0;
    p.A(m + i, n) = -1.0;
    p.A(m + i, n + 1 + i) = 1.0;
    p.A(m + n + i, i) = -1.0;
    p.A(m + n + i, n) = -1.0;
    p.A(m + n + i, 2 * n + 1 + i) = 1.0;
  }
  p.c = Eigen::VectorXd::Zero(nv);
  p.c[n] = 1.0;
  p.lo = Eigen::VectorXd::Zero(nv);
  p.hi = Eigen::VectorXd::Constant(nv, lp::inf);
  p.lo.head(n).setConstant(-lp::inf);
  return lp::solve(p).x.head(n);
}

}  // namespace detail

/// Minimum-norm control voltages meeting every non-free target exactly.
inline ControlSolution solve_control(const FieldModel& model, const std::vector<ConstraintTarget>& targets,
                                     VoltageNorm norm = VoltageNorm::Euclidean, double rank_tol = 1e-10,
                                     double residual_tol = 1e-9) {
  const auto sys = detail::build_constraints(model, targets);
  const auto m = sys.A.rows(), n = sys.A.cols();
  if (static_cast<std::size_t>(m) > model.control_count())
    throw Error(ErrorKind::TooManyConstraints, std::to_string(m) + " constraints exceed " +
                                                   std::to_string(model.control_count()) + " control electrodes");
  ControlSolution out;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  if (m > 0) {
    Eigen::VectorXd scale(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double s = sys.A.row(i).norm();
      scale[i] = s > 0.0 ? 1.0 / s : 1.0;
    }
    const Eigen::MatrixXd An = scale.asDiagonal() * sys.A;
    const Eigen::VectorXd bn = scale.asDiagonal() * sys.b;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(An);
    const auto& sv = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv[i] > rank_tol * sv[0]) ++rank;
    out.rank = rank;
    if (rank < m) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(An.transpose());
      std::vector<std::string> bad;
      for (Eigen::Index i = rank; i < m; ++i) bad.push_back(sys.labels[static_cast<std::size_t>(qr.colsPermutation().indices()[i])]);
      std::string list;
      for (const auto& r : bad) list += (list.empty() ? "" : ", ") + r;
      throw ConstraintError(ErrorKind::RankDeficient, "constraint matrix has rank " + std::to_string(rank) + " < " +
                                                          std::to_string(m) + "; dependent rows: " + list,
                            bad);
    }
    if (norm == VoltageNorm::Euclidean) {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(An);
      u = cod.solve(bn);
      u += cod.solve(bn - An * u);  // one step of iterative refinement
    } else {
      u = detail::chebyshev_solve(An, bn);
    }
  }
  out.nullspace_dim = static_cast<int>(n) - out.rank;
  const double un = u.norm();
  out.set.u_c = un;
  out.set.v_hat = un > 0.0 ? Eigen::VectorXd(u / un) : Eigen::VectorXd::Zero(n);

  // residual report at every site, free or not
  double worst = 0.0;
  for (const auto& t : targets) {
    SiteResidual r;
    r.site = t.site;
    const FieldSample s = model.control_potential(u, t.site, 2);
    r.gradient = s.gradient;
    r.curvature = s.hessian;
    if (t.gradient) {
      r.gradient_free = false;
      r.gradient_error = (s.gradient - *t.gradient).norm();
    }
    if (t.curvature) {
      r.curvature_free = false;
      r.curvature_error = (s.hessian - t.curvature->matrix()).norm();
    }
    out.residuals.push_back(r);
  }
  if (m > 0) {
    const Eigen::VectorXd achieved = sys.A * u;
    for (Eigen::Index i = 0; i < m; ++i) {
      // relative to the row's own scale: |row| * |u| bounds the achievable value
      const double ref = std::max(std::abs(sys.b[i]), sys.A.row(i).norm() * std::max(un, 1e-300));
      worst = std::max(worst, std::abs(achieved[i] - sys.b[i]) / ref);
    }
  }
  out.max_relative_residual = worst;
  if (worst > residual_tol)
    throw ConstraintError(ErrorKind::RankDeficient,
                          "constraints are inconsistent (relative residual " + std::to_string(worst) + ")", {});
  return out;
}

enum class Family { EpsX, EpsY, EpsZ, KappaTune, KappaRot, KappaRot2 };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::EpsX: return "eps_x";
    case Family::EpsY: return "eps_y";
    case Family::EpsZ: return "eps_z";
    case Family::KappaTune: return "kappa_tune";
    case Family::KappaRot: return "kappa_rot";
    case Family::KappaRot2: return "kappa_rot2";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  for (Family f : {Family::EpsX, Family::EpsY, Family::EpsZ, Family::KappaTune, Family::KappaRot, Family::KappaRot2})
    if (s == to_string(f)) return f;
  throw Error(ErrorKind::UnknownKind, "unknown potential family '" + s + "'");
}

/// Curvature applied at the target site by each curvature family, per unit
/// target scale (m^-2 for a 1 V amplitude).
inline Mat3 family_curvature(Family f) {
  Mat3 m = Mat3::Zero();
  switch (f) {
    case Family::KappaTune:
      m.diagonal() << 0.0, 0.937e7, -0.937e7;
      break;
    case Family::KappaRot:
      m << -1.60e7, 1.75e7, 0.0, 1.75e7, 0.84e7, 0.0, 0.0, 0.0, 0.76e7;
      break;
    case Family::KappaRot2:
      m << -0.80e7, 0.0, 1.75e7, 0.0, 0.0, 0.0, 1.75e7, 0.0, 0.80e7;
      break;
    default:
      break;
  }
  return m;
}

/// Constraint table for a named family. sites[0] is the target site; every
/// other site gets zero gradient and zero curvature.
inline std::vector<ConstraintTarget> family_target(Family kind, const std::vector<Vec3>& sites) {
  if (sites.empty()) throw Error(ErrorKind::InvalidArgument, "family_target needs at least the target site");
  std::vector<ConstraintTarget> out;
  for (std::size_t s = 0; s < sites.size(); ++s) {
    ConstraintTarget t;
    t.site = sites[s];
    t.gradient = Vec3::Zero();
    t.curvature = Curvature5{};
    if (s == 0) {
      switch (kind) {
        case Family::EpsX: t.gradient = Vec3::UnitX(); break;
        case Family::EpsY: t.gradient = Vec3::UnitY(); break;
        case Family::EpsZ: t.gradient = Vec3::UnitZ(); break;
        default: t.curvature = Curvature5::from_matrix(family_curvature(kind)); break;
      }
    }
    out.push_back(t);
  }
  return out;
}

/// Change of mode frequency when U * c is added to the mode's curvature.
inline double predict_detuning(double omega, double curvature_per_volt, double u, const IonSpecies& species = {}) {
  species.validate();
  const double radicand = omega * omega + u * species.charge_to_mass() * curvature_per_volt;
  if (radicand < 0.0)
    throw Error(ErrorKind::Instability, "mode frequency would become imaginary (radicand " + std::to_string(radicand) + ")");
  return std::sqrt(radicand) - omega;
}

struct RotationResult {
  double angle_deg = 0.0;      // angle of u_2 from the y axis in the xy plane, (-90, 90]
  double angle_3d_deg = 0.0;   // same angle from the full 3x3 eigensolve
  Eigen::Vector2d in_plane_curvatures = Eigen::Vector2d::Zero();  // (larger, smaller)
  ModeStructure modes;
};

namespace detail {

inline double fold_half_turn(double deg) {
  while (deg <= -90.0) deg += 180.0;
  while (deg > 90.0) deg -= 180.0;
  return deg;
}

}  // namespace detail

/// Principal-axis rotation of phi_ini + U * kappa. The angle is measured from
/// the y axis to u_2, positive towards -x (counter-clockwise seen from +z).
inline RotationResult predict_rotation(const Mat3& phi_ini, const Mat3& kappa, double u, const IonSpecies& species = {}) {
  const Mat3 fin = phi_ini + u * kappa;
  const double a = fin(0, 0), b = fin(1, 1), h = 0.5 * (fin(0, 1) + fin(1, 0));
  const double mean = 0.5 * (a + b);
  const double half = std::hypot(0.5 * (a - b), h);
  const double scale = std::max({std::abs(a), std::abs(b), std::abs(h)});
  if (half <= 1e-12 * scale) throw Error(ErrorKind::Degenerate, "in-plane curvatures are degenerate; angle undefined");
  if (mean - half <= 0.0) throw Error(ErrorKind::Instability, "in-plane curvature is not positive-definite");
  RotationResult out;
  out.in_plane_curvatures = {mean + half, mean - half};
  out.angle_deg = detail::fold_half_turn(0.5 * std::atan2(2.0 * h, a - b) * 180.0 / std::numbers::pi);

  const Mat3 sym = 0.5 * (fin + fin.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> es(sym);
  std::array<int, 3> idx{0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](int p, int q) {
    return es.eigenvectors().col(p).head<2>().squaredNorm() > es.eigenvectors().col(q).head<2>().squaredNorm();
  });
  const int small = es.eigenvalues()[idx[0]] < es.eigenvalues()[idx[1]] ? idx[0] : idx[1];
  const Vec3 v = es.eigenvectors().col(small);
  out.angle_3d_deg = detail::fold_half_turn(std::atan2(-v.x(), v.y()) * 180.0 / std::numbers::pi);
  out.modes = mode_analysis(sym, species);
  return out;
}

struct CrosstalkEntry {
  Vec3 site = Vec3::Zero();
  Vec3 gradient = Vec3::Zero();   // V/m
  Mat3 curvature = Mat3::Zero();  // V/m^2
  double directional_curvature = 0.0;  // d' H d, V/m^2
  double gradient_ratio = 0.0;    // |grad| relative to the reference site
  double curvature_ratio = 0.0;   // d' H d relative to the reference site
};

/// Gradient and curvature of a control set at each site, relative to its
/// effect at the reference site. direction selects the curvature component.
inline std::vector<CrosstalkEntry> residual_crosstalk(const FieldModel& model, const ControlSet& set,
                                                      const Vec3& reference, const std::vector<Vec3>& sites,
                                                      const Vec3& direction = Vec3::UnitY()) {
  const Vec3 d = direction.normalized();
  const Eigen::VectorXd volts = set.volts();
  const FieldSample ref = model.control_potential(volts, reference, 2);
  const double ref_g = ref.gradient.norm();
  const double ref_c = d.dot(ref.hessian * d);
  std::vector<CrosstalkEntry> out;
  for (const auto& p : sites) {
    const FieldSample s = model.control_potential(volts, p, 2);
    CrosstalkEntry e;
    e.site = p;
    e.gradient = s.gradient;
    e.curvature = s.hessian;
    e.directional_curvature = d.dot(s.hessian * d);
    e.gradient_ratio = ref_g > 0.0 ? s.gradient.norm() / ref_g : 0.0;
    e.curvature_ratio = ref_c != 0.0 ? e.directional_curvature / ref_c : 0.0;
    out.push_back(e);
  }
  return out;
}

}  // namespace iontrap
