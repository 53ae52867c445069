#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "iontrap/error.hpp"
#include "iontrap/fields.hpp"
#include "iontrap/physics.hpp"

namespace iontrap {

/// Q / (4 m Omega_RF^2): converts |E_RF|^2 into a potential in volts.
inline double pseudo_coefficient(const RFDrive& drive, const IonSpecies& species) {
  return species.charge_to_mass() / (4.0 * drive.omega_rf * drive.omega_rf);
}

/// Time-averaged RF potential energy divided by Q, in volts.
inline FieldSample pseudopotential(const FieldModel& model, const RFDrive& drive, const IonSpecies& species,
                                   const Vec3& r, int order) {
  drive.validate();
  species.validate();
  const double k = pseudo_coefficient(drive, species);
  const double u = drive.u_rf;
  FieldSample out;
  if (order < 0 || order > 2) throw Error(ErrorKind::InvalidArgument, "order must be 0, 1 or 2");
  if (order <= 1) {
    if (order == 0) {
      out.value = k * (u * model.rf().gradient(r)).squaredNorm();
      return out;
    }
    const FieldSample rf = model.rf().eval(r, 2);
    const Vec3 g = u * rf.gradient;
    out.value = k * g.squaredNorm();
    out.gradient = 2.0 * k * u * rf.hessian * g;
    return out;
  }
  Vec3 g;
  Mat3 h;
  Tensor3 t;
  model.rf().eval3(r, g, h, t);
  g *= u;
  h *= u;
  out.value = k * g.squaredNorm();
  out.gradient = 2.0 * k * h * g;
  Mat3 hess = h.transpose() * h;
  for (int a = 0; a < 3; ++a) hess += g[a] * u * t[a];
  out.hessian = 2.0 * k * hess;
  return out;
}

/// RF pseudopotential plus static control voltages.
class TrapModel {
 public:
  TrapModel(FieldModel fields, RFDrive drive = {}, IonSpecies species = {}, Eigen::VectorXd control_volts = {})
      : fields_(std::move(fields)), drive_(drive), species_(std::move(species)), volts_(std::move(control_volts)) {
    drive_.validate();
    species_.validate();
    if (volts_.size() == 0) volts_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fields_.control_count()));
    if (static_cast<std::size_t>(volts_.size()) != fields_.control_count())
      throw Error(ErrorKind::DimensionMismatch, "control voltage vector does not match control_count");
  }

  const FieldModel& fields() const { return fields_; }
  const RFDrive& drive() const { return drive_; }
  const IonSpecies& species() const { return species_; }
  const Eigen::VectorXd& control_volts() const { return volts_; }

  TrapModel with_controls(Eigen::VectorXd volts) const { return TrapModel(fields_, drive_, species_, std::move(volts)); }

  FieldSample eval(const Vec3& r, int order) const {
    FieldSample s = pseudopotential(fields_, drive_, species_, r, order);
    if (!volts_.isZero(0.0)) s += fields_.control_potential(volts_, r, order);
    return s;
  }

 private:
  FieldModel fields_;
  RFDrive drive_;
  IonSpecies species_;
  Eigen::VectorXd volts_;
};

struct SearchRegion {
  Vec3 lo = Vec3(-80e-6, -80e-6, 5e-6);
  Vec3 hi = Vec3(80e-6, 80e-6, 100e-6);
  std::array<int, 3> samples{17, 17, 13};

  void validate() const {
    if (!(lo.array() < hi.array()).all() || !(lo.z() > 0.0))
      throw Error(ErrorKind::InvalidArgument, "search region must be a nonempty box above the plane");
    for (int n : samples)
      if (n < 2) throw Error(ErrorKind::InvalidArgument, "search grid needs at least 2 samples per axis");
  }
  bool contains(const Vec3& p, double margin = 0.0) const {
    return ((p.array() >= lo.array() - margin) && (p.array() <= hi.array() + margin)).all();
  }
};

enum class SiteKind { Minimum, Saddle, Degenerate };

inline const char* to_string(SiteKind k) {
  switch (k) {
    case SiteKind::Minimum: return "MINIMUM";
    case SiteKind::Saddle: return "SADDLE";
    case SiteKind::Degenerate: return "DEGENERATE";
  }
  return "?";
}

struct TrapSite {
  Vec3 position = Vec3::Zero();
  Vec3 gradient = Vec3::Zero();
  Mat3 curvature = Mat3::Zero();
  Vec3 eigenvalues = Vec3::Zero();  // ascending
  SiteKind kind = SiteKind::Degenerate;
  int negative_count = 0;
};

struct SiteSearchOptions {
  double gradient_tol = 1e-3;  // V/m
  double merge_distance = 1e-8;  // m
  int max_iterations = 200;
  double zero_eigen_rel = 1e-9;
};

inline TrapSite classify_site(const Vec3& position, const FieldSample& s, double zero_rel = 1e-9) {
  TrapSite site;
  site.position = position;
  site.gradient = s.gradient;
  site.curvature = s.hessian;
  Eigen::SelfAdjointEigenSolver<Mat3> es(s.hessian, Eigen::EigenvaluesOnly);
  site.eigenvalues = es.eigenvalues();
  const double scale = s.hessian.norm();
  bool zero = false;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(site.eigenvalues[i]) < zero_rel * scale) zero = true;
    if (site.eigenvalues[i] < 0.0) ++site.negative_count;
  }
  if (zero || scale == 0.0)
    site.kind = SiteKind::Degenerate;
  else
    site.kind = site.negative_count == 0 ? SiteKind::Minimum : SiteKind::Saddle;
  return site;
}

/// Damped Newton iteration on grad phi = 0 from one start; throws
/// NonConvergence if the gradient tolerance is not reached.
/// When a box is given, leaving it counts as non-convergence.
inline TrapSite refine_site(const TrapModel& model, Vec3 r, const SiteSearchOptions& opt = {},
                            double max_step = 5e-6, const SearchRegion* box = nullptr) {
  FieldSample s = model.eval(r, 2);
  double gn = s.gradient.norm();
  double lambda = 1e-3;
  int polish = 0;
  for (int it = 0; it < opt.max_iterations && gn > 0.0; ++it) {
    const Mat3 jtj = s.hessian.transpose() * s.hessian;
    const Vec3 jtg = s.hessian.transpose() * s.gradient;
    const double diag = jtj.diagonal().maxCoeff();
    bool accepted = false;
    double moved = 0.0;
    for (int tries = 0; tries < 30 && !accepted; ++tries) {
      Vec3 step = -(jtj + lambda * diag * Mat3::Identity()).ldlt().solve(jtg);
      if (!step.allFinite()) break;
      if (step.norm() > max_step) step *= max_step / step.norm();
      const Vec3 trial = r + step;
      if (box && !box->contains(trial)) break;
      if (trial.z() > 0.0) {
        const FieldSample st = model.eval(trial, 2);
        if (st.gradient.norm() < gn) {
          moved = step.norm();
          r = trial;
          s = st;
          gn = st.gradient.norm();
          lambda = std::max(lambda * 0.1, 1e-15);
          accepted = true;
          continue;
        }
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
    if (gn < opt.gradient_tol && (++polish >= 3 || moved < 1e-14)) break;
  }
  const bool converged = gn < opt.gradient_tol;
  if (!converged)
    throw Error(ErrorKind::NonConvergence, "stationary point search stalled at |grad| = " + std::to_string(gn) + " V/m");
  return classify_site(r, s, opt.zero_eigen_rel);
}

namespace detail {

inline bool site_less(const TrapSite& a, const TrapSite& b) {
  if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  constexpr double tol = 1e-9;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(a.position[i] - b.position[i]) > tol) return a.position[i] < b.position[i];
  }
  return false;
}

}  // namespace detail

/// All minima and saddle points of the combined potential inside the region,
/// from a grid scan followed by damped Newton refinement.
inline std::vector<TrapSite> find_sites(const TrapModel& model, const SearchRegion& region,
                                        const SiteSearchOptions& opt = {}) {
  region.validate();
  const int nx = region.samples[0], ny = region.samples[1], nz = region.samples[2];
  const Vec3 step = (region.hi - region.lo).cwiseQuotient(Vec3(nx - 1, ny - 1, nz - 1));
  auto at = [&](int i, int j, int k) { return Vec3(region.lo.x() + i * step.x(), region.lo.y() + j * step.y(), region.lo.z() + k * step.z()); };
  auto flat = [&](int i, int j, int k) { return (static_cast<std::size_t>(k) * ny + j) * nx + i; };

  // A grid point seeds a refinement when the Newton step of the local
  // quadratic model stays within the neighbouring cell, or when |grad| is a
  // local minimum over its 26 neighbours.
  std::vector<double> gnorm(static_cast<std::size_t>(nx) * ny * nz);
  std::vector<char> near(gnorm.size(), 0);
  std::vector<Vec3> target(gnorm.size());
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const FieldSample s = model.eval(at(i, j, k), 2);
        gnorm[flat(i, j, k)] = s.gradient.norm();
        const Vec3 newton = -s.hessian.fullPivLu().solve(s.gradient);
        near[flat(i, j, k)] = newton.allFinite() && (newton.cwiseAbs().array() <= step.array()).all();
        target[flat(i, j, k)] = near[flat(i, j, k)] ? Vec3(at(i, j, k) + newton) : at(i, j, k);
      }

  struct Seed {
    Vec3 start, predicted;
    double distance;
  };
  std::vector<Seed> seeds;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        bool gmin = true;
        const double g0 = gnorm[flat(i, j, k)];
        for (int dk = -1; dk <= 1 && gmin; ++dk)
          for (int dj = -1; dj <= 1 && gmin; ++dj)
            for (int di = -1; di <= 1; ++di) {
              const int a = i + di, b = j + dj, c = k + dk;
              if ((di == 0 && dj == 0 && dk == 0) || a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) continue;
              if (gnorm[flat(a, b, c)] < g0) {
                gmin = false;
                break;
              }
            }
        if (gmin || near[flat(i, j, k)]) {
          const Vec3 p = at(i, j, k);
          const Vec3 t = target[flat(i, j, k)];
          seeds.push_back({p, t, near[flat(i, j, k)] ? (t - p).norm() : std::numeric_limits<double>::infinity()});
        }
      }

  const double max_step = 0.5 * step.minCoeff();
  std::stable_sort(seeds.begin(), seeds.end(), [](const Seed& a, const Seed& b) { return a.distance < b.distance; });
  const double covered = 0.1 * step.minCoeff();
  SearchRegion box = region;
  box.lo = (region.lo - step).cwiseMax(Vec3(-1.0, -1.0, 0.25 * region.lo.z()));
  box.hi = region.hi + step;
  std::vector<TrapSite> found;
  std::vector<Vec3> converged;  // includes points outside the region
  for (const Seed& seed : seeds) {
    if (std::isfinite(seed.distance) &&
        std::any_of(converged.begin(), converged.end(), [&](const Vec3& c) { return (c - seed.predicted).norm() < covered; }))
      continue;
    TrapSite site;
    try {
      site = refine_site(model, seed.start, opt, max_step, &box);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonConvergence || e.kind() == ErrorKind::BelowPlane) continue;
      throw;
    }
    converged.push_back(site.position);
    if (!region.contains(site.position, 1e-9)) continue;
    bool duplicate = false;
    for (auto& f : found) {
      if ((f.position - site.position).norm() < opt.merge_distance) {
        if (site.gradient.norm() < f.gradient.norm()) f = site;
        duplicate = true;
        break;
      }
    }
    if (!duplicate) found.push_back(site);
  }
  if (found.empty()) throw Error(ErrorKind::NoStationaryPoint, "no stationary point found in the search region");
  std::sort(found.begin(), found.end(), detail::site_less);
  return found;
}

struct ModeStructure {
  Vec3 omega = Vec3::Zero();       // rad/s; negative for unstable directions
  Vec3 curvature = Vec3::Zero();   // V/m^2 eigenvalues, same order as omega
  Mat3 vectors = Mat3::Identity();  // columns u_1, u_2, u_3
  std::array<bool, 3> stable{true, true, true};

  bool all_stable() const { return stable[0] && stable[1] && stable[2]; }
  Vec3 u(int j) const { return vectors.col(j); }
};

namespace detail {

inline ModeStructure modes_from(const Vec3& kappa, const Mat3& vecs, const IonSpecies& species) {
  ModeStructure m;
  m.curvature = kappa;
  m.vectors = vecs;
  const double qm = species.charge_to_mass();
  for (int j = 0; j < 3; ++j) {
    m.stable[j] = kappa[j] > 0.0;
    m.omega[j] = std::copysign(std::sqrt(qm * std::abs(kappa[j])), kappa[j]);
  }
  return m;
}

inline void fix_sign(Eigen::Ref<Vec3> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v[idx] < 0.0) v = -v;
}

}  // namespace detail

/// Eigenmodes of a curvature matrix. Modes are ordered by descending
/// frequency, then assigned to u_1, u_2, u_3 by proximity to x, y, z.
/// u_1 and u_2 have their largest component positive; u_3 = u_1 x u_2.
inline ModeStructure mode_analysis(const Mat3& curvature, const IonSpecies& species = {}) {
  species.validate();
  if (!curvature.isApprox(curvature.transpose(), 1e-12) && curvature.norm() > 0.0)
    throw Error(ErrorKind::InvalidArgument, "curvature matrix must be symmetric");
  const Mat3 sym = 0.5 * (curvature + curvature.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> es(sym);
  Vec3 kappa;
  Mat3 vecs;
  for (int j = 0; j < 3; ++j) {
    kappa[j] = es.eigenvalues()[2 - j];
    vecs.col(j) = es.eigenvectors().col(2 - j);
  }
  std::array<int, 3> perm{0, 1, 2}, best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (int j = 0; j < 3; ++j) score += vecs(j, perm[j]) * vecs(j, perm[j]);
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Vec3 k2;
  Mat3 v2;
  for (int j = 0; j < 3; ++j) {
    k2[j] = kappa[best[j]];
    v2.col(j) = vecs.col(best[j]);
  }
  detail::fix_sign(v2.col(0));
  detail::fix_sign(v2.col(1));
  v2.col(2) = v2.col(0).cross(v2.col(1)).normalized();
  return detail::modes_from(k2, v2, species);
}

/// Mode analysis that keeps labels and signs continuous with a previous result
/// (used along parameter sweeps so labels do not swap at avoided crossings).
inline ModeStructure track_modes(const Mat3& curvature, const ModeStructure& previous, const IonSpecies& species = {}) {
  const Mat3 sym = 0.5 * (curvature + curvature.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> es(sym);
  std::array<int, 3> perm{0, 1, 2}, best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (int j = 0; j < 3; ++j) score += std::abs(previous.vectors.col(j).dot(es.eigenvectors().col(perm[j])));
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Vec3 kappa;
  Mat3 vecs;
  for (int j = 0; j < 3; ++j) {
    kappa[j] = es.eigenvalues()[best[j]];
    Vec3 v = es.eigenvectors().col(best[j]);
    if (v.dot(previous.vectors.col(j)) < 0.0) v = -v;
    vecs.col(j) = v;
  }
  return detail::modes_from(kappa, vecs, species);
}

}  // namespace iontrap
