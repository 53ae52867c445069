#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "iontrap/error.hpp"
#include "iontrap/fields.hpp"
#include "iontrap/geometry.hpp"
#include "iontrap/layout.hpp"
#include "iontrap/lp.hpp"

namespace iontrap {

/// Square pixel grid in the chip plane, optionally rotated about its center.
struct GridSpec {
  int nx = 64, ny = 64;
  double pitch = 4e-6;              // m
  Vec2 center = Vec2::Zero();
  double angle = 0.0;               // rad, rotation of the whole grid about center

  void validate() const {
    if (nx < 1 || ny < 1 || !(pitch > 0.0)) throw Error(ErrorKind::InvalidArgument, "grid needs nx, ny >= 1 and pitch > 0");
  }
  /// Corner (i, j) of the lattice, 0 <= i <= nx, 0 <= j <= ny.
  Vec2 corner(int i, int j) const {
    const Vec2 local((i - 0.5 * nx) * pitch, (j - 0.5 * ny) * pitch);
    const double c = std::cos(angle), s = std::sin(angle);
    return center + Vec2(c * local.x() - s * local.y(), s * local.x() + c * local.y());
  }
  Ring pixel(int i, int j) const { return {corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1)}; }
};

/// Fraction of each pixel held at RF potential; values(j, i) is row j (y), column i (x).
struct PixelPattern {
  GridSpec grid;
  Eigen::MatrixXd values;

  void validate() const {
    if (values.rows() != grid.ny || values.cols() != grid.nx)
      throw Error(ErrorKind::DimensionMismatch, "pattern size does not match grid");
    if (values.size() > 0 && (values.minCoeff() < -1e-12 || values.maxCoeff() > 1.0 + 1e-12))
      throw Error(ErrorKind::InvalidArgument, "pixel values must lie in [0, 1]");
  }
};

/// Per-site traceless unit direction for the RF potential curvature.
struct ShapeObjective {
  std::vector<Vec3> sites;
  std::vector<Mat3> directions;

  static Mat3 default_direction() {
    Mat3 m = Mat3::Zero();
    m.diagonal() << 1.0, 1.0, -2.0;
    return m / std::sqrt(6.0);
  }
  static ShapeObjective with_default_directions(std::vector<Vec3> sites) {
    ShapeObjective o;
    o.directions.assign(sites.size(), default_direction());
    o.sites = std::move(sites);
    return o;
  }
  void validate() const {
    if (sites.empty() || sites.size() != directions.size())
      throw Error(ErrorKind::InvalidArgument, "objective needs one direction matrix per site");
    for (const auto& m : directions) {
      if (std::abs(m.norm() - 1.0) > 1e-9 || std::abs(m.trace()) > 1e-9 || !m.isApprox(m.transpose(), 1e-12))
        throw Error(ErrorKind::InvalidArgument, "direction matrices must be symmetric, traceless and unit-norm");
    }
    for (const auto& s : sites)
      if (!(s.z() > 0.0)) throw Error(ErrorKind::BelowPlane, "objective sites must lie above the plane");
  }
};

struct ShapeResult {
  PixelPattern pattern;
  double objective = 0.0;                // sum_i <M_i, J_i>, per volt of RF
  std::vector<Mat3> field_jacobians;     // J_i = Hessian of the unit RF potential at site i
  std::vector<Mat3> curvatures;          // J_i' J_i, m^-4 per V^2 before pseudopotential scaling
  std::vector<Vec3> residual_fields;     // gradient at site i (should vanish)
  int fractional_pixels = 0;
  int equality_rows = 0;
  lp::Solution certificate;
};

/// Maximizes sum_i <M_i, J_i(p)> over pixel patterns 0 <= p <= 1 that null the
/// RF field at every site.
inline ShapeResult lp_optimize(const ShapeObjective& objective, const GridSpec& grid) {
  objective.validate();
  grid.validate();
  const int n = grid.nx * grid.ny;
  const int ns = static_cast<int>(objective.sites.size());
  lp::Problem p;
  p.A.resize(3 * ns, n);
  p.b = Eigen::VectorXd::Zero(3 * ns);
  p.c = Eigen::VectorXd::Zero(n);
  p.lo = Eigen::VectorXd::Zero(n);
  p.hi = Eigen::VectorXd::Ones(n);
  std::vector<std::vector<Mat3>> hess(static_cast<std::size_t>(ns), std::vector<Mat3>(static_cast<std::size_t>(n)));
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      const int k = j * grid.nx + i;
      const BasisPotential px(Electrode{"px", Role::RF, {grid.pixel(i, j)}});
      double gain = 0.0;
      for (int s = 0; s < ns; ++s) {
        const FieldSample f = px.eval(objective.sites[static_cast<std::size_t>(s)], 2);
        p.A.block(3 * s, k, 3, 1) = f.gradient;
        hess[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)] = f.hessian;
        gain += (objective.directions[static_cast<std::size_t>(s)].cwiseProduct(f.hessian)).sum();
      }
      p.c[k] = -gain;
    }
  }
  ShapeResult out;
  out.certificate = lp::solve(p);
  out.objective = -out.certificate.objective;
  out.equality_rows = 3 * ns;
  out.pattern.grid = grid;
  out.pattern.values.resize(grid.ny, grid.nx);
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      double v = out.certificate.x[j * grid.nx + i];
      v = std::min(1.0, std::max(0.0, v));
      out.pattern.values(j, i) = v;
      if (v > 1e-9 && v < 1.0 - 1e-9) ++out.fractional_pixels;
    }
  for (int s = 0; s < ns; ++s) {
    Mat3 jac = Mat3::Zero();
    for (int k = 0; k < n; ++k) jac += out.certificate.x[k] * hess[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)];
    out.field_jacobians.push_back(jac);
    out.curvatures.push_back(jac.transpose() * jac);
    out.residual_fields.push_back(p.A.block(3 * s, 0, 3, n) * out.certificate.x);
  }
  return out;
}

struct ExtractedLayout {
  ElectrodeLayout layout;
  int fragmentation = 0;  // number of 4-connected RF components
};

namespace detail {

inline int count_components(const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& on) {
  const auto ny = on.rows(), nx = on.cols();
  std::vector<int> label(static_cast<std::size_t>(nx * ny), -1);
  int count = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index j = 0; j < ny; ++j)
    for (Eigen::Index i = 0; i < nx; ++i) {
      if (!on(j, i) || label[static_cast<std::size_t>(j * nx + i)] >= 0) continue;
      stack.push_back({j, i});
      label[static_cast<std::size_t>(j * nx + i)] = count;
      while (!stack.empty()) {
        const auto [cj, ci] = stack.back();
        stack.pop_back();
        const Eigen::Index nb[4][2] = {{cj + 1, ci}, {cj - 1, ci}, {cj, ci + 1}, {cj, ci - 1}};
        for (const auto& q : nb) {
          if (q[0] < 0 || q[1] < 0 || q[0] >= ny || q[1] >= nx || !on(q[0], q[1])) continue;
          auto& l = label[static_cast<std::size_t>(q[0] * nx + q[1])];
          if (l < 0) {
            l = count;
            stack.push_back({q[0], q[1]});
          }
        }
      }
      ++count;
    }
  return count;
}

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double len2 = d.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(d) / len2, 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

inline void douglas_peucker(const std::vector<Vec2>& pts, std::size_t lo, std::size_t hi, double tol,
                            std::vector<char>& keep) {
  if (hi <= lo + 1) return;
  double worst = -1.0;
  std::size_t idx = lo;
  for (std::size_t k = lo + 1; k < hi; ++k) {
    const double d = point_segment_distance(pts[k], pts[lo], pts[hi]);
    if (d > worst) {
      worst = d;
      idx = k;
    }
  }
  if (worst > tol) {
    keep[idx] = 1;
    douglas_peucker(pts, lo, idx, tol, keep);
    douglas_peucker(pts, idx, hi, tol, keep);
  }
}

/// Closed-ring simplification anchored at vertex 0 and the vertex farthest from it.
inline Ring simplify_ring(const Ring& ring, double tol) {
  const std::size_t n = ring.size();
  if (n <= 4) return ring;
  std::size_t far = 0;
  for (std::size_t k = 1; k < n; ++k)
    if ((ring[k] - ring[0]).squaredNorm() > (ring[far] - ring[0]).squaredNorm()) far = k;
  std::vector<Vec2> pts(ring.begin(), ring.end());
  pts.push_back(ring[0]);
  std::vector<char> keep(pts.size(), 0);
  keep[0] = keep[far] = keep[n] = 1;
  douglas_peucker(pts, 0, far, tol, keep);
  douglas_peucker(pts, far, n, tol, keep);
  Ring out;
  for (std::size_t k = 0; k < n; ++k)
    if (keep[k]) out.push_back(ring[k]);
  return out.size() >= 3 ? out : ring;
}

}  // namespace detail

/// Traces pixel-edge boundaries of {value >= threshold} into RF rings. The
/// complement is the grounded plane. Diagonal-only contacts are not joined
/// (4-connectivity); rings are split where they touch themselves at a vertex.
inline ExtractedLayout extract_polygons(const PixelPattern& pattern, double threshold = 0.5) {
  pattern.validate();
  const int nx = pattern.grid.nx, ny = pattern.grid.ny;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> on(ny, nx);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) on(j, i) = pattern.values(j, i) >= threshold;
  if (!on.any()) throw Error(ErrorKind::EmptyPattern, "no pixel reaches the threshold");
  auto at = [&](int i, int j) { return i >= 0 && j >= 0 && i < nx && j < ny && on(j, i); };

  // Directed boundary edges on the lattice, interior on the left.
  using Node = std::pair<int, int>;
  std::multimap<Node, Node> out_edges;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      if (!on(j, i)) continue;
      if (!at(i, j - 1)) out_edges.insert({{i, j}, {i + 1, j}});
      if (!at(i + 1, j)) out_edges.insert({{i + 1, j}, {i + 1, j + 1}});
      if (!at(i, j + 1)) out_edges.insert({{i + 1, j + 1}, {i, j + 1}});
      if (!at(i - 1, j)) out_edges.insert({{i, j + 1}, {i, j}});
    }

  std::vector<std::vector<Node>> loops;
  while (!out_edges.empty()) {
    auto it = out_edges.begin();
    const Node start = it->first;
    std::vector<Node> loop{start};
    Node prev = start, cur = it->second;
    out_edges.erase(it);
    while (cur != start) {
      loop.push_back(cur);
      auto range = out_edges.equal_range(cur);
      auto pick = range.first;
      if (std::distance(range.first, range.second) > 1) {
        // saddle vertex: take the left turn so diagonal pixels stay apart
        const int dx = cur.first - prev.first, dy = cur.second - prev.second;
        for (auto e = range.first; e != range.second; ++e) {
          const int ex = e->second.first - cur.first, ey = e->second.second - cur.second;
          if (dx * ey - dy * ex > 0) pick = e;
        }
      }
      prev = cur;
      cur = pick->second;
      out_edges.erase(pick);
    }
    // split at repeated vertices into simple rings
    std::vector<Node> stack;
    std::map<Node, std::size_t> pos;
    for (const Node& v : loop) {
      auto f = pos.find(v);
      if (f != pos.end()) {
        std::vector<Node> sub(stack.begin() + static_cast<long>(f->second), stack.end());
        for (std::size_t k = f->second; k < stack.size(); ++k) pos.erase(stack[k]);
        stack.resize(f->second);
        loops.push_back(std::move(sub));
      }
      pos[v] = stack.size();
      stack.push_back(v);
    }
    if (stack.size() >= 3) loops.push_back(std::move(stack));
  }

  Electrode rf{"rf", Role::RF, {}};
  for (const auto& loop : loops) {
    Ring r;
    for (const auto& [i, j] : loop) r.push_back(pattern.grid.corner(i, j));
    r = geometry::drop_collinear(r);
    r = detail::simplify_ring(r, 0.25 * pattern.grid.pitch);
    rf.rings.push_back(std::move(r));
  }
  ExtractedLayout out{ElectrodeLayout({std::move(rf)}), detail::count_components(on)};
  return out;
}

}  // namespace iontrap
