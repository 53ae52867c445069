#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "iontrap/error.hpp"

namespace iontrap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Closed polygon in the chip plane; the closing edge back to front() is implicit.
/// Counter-clockwise rings are filled, clockwise rings are holes.
using Ring = std::vector<Vec2>;

namespace geometry {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline double orient(const Vec2& a, const Vec2& b, const Vec2& c) { return cross2(b - a, c - a); }

inline double signed_area(const Ring& ring) {
  double s = 0.0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) s += cross2(ring[i], ring[(i + 1) % n]);
  return 0.5 * s;
}

inline double ring_scale(const Ring& ring) {
  double s = 0.0;
  for (const auto& p : ring) s = std::max(s, p.cwiseAbs().maxCoeff());
  return s > 0.0 ? s : 1.0;
}

inline Ring rotated(const Ring& ring, double angle, const Vec2& origin = Vec2::Zero()) {
  const double c = std::cos(angle), s = std::sin(angle);
  Ring out;
  out.reserve(ring.size());
  for (const auto& p : ring) {
    const Vec2 d = p - origin;
    out.emplace_back(origin.x() + c * d.x() - s * d.y(), origin.y() + s * d.x() + c * d.y());
  }
  return out;
}

inline bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b, double eps) {
  if (std::abs(orient(a, b, p)) > eps) return false;
  return p.x() >= std::min(a.x(), b.x()) - eps && p.x() <= std::max(a.x(), b.x()) + eps &&
         p.y() >= std::min(a.y(), b.y()) - eps && p.y() <= std::max(a.y(), b.y()) + eps;
}

/// True when the segments share any point (touching included).
inline bool segments_touch(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d, double eps) {
  const double d1 = orient(c, d, a), d2 = orient(c, d, b);
  const double d3 = orient(a, b, c), d4 = orient(a, b, d);
  if (((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) &&
      ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps))) {
    return true;
  }
  return on_segment(a, c, d, eps) || on_segment(b, c, d, eps) || on_segment(c, a, b, eps) ||
         on_segment(d, a, b, eps);
}

/// True only for a crossing through both segment interiors at a single point.
inline bool segments_cross_properly(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d,
                                    double eps) {
  const double d1 = orient(c, d, a), d2 = orient(c, d, b);
  const double d3 = orient(a, b, c), d4 = orient(a, b, d);
  return ((d1 > eps && d2 < -eps) || (d1 < -eps && d2 > eps)) &&
         ((d3 > eps && d4 < -eps) || (d3 < -eps && d4 > eps));
}

/// Simple closed polygon test: >= 3 vertices, nonzero area, no touching between
/// non-adjacent edges, and no fold-back between adjacent edges.
inline bool is_simple(const Ring& ring) {
  const std::size_t n = ring.size();
  if (n < 3) return false;
  const double scale = ring_scale(ring);
  const double eps = 1e-12 * scale * scale;
  if (std::abs(signed_area(ring)) <= eps) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if ((ring[i] - ring[(i + 1) % n]).norm() <= 1e-12 * scale) return false;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[(i + 1) % n];
    // adjacent edge (i+1): must not fold back onto edge i
    {
      const Vec2& c = ring[(i + 2) % n];
      if (std::abs(orient(a, b, c)) <= eps && (c - b).dot(a - b) > 0.0) return false;
    }
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      if (segments_touch(a, b, ring[j], ring[(j + 1) % n], eps)) return false;
    }
  }
  return true;
}

/// Winding number of the ring about p (non-zero rule); p on the boundary is unspecified.
inline int winding_number(const Ring& ring, const Vec2& p) {
  int wn = 0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[(i + 1) % n];
    if (a.y() <= p.y()) {
      if (b.y() > p.y() && orient(a, b, p) > 0.0) ++wn;
    } else {
      if (b.y() <= p.y() && orient(a, b, p) < 0.0) --wn;
    }
  }
  return wn;
}

/// Ring with exactly collinear (and duplicate) vertices removed.
inline Ring drop_collinear(const Ring& ring) {
  const double scale = ring_scale(ring);
  const double eps = 1e-14 * scale * scale;
  Ring cur = ring;
  bool changed = true;
  while (changed && cur.size() > 3) {
    changed = false;
    Ring next;
    const std::size_t n = cur.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& prev = next.empty() ? cur[(i + n - 1) % n] : next.back();
      const Vec2& nxt = cur[(i + 1) % n];
      if (std::abs(orient(prev, cur[i], nxt)) <= eps && (prev - cur[i]).dot(nxt - cur[i]) <= 0.0) {
        changed = true;
        continue;
      }
      next.push_back(cur[i]);
    }
    if (next.size() < 3) break;
    cur = std::move(next);
  }
  return cur;
}

/// Ear-clipping triangulation. Triangles keep the orientation of the input ring,
/// so signed quantities summed over them reproduce the ring's signed value.
inline std::vector<std::array<Vec2, 3>> ear_clip(const Ring& input) {
  const Ring ring = drop_collinear(input);
  const std::size_t n = ring.size();
  if (n < 3) throw Error(ErrorKind::DegenerateTriangle, "ring has fewer than 3 distinct vertices");
  const bool ccw = signed_area(ring) > 0.0;
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(ccw ? i : n - 1 - i);

  const double scale = ring_scale(ring);
  const double eps = 1e-14 * scale * scale;
  std::vector<std::array<Vec2, 3>> tris;
  tris.reserve(n - 2);

  auto inside_or_on = [&](const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
    return orient(a, b, p) >= -eps && orient(b, c, p) >= -eps && orient(c, a, p) >= -eps;
  };

  std::size_t cursor = 0;
  while (idx.size() > 3) {
    const std::size_t m = idx.size();
    bool clipped = false;
    for (std::size_t step = 0; step < m; ++step) {
      const std::size_t k = (cursor + step) % m;
      const int ip = idx[(k + m - 1) % m], ic = idx[k], in = idx[(k + 1) % m];
      const Vec2 &a = ring[ip], &b = ring[ic], &c = ring[in];
      const double o = orient(a, b, c);
      if (o <= eps) continue;
      bool ear = true;
      for (std::size_t q = 0; q < m && ear; ++q) {
        const int iv = idx[q];
        if (iv == ip || iv == ic || iv == in) continue;
        const Vec2& p = ring[iv];
        if ((p - a).squaredNorm() == 0.0 || (p - b).squaredNorm() == 0.0 || (p - c).squaredNorm() == 0.0)
          continue;
        if (inside_or_on(p, a, b, c)) ear = false;
      }
      if (!ear) continue;
      if (ccw) {
        tris.push_back({a, b, c});
      } else {
        tris.push_back({c, b, a});
      }
      idx.erase(idx.begin() + static_cast<long>(k));
      cursor = k == 0 ? 0 : k - 1;
      clipped = true;
      break;
    }
    if (!clipped) {
      throw Error(ErrorKind::DegenerateTriangle, "ear clipping found no ear; ring is not simple");
    }
  }
  const Vec2 &a = ring[idx[0]], &b = ring[idx[1]], &c = ring[idx[2]];
  if (std::abs(orient(a, b, c)) <= eps) {
    throw Error(ErrorKind::DegenerateTriangle, "zero-area final triangle");
  }
  if (ccw) {
    tris.push_back({a, b, c});
  } else {
    tris.push_back({c, b, a});
  }
  return tris;
}

/// A point just inside the area enclosed by the ring, next to its longest edge.
inline Vec2 interior_point(const Ring& ring) {
  const std::size_t n = ring.size();
  std::size_t best = 0;
  double len = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = (ring[(i + 1) % n] - ring[i]).norm();
    if (l > len) {
      len = l;
      best = i;
    }
  }
  const Vec2 a = ring[best], b = ring[(best + 1) % n];
  const Vec2 left(-(b - a).y(), (b - a).x());
  const double side = signed_area(ring) > 0.0 ? 1.0 : -1.0;
  return 0.5 * (a + b) + side * 1e-6 * left;
}

inline Ring regular_polygon(const Vec2& center, double radius, int n, double phase = 0.0) {
  Ring r;
  r.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double t = phase + 2.0 * M_PI * k / n;
    r.emplace_back(center.x() + radius * std::cos(t), center.y() + radius * std::sin(t));
  }
  return r;
}

inline Ring reversed(Ring r) {
  std::reverse(r.begin(), r.end());
  return r;
}

}  // namespace geometry
}  // namespace iontrap
