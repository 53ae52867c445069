#pragma once

// Synthetic electrode layouts used by tests, examples and the CLI defaults.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "iontrap/geometry.hpp"
#include "iontrap/layout.hpp"

namespace iontrap::fixtures {

namespace detail {

inline Vec2 arc_point(const Vec2& c, double r, int j, int n, double phase = 0.0) {
  const double t = phase + 2.0 * std::numbers::pi * static_cast<double>(((j % n) + n) % n) / n;
  return {c.x() + r * std::cos(t), c.y() + r * std::sin(t)};
}

// CCW annular sector between arc indices j0 < j1 on an n-gon grid.
inline Ring sector(const Vec2& c, double r_in, double r_out, int j0, int j1, int n) {
  Ring ring;
  for (int j = j0; j <= j1; ++j) ring.push_back(arc_point(c, r_out, j, n));
  if (r_in <= 0.0) {
    ring.push_back(c);
  } else {
    for (int j = j1; j >= j0; --j) ring.push_back(arc_point(c, r_in, j, n));
  }
  return ring;
}

inline Ring circle(const Vec2& c, double r, int n) {
  Ring ring;
  for (int j = 0; j < n; ++j) ring.push_back(arc_point(c, r, j, n));
  return ring;
}

}  // namespace detail

struct TriangleArrayParams {
  double site_radius = 45.9e-6;    // distance of each site island from the array center
  double outer_radius = 115e-6;    // RF disk
  double island_radius = 24e-6;    // control island under each site
  double inner_radius = 12e-6;     // split between inner and outer control rings
  double hole_radius = 2e-6;       // loading hole
  double center_radius = 12e-6;    // central control island
};

/// Site island centers, T0 first, then T0 rotated by +120 and +240 degrees.
inline std::vector<Vec2> triangle_site_centers(const TriangleArrayParams& p = {}) {
  std::vector<Vec2> out;
  for (int k = 0; k < 3; ++k) {
    const double a = std::numbers::pi + k * 2.0 * std::numbers::pi / 3.0;
    out.emplace_back(p.site_radius * std::cos(a), p.site_radius * std::sin(a));
  }
  return out;
}

/// C3-symmetric three-site array: one RF electrode, 30 control electrodes
/// (8 per site island, 6 on the central island) and grounded loading holes.
inline ElectrodeLayout triangle_array(const TriangleArrayParams& p = {}) {
  constexpr int n = 48;
  const Vec2 c0(-p.site_radius, 0.0);

  std::vector<Ring> site_inner, site_outer;
  for (int q = 0; q < 4; ++q) site_inner.push_back(detail::sector(c0, p.hole_radius, p.inner_radius, 12 * q, 12 * q + 12, n));
  for (int q = 0; q < 4; ++q)
    site_outer.push_back(detail::sector(c0, p.inner_radius, p.island_radius, 12 * q + 6, 12 * q + 18, n));
  const Ring island_hole = geometry::reversed(detail::circle(c0, p.island_radius, n));
  const Ring loading = detail::circle(c0, p.hole_radius, n);

  std::vector<Electrode> es;
  Electrode rf{"rf", Role::RF, {detail::circle(Vec2::Zero(), p.outer_radius, 120)}};
  rf.rings.push_back(geometry::reversed(detail::circle(Vec2::Zero(), p.center_radius, n)));
  Electrode ground{"load", Role::Ground, {}};

  for (int s = 0; s < 3; ++s) {
    const double a = s * 2.0 * std::numbers::pi / 3.0;
    auto rot = [&](const Ring& r) { return s == 0 ? r : geometry::rotated(r, a); };
    rf.rings.push_back(rot(island_hole));
    ground.rings.push_back(rot(loading));
    for (int q = 0; q < 4; ++q)
      es.push_back({"t" + std::to_string(s) + "_in" + std::to_string(q), Role::Control, {rot(site_inner[q])}});
    for (int q = 0; q < 4; ++q)
      es.push_back({"t" + std::to_string(s) + "_out" + std::to_string(q), Role::Control, {rot(site_outer[q])}});
  }
  for (int q = 0; q < 6; ++q)
    es.push_back({"c" + std::to_string(q), Role::Control,
                  {detail::sector(Vec2::Zero(), 0.0, p.center_radius, 8 * q, 8 * q + 8, n)}});
  es.insert(es.begin(), std::move(rf));
  es.push_back(std::move(ground));
  return ElectrodeLayout(std::move(es));
}

/// Annular RF electrode around a central island split into four control
/// quadrants; traps a single ion on the symmetry axis.
inline ElectrodeLayout single_ring(double inner = 30e-6, double outer = 90e-6) {
  constexpr int n = 64;
  std::vector<Electrode> es;
  es.push_back({"rf", Role::RF, {detail::circle(Vec2::Zero(), outer, n), geometry::reversed(detail::circle(Vec2::Zero(), inner, n))}});
  for (int q = 0; q < 4; ++q)
    es.push_back({"q" + std::to_string(q), Role::Control, {detail::sector(Vec2::Zero(), 0.0, inner, 16 * q, 16 * q + 16, n)}});
  return ElectrodeLayout(std::move(es));
}

}  // namespace iontrap::fixtures
