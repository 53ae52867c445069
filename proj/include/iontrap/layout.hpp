#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iontrap/error.hpp"
#include "iontrap/geometry.hpp"

namespace iontrap {

enum class Role { RF, Control, Ground };

inline const char* to_string(Role r) {
  switch (r) {
    case Role::RF: return "RF";
    case Role::Control: return "CONTROL";
    case Role::Ground: return "GROUND";
  }
  return "?";
}

struct Electrode {
  std::string id;
  Role role = Role::Control;
  std::vector<Ring> rings;  // meters, z = 0 plane
};

/// Chip frame: origin at the array center, z along the chip normal.
struct Frame {
  Vec2 origin = Vec2::Zero();
};

/// Planar electrode geometry. Control electrodes are indexed 1..control_count in
/// document order; control_indices() maps that index to a position in electrodes().
class ElectrodeLayout {
 public:
  ElectrodeLayout() = default;

  /// Validates on construction; never repairs.
  ElectrodeLayout(std::vector<Electrode> electrodes, Frame frame = {})
      : electrodes_(std::move(electrodes)), frame_(frame) {
    validate();
  }

  const std::vector<Electrode>& electrodes() const { return electrodes_; }
  const Frame& frame() const { return frame_; }
  std::size_t control_count() const { return controls_.size(); }
  const std::vector<std::size_t>& control_indices() const { return controls_; }
  bool has_rf() const { return rf_.has_value(); }
  /// Throws InvalidLayout when the layout carries no RF electrode.
  std::size_t rf_index() const {
    if (!rf_) throw Error(ErrorKind::InvalidLayout, "layout has no RF electrode");
    return *rf_;
  }
  const Electrode& rf() const { return electrodes_[rf_index()]; }
  const Electrode& control(std::size_t k) const { return electrodes_[controls_.at(k)]; }

  std::optional<std::size_t> find(const std::string& id) const {
    for (std::size_t i = 0; i < electrodes_.size(); ++i)
      if (electrodes_[i].id == id) return i;
    return std::nullopt;
  }

 private:
  void validate();

  std::vector<Electrode> electrodes_;
  Frame frame_;
  std::vector<std::size_t> controls_;
  std::optional<std::size_t> rf_;
};

namespace detail {

// Region indicator under the non-zero rule: CCW rings add, CW rings subtract.
inline int region_winding(const Electrode& e, const Vec2& p) {
  int w = 0;
  for (const auto& r : e.rings) w += geometry::winding_number(r, p);
  return w;
}

inline double layout_scale(const std::vector<Electrode>& es) {
  double s = 0.0;
  for (const auto& e : es)
    for (const auto& r : e.rings) s = std::max(s, geometry::ring_scale(r));
  return s > 0.0 ? s : 1.0;
}

}  // namespace detail

inline void ElectrodeLayout::validate() {
  std::set<std::string> ids;
  int rf_count = 0;
  controls_.clear();
  rf_.reset();
  for (std::size_t i = 0; i < electrodes_.size(); ++i) {
    const auto& e = electrodes_[i];
    if (e.id.empty()) throw Error(ErrorKind::Schema, "electrode with empty id");
    if (!ids.insert(e.id).second) throw Error(ErrorKind::DuplicateId, "duplicate electrode id '" + e.id + "'");
    if (e.rings.empty()) throw Error(ErrorKind::Schema, "electrode '" + e.id + "' has no rings");
    for (const auto& r : e.rings) {
      if (r.size() < 3) throw Error(ErrorKind::Schema, "ring of '" + e.id + "' has fewer than 3 vertices");
      for (const auto& p : r)
        if (!std::isfinite(p.x()) || !std::isfinite(p.y()))
          throw Error(ErrorKind::Schema, "non-finite vertex in '" + e.id + "'");
      if (!geometry::is_simple(r))
        throw Error(ErrorKind::SelfIntersection, "ring of '" + e.id + "' is not a simple polygon");
    }
    if (e.role == Role::RF) {
      ++rf_count;
      rf_ = i;
    }
    if (e.role == Role::Control) controls_.push_back(i);
  }
  // A layout of control electrodes alone is valid; RF-dependent operations check has_rf().
  if (rf_count > 1)
    throw Error(ErrorKind::InvalidLayout, "layout allows one RF electrode, found " + std::to_string(rf_count));

  const double scale = detail::layout_scale(electrodes_);
  const double eps = 1e-12 * scale * scale;

  // Every ring must enclose area covered exactly once by its own electrode.
  for (const auto& e : electrodes_) {
    for (std::size_t a = 0; a < e.rings.size(); ++a) {
      for (std::size_t b = a + 1; b < e.rings.size(); ++b) {
        const auto& ra = e.rings[a];
        const auto& rb = e.rings[b];
        for (std::size_t i = 0; i < ra.size(); ++i)
          for (std::size_t j = 0; j < rb.size(); ++j)
            if (geometry::segments_cross_properly(ra[i], ra[(i + 1) % ra.size()], rb[j], rb[(j + 1) % rb.size()], eps))
              throw Error(ErrorKind::SelfIntersection, "rings of '" + e.id + "' cross each other");
      }
      const Vec2 p = geometry::interior_point(e.rings[a]);
      const int w = detail::region_winding(e, p);
      const bool ccw = geometry::signed_area(e.rings[a]) > 0.0;
      if ((ccw && w != 1) || (!ccw && w != 0))
        throw Error(ErrorKind::Overlap, "rings of '" + e.id + "' do not form a valid region");
    }
  }

  // Interiors of distinct electrodes are disjoint; shared edges are fine.
  for (std::size_t i = 0; i < electrodes_.size(); ++i) {
    for (std::size_t j = i + 1; j < electrodes_.size(); ++j) {
      const auto& ea = electrodes_[i];
      const auto& eb = electrodes_[j];
      for (const auto& ra : ea.rings)
        for (const auto& rb : eb.rings)
          for (std::size_t p = 0; p < ra.size(); ++p)
            for (std::size_t q = 0; q < rb.size(); ++q)
              if (geometry::segments_cross_properly(ra[p], ra[(p + 1) % ra.size()], rb[q], rb[(q + 1) % rb.size()], eps))
                throw Error(ErrorKind::Overlap, "electrodes '" + ea.id + "' and '" + eb.id + "' overlap");
      auto covered = [](const Electrode& probe, const Electrode& other) {
        for (const auto& r : probe.rings) {
          if (geometry::signed_area(r) <= 0.0) continue;
          if (detail::region_winding(other, geometry::interior_point(r)) > 0) return true;
        }
        return false;
      };
      if (covered(ea, eb) || covered(eb, ea))
        throw Error(ErrorKind::Overlap, "electrodes '" + ea.id + "' and '" + eb.id + "' overlap");
    }
  }
}

// ---------------------------------------------------------------------------
// Document format (JSON):
//   { "frame": {"origin_m": [x, y]},
//     "electrodes": [ {"id": "...", "role": "RF|CONTROL|GROUND",
//                      "rings": [ [[x, y], ...], ... ]}, ... ] }

namespace detail {

inline Role parse_role(const std::string& s) {
  if (s == "RF") return Role::RF;
  if (s == "CONTROL") return Role::Control;
  if (s == "GROUND") return Role::Ground;
  throw Error(ErrorKind::Schema, "unknown electrode role '" + s + "'");
}

inline void require_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::Schema, where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw Error(ErrorKind::Schema, "unexpected key '" + key + "' in " + where);
  }
}

inline Vec2 parse_point(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw Error(ErrorKind::Schema, where + ": expected [x, y] number pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline ElectrodeLayout layout_from_json(const nlohmann::json& doc) {
  detail::require_keys(doc, {"frame", "electrodes"}, "layout document");
  Frame frame;
  if (doc.contains("frame")) {
    detail::require_keys(doc["frame"], {"origin_m"}, "frame");
    if (doc["frame"].contains("origin_m")) frame.origin = detail::parse_point(doc["frame"]["origin_m"], "frame.origin_m");
  }
  if (!doc.contains("electrodes") || !doc["electrodes"].is_array())
    throw Error(ErrorKind::Schema, "layout document needs an 'electrodes' array");
  std::vector<Electrode> electrodes;
  for (const auto& je : doc["electrodes"]) {
    detail::require_keys(je, {"id", "role", "rings"}, "electrode");
    if (!je.contains("id") || !je["id"].is_string()) throw Error(ErrorKind::Schema, "electrode needs string 'id'");
    if (!je.contains("role") || !je["role"].is_string()) throw Error(ErrorKind::Schema, "electrode needs string 'role'");
    if (!je.contains("rings") || !je["rings"].is_array()) throw Error(ErrorKind::Schema, "electrode needs 'rings' array");
    Electrode e;
    e.id = je["id"].get<std::string>();
    e.role = detail::parse_role(je["role"].get<std::string>());
    for (const auto& jr : je["rings"]) {
      if (!jr.is_array()) throw Error(ErrorKind::Schema, "ring of '" + e.id + "' must be an array");
      Ring ring;
      for (const auto& jp : jr) ring.push_back(detail::parse_point(jp, "vertex of '" + e.id + "'"));
      e.rings.push_back(std::move(ring));
    }
    electrodes.push_back(std::move(e));
  }
  return ElectrodeLayout(std::move(electrodes), frame);
}

inline ElectrodeLayout parse_layout(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Schema, std::string("layout is not valid JSON: ") + e.what());
  }
  return layout_from_json(doc);
}

inline nlohmann::ordered_json layout_to_json(const ElectrodeLayout& layout) {
  nlohmann::ordered_json doc;
  doc["frame"]["origin_m"] = {layout.frame().origin.x(), layout.frame().origin.y()};
  doc["electrodes"] = nlohmann::ordered_json::array();
  for (const auto& e : layout.electrodes()) {
    nlohmann::ordered_json je;
    je["id"] = e.id;
    je["role"] = to_string(e.role);
    je["rings"] = nlohmann::ordered_json::array();
    for (const auto& r : e.rings) {
      nlohmann::ordered_json jr = nlohmann::ordered_json::array();
      for (const auto& p : r) jr.push_back({p.x(), p.y()});
      je["rings"].push_back(std::move(jr));
    }
    doc["electrodes"].push_back(std::move(je));
  }
  return doc;
}

inline std::string serialize_layout(const ElectrodeLayout& layout) {
  return layout_to_json(layout).dump(1) + "\n";
}

inline ElectrodeLayout load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open layout '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

inline void save_layout(const ElectrodeLayout& layout, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write layout '" + path + "'");
  out << serialize_layout(layout);
}

/// Rotates every vertex about the frame origin; ids and roles are preserved.
inline ElectrodeLayout rotate_layout(const ElectrodeLayout& layout, double angle) {
  std::vector<Electrode> es = layout.electrodes();
  for (auto& e : es)
    for (auto& r : e.rings) r = geometry::rotated(r, angle, layout.frame().origin);
  return ElectrodeLayout(std::move(es), layout.frame());
}

namespace detail {

inline bool rings_equal_cyclic(const Ring& a, const Ring& b, double tol) {
  if (a.size() != b.size()) return false;
  const std::size_t n = a.size();
  for (std::size_t shift = 0; shift < n; ++shift) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) ok = (a[i] - b[(i + shift) % n]).norm() <= tol;
    if (ok) return true;
  }
  return false;
}

inline bool electrodes_equal(const Electrode& a, const Electrode& b, double tol) {
  if (a.role != b.role || a.rings.size() != b.rings.size()) return false;
  std::vector<bool> used(b.rings.size(), false);
  for (const auto& ra : a.rings) {
    bool found = false;
    for (std::size_t j = 0; j < b.rings.size() && !found; ++j) {
      if (!used[j] && rings_equal_cyclic(ra, b.rings[j], tol)) used[j] = found = true;
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace detail

/// If both layouts hold the same polygons up to a relabeling of electrodes,
/// returns perm with a.electrodes()[i] matching b.electrodes()[perm[i]].
inline std::optional<std::vector<std::size_t>> match_electrodes(const ElectrodeLayout& a, const ElectrodeLayout& b,
                                                                double tol) {
  if (a.electrodes().size() != b.electrodes().size()) return std::nullopt;
  std::vector<std::size_t> perm(a.electrodes().size());
  std::vector<bool> used(b.electrodes().size(), false);
  for (std::size_t i = 0; i < a.electrodes().size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < b.electrodes().size() && !found; ++j) {
      if (!used[j] && detail::electrodes_equal(a.electrodes()[i], b.electrodes()[j], tol)) {
        used[j] = found = true;
        perm[i] = j;
      }
    }
    if (!found) return std::nullopt;
  }
  return perm;
}

}  // namespace iontrap
