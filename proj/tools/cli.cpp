#include "iontrap/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "iontrap/control.hpp"
#include "iontrap/dynamics.hpp"
#include "iontrap/fields.hpp"
#include "iontrap/layout.hpp"
#include "iontrap/rfshape.hpp"
#include "iontrap/trap.hpp"
#include "iontrap/waveform.hpp"

namespace iontrap::cli {
namespace {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- config access ---------------------------------------------------------

const json& section(const json& cfg, const std::string& key) {
  if (!cfg.is_object() || !cfg.contains(key) || !cfg.at(key).is_object())
    throw ConfigError("config needs an object '" + key + "'");
  return cfg.at(key);
}

bool has(const json& o, const std::string& key) { return o.is_object() && o.contains(key) && !o.at(key).is_null(); }

double num(const json& o, const std::string& key) {
  if (!has(o, key) || !o.at(key).is_number()) throw ConfigError("missing numeric key '" + key + "'");
  return o.at(key).get<double>();
}

double num(const json& o, const std::string& key, double fallback) { return has(o, key) ? num(o, key) : fallback; }

int integer(const json& o, const std::string& key, int fallback) {
  if (!has(o, key)) return fallback;
  if (!o.at(key).is_number_integer()) throw ConfigError("key '" + key + "' must be an integer");
  return o.at(key).get<int>();
}

std::string text(const json& o, const std::string& key, const std::string& fallback) {
  if (!has(o, key)) return fallback;
  if (!o.at(key).is_string()) throw ConfigError("key '" + key + "' must be a string");
  return o.at(key).get<std::string>();
}

std::vector<double> nums(const json& v, const std::string& what) {
  if (!v.is_array()) throw ConfigError(what + " must be an array of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(what + " must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<double> nums(const json& o, const std::string& key, std::size_t size) {
  if (!has(o, key)) throw ConfigError("missing array key '" + key + "'");
  auto v = nums(o.at(key), key);
  if (size && v.size() != size) throw ConfigError("key '" + key + "' needs " + std::to_string(size) + " entries");
  return v;
}

Vec3 as_vec3(const json& v, const std::string& what) {
  const auto a = nums(v, what);
  if (a.size() != 3) throw ConfigError(what + " needs 3 entries");
  return {a[0], a[1], a[2]};
}

Vec3 vec3(const json& o, const std::string& key) {
  if (!has(o, key)) throw ConfigError("missing key '" + key + "'");
  return as_vec3(o.at(key), key);
}

Mat3 mat3(const json& o, const std::string& key) {
  if (!has(o, key) || !o.at(key).is_array() || o.at(key).size() != 3) throw ConfigError("key '" + key + "' must be a 3x3 array");
  Mat3 m;
  for (int i = 0; i < 3; ++i) m.row(i) = as_vec3(o.at(key)[static_cast<std::size_t>(i)], key).transpose();
  return m;
}

std::vector<Vec3> points(const json& o, const std::string& key) {
  if (!has(o, key) || !o.at(key).is_array()) throw ConfigError("key '" + key + "' must be an array of [x, y, z]");
  std::vector<Vec3> out;
  for (const auto& p : o.at(key)) out.push_back(as_vec3(p, key));
  return out;
}

/// Explicit list under `key`, else an evenly spaced grid from key_min/key_max/steps.
std::vector<double> axis(const json& o, const std::string& list_key, const std::string& lo_key, const std::string& hi_key,
                         int default_steps) {
  if (has(o, list_key)) return nums(o.at(list_key), list_key);
  const double lo = num(o, lo_key), hi = num(o, hi_key);
  const int steps = integer(o, "steps", default_steps);
  if (steps < 1) throw ConfigError("steps must be at least 1");
  std::vector<double> out;
  for (int i = 0; i < steps; ++i) out.push_back(steps == 1 ? lo : lo + (hi - lo) * i / (steps - 1));
  return out;
}

// ---- output ----------------------------------------------------------------

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

class Csv {
 public:
  Csv(const std::filesystem::path& path, const char* header) : path_(path), f_(path) {
    if (!f_) throw Error(ErrorKind::Io, "cannot write " + path.string());
    f_ << header << '\n';
  }
  template <class... T>
  void row(const T&... cells) {
    bool first = true;
    ((f_ << (first ? "" : ",") << cell(cells), first = false), ...);
    f_ << '\n';
  }
  ~Csv() = default;

 private:
  static std::string cell(double v) { return fmt(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  std::filesystem::path path_;
  std::ofstream f_;
};

struct Context {
  json cfg = json::object();
  std::string layout_path;
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = default_seed;
  std::ostream* out = nullptr;

  IonSpecies species() const {
    IonSpecies s;
    if (has(cfg, "species")) {
      const auto& o = cfg.at("species");
      s.mass = num(o, "mass_kg", s.mass);
      s.charge = num(o, "charge_C", s.charge);
      s.label = text(o, "label", s.label);
    }
    return s;
  }
  RFDrive drive() const {
    RFDrive d;
    if (has(cfg, "drive")) {
      const auto& o = cfg.at("drive");
      d.omega_rf = num(o, "omega_rf_rad_s", d.omega_rf);
      d.u_rf = num(o, "u_rf_V", d.u_rf);
    }
    return d;
  }
  ElectrodeLayout layout() const {
    if (layout_path.empty()) throw ConfigError("this command needs --layout");
    return load_layout(layout_path);
  }
  std::filesystem::path file(const std::string& name) const { return out_dir / name; }
};

Eigen::VectorXd control_volts(const json& o, std::size_t n) {
  if (!has(o, "control_volts_V")) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const auto v = nums(o.at("control_volts_V"), "control_volts_V");
  if (v.size() != n) throw ConfigError("control_volts_V needs one entry per control electrode (" + std::to_string(n) + ")");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class... T>
void mode_cells(Csv& csv, const ModeStructure& m, const T&... lead) {
  csv.row(lead..., rad_to_hz(m.omega[0]), rad_to_hz(m.omega[1]), rad_to_hz(m.omega[2]), m.vectors(0, 0), m.vectors(1, 0),
          m.vectors(2, 0), m.vectors(0, 1), m.vectors(1, 1), m.vectors(2, 1), m.vectors(0, 2), m.vectors(1, 2),
          m.vectors(2, 2));
}

// ---- commands --------------------------------------------------------------

void cmd_sites(const Context& ctx) {
  const json o = has(ctx.cfg, "sites") ? ctx.cfg.at("sites") : json::object();
  FieldModel fields(ctx.layout());
  const auto volts = control_volts(o, fields.control_count());
  TrapModel model(std::move(fields), ctx.drive(), ctx.species(), volts);
  SearchRegion region;
  if (has(o, "region_lo_m")) region.lo = vec3(o, "region_lo_m");
  if (has(o, "region_hi_m")) region.hi = vec3(o, "region_hi_m");
  if (has(o, "samples")) {
    const auto s = nums(o, "samples", 3);
    region.samples = {static_cast<int>(s[0]), static_cast<int>(s[1]), static_cast<int>(s[2])};
  }
  const bool saddles = has(o, "include_saddles") && o.at("include_saddles").get<bool>();
  const auto sites = find_sites(model, region);
  Csv csv(ctx.file("sites.csv"), sites_header);
  int idx = 0;
  for (const auto& s : sites) {
    if (!saddles && s.kind != SiteKind::Minimum) continue;
    const auto m = mode_analysis(s.curvature, model.species());
    mode_cells(csv, m, idx++, s.position.x(), s.position.y(), s.position.z(), std::string(to_string(s.kind)),
               s.negative_count);
  }
  *ctx.out << "sites: " << idx << " rows\n";
}

void cmd_modes(const Context& ctx) {
  const json& o = section(ctx.cfg, "modes");
  FieldModel fields(ctx.layout());
  const auto volts = control_volts(o, fields.control_count());
  TrapModel model(std::move(fields), ctx.drive(), ctx.species(), volts);
  Csv csv(ctx.file("modes.csv"), modes_header);
  int idx = 0;
  for (const auto& r : points(o, "positions_m")) {
    const auto m = mode_analysis(model.eval(r, 2).hessian, model.species());
    csv.row(idx++, r.x(), r.y(), r.z(), rad_to_hz(m.omega[0]), rad_to_hz(m.omega[1]), rad_to_hz(m.omega[2]),
            m.curvature[0], m.curvature[1], m.curvature[2], m.all_stable(), m.vectors(0, 0), m.vectors(1, 0),
            m.vectors(2, 0), m.vectors(0, 1), m.vectors(1, 1), m.vectors(2, 1), m.vectors(0, 2), m.vectors(1, 2),
            m.vectors(2, 2));
  }
  *ctx.out << "modes: " << idx << " rows\n";
}

std::vector<ConstraintTarget> parse_targets(const json& o) {
  const auto sites = points(o, "sites_m");
  if (has(o, "family")) return family_target(parse_family(text(o, "family", "")), sites);
  if (!has(o, "targets") || !o.at("targets").is_array()) throw ConfigError("solve_control needs 'family' or 'targets'");
  std::vector<ConstraintTarget> out;
  for (const auto& s : sites) out.push_back({s, std::nullopt, std::nullopt});
  for (const auto& t : o.at("targets")) {
    const int k = integer(t, "site", -1);
    if (k < 0 || k >= static_cast<int>(out.size())) throw ConfigError("target site index out of range");
    auto& c = out[static_cast<std::size_t>(k)];
    if (has(t, "gradient_V_per_m")) c.gradient = vec3(t, "gradient_V_per_m");
    if (has(t, "curvature_V_per_m2")) {
      const auto v = nums(t, "curvature_V_per_m2", 5);
      c.curvature = Curvature5{v[0], v[1], v[2], v[3], v[4]};
    }
  }
  return out;
}

void cmd_solve_control(const Context& ctx) {
  const json& o = section(ctx.cfg, "solve_control");
  FieldModel fields(ctx.layout());
  const auto targets = parse_targets(o);
  const std::string norm = text(o, "norm", "euclidean");
  if (norm != "euclidean" && norm != "max_abs") throw ConfigError("norm must be 'euclidean' or 'max_abs'");
  auto sol = solve_control(fields, targets, norm == "max_abs" ? VoltageNorm::MaxAbs : VoltageNorm::Euclidean,
                           num(o, "rank_tol", 1e-10), num(o, "residual_tol", 1e-9));
  sol.set.label = text(o, "family", text(o, "label", "custom"));
  const Eigen::VectorXd v = sol.set.volts();
  {
    Csv csv(ctx.file("voltages.csv"), voltages_header);
    for (std::size_t k = 0; k < fields.control_count(); ++k)
      csv.row(fields.layout().control(k).id, v[static_cast<Eigen::Index>(k)]);
  }
  {
    Csv csv(ctx.file("control_residuals.csv"), residuals_header);
    for (std::size_t k = 0; k < sol.residuals.size(); ++k) {
      const auto& r = sol.residuals[k];
      csv.row(k, r.site.x(), r.site.y(), r.site.z(), r.gradient_error, r.curvature_error, r.gradient_free,
              r.curvature_free);
    }
  }
  Csv csv(ctx.file("control_summary.csv"), control_summary_header);
  csv.row(sol.set.label, sol.set.u_c, sol.rank, sol.nullspace_dim, sol.max_relative_residual);
  *ctx.out << "solve-control: U_c = " << fmt(sol.set.u_c) << " V, rank " << sol.rank << "\n";
}

void cmd_sweep(const Context& ctx) {
  const json& o = section(ctx.cfg, "sweep");
  const auto us = axis(o, "u_V", "u_min_V", "u_max_V", 81);
  const std::string kind = text(o, "kind", "detuning");
  const auto species = ctx.species();
  if (kind == "detuning") {
    const double omega = num(o, "omega_rad_s"), c = num(o, "c_per_m2");
    Csv csv(ctx.file("sweep.csv"), sweep_detuning_header);
    for (double u : us) csv.row(u, rad_to_hz(predict_detuning(omega, c, u, species)));
  } else if (kind == "rotation") {
    const Mat3 phi = mat3(o, "phi_ini_V_per_m2"), kappa = mat3(o, "kappa_per_m2");
    Csv csv(ctx.file("sweep.csv"), sweep_rotation_header);
    const double qm = species.charge_to_mass();
    for (double u : us) {
      const auto r = predict_rotation(phi, kappa, u, species);
      csv.row(u, r.angle_deg, r.angle_3d_deg, rad_to_hz(std::sqrt(qm * r.in_plane_curvatures[0])),
              rad_to_hz(std::sqrt(qm * r.in_plane_curvatures[1])));
    }
  } else {
    throw ConfigError("sweep kind must be 'detuning' or 'rotation'");
  }
  *ctx.out << "sweep: " << us.size() << " rows\n";
}

void cmd_rfopt(const Context& ctx) {
  const json& o = section(ctx.cfg, "rfopt");
  GridSpec grid;
  if (has(o, "grid")) {
    const auto& g = o.at("grid");
    grid.nx = integer(g, "nx", grid.nx);
    grid.ny = integer(g, "ny", grid.ny);
    grid.pitch = num(g, "pitch_m", grid.pitch);
    grid.angle = num(g, "angle_rad", grid.angle);
    if (has(g, "center_m")) {
      const auto c = nums(g, "center_m", 2);
      grid.center = {c[0], c[1]};
    }
  }
  const auto res = lp_optimize(ShapeObjective::with_default_directions(points(o, "sites_m")), grid);
  {
    Csv csv(ctx.file("pattern.csv"), pattern_header);
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i) {
        const Vec2 c = 0.25 * (grid.corner(i, j) + grid.corner(i + 1, j) + grid.corner(i + 1, j + 1) + grid.corner(i, j + 1));
        csv.row(j, i, c.x(), c.y(), res.pattern.values(j, i));
      }
  }
  const auto ex = extract_polygons(res.pattern, num(o, "threshold", 0.5));
  save_layout(ex.layout, ctx.file("rf_layout.json").string());
  Csv csv(ctx.file("rfopt_report.csv"), rfopt_report_header);
  const auto& cert = res.certificate;
  csv.row(res.objective, ex.fragmentation, res.fractional_pixels, res.equality_rows, cert.iterations,
          cert.primal_residual, cert.dual_infeasibility, cert.complementary_slackness);
  *ctx.out << "rfopt: objective " << fmt(res.objective) << ", fragmentation " << ex.fragmentation << "\n";
}

Transition parse_transition(const std::string& kind, int mode) {
  if (kind == "carrier") return {TransitionKind::Carrier, 0};
  if (kind == "blue" || kind == "bsb") return {TransitionKind::Blue, mode};
  if (kind == "red" || kind == "rsb") return {TransitionKind::Red, mode};
  throw Error(ErrorKind::UnknownKind, "unknown transition '" + kind + "'");
}

const char* transition_name(TransitionKind k) {
  return k == TransitionKind::Carrier ? "carrier" : k == TransitionKind::Blue ? "blue" : "red";
}

void sim_flop(const Context& ctx, const json& o) {
  SpinMotionState st;
  st.p_down = num(o, "p_down", 1.0);
  st.p_up = 1.0 - st.p_down;
  if (has(o, "fock_populations")) {
    for (const auto& m : o.at("fock_populations")) st.modes.push_back(nums(m, "fock_populations"));
  } else {
    for (double nb : nums(o, "nbar", 0)) st.modes.push_back(thermal_populations(nb));
  }
  const auto etas = nums(o, "etas", st.modes.size());
  const auto tr = parse_transition(text(o, "transition", "carrier"), integer(o, "mode", 0));
  const auto times = axis(o, "times_s", "t_min_s", "t_max_s", 101);
  const auto p = flop_curve(st, tr, num(o, "rabi0_rad_s"), etas, times);
  Csv csv(ctx.file("flop.csv"), flop_header);
  for (std::size_t i = 0; i < times.size(); ++i) csv.row(times[i], p[i]);
}

FlopFitSetup fit_setup(const json& o) {
  FlopFitSetup s;
  const auto e = nums(o, "eta_max", 2);
  s.eta_max = {e[0], e[1]};
  s.phi_lo = num(o, "phi_lo_deg", s.phi_lo * 180.0 / std::numbers::pi) * std::numbers::pi / 180.0;
  s.phi_hi = num(o, "phi_hi_deg", s.phi_hi * 180.0 / std::numbers::pi) * std::numbers::pi / 180.0;
  s.phi_steps = integer(o, "phi_steps", s.phi_steps);
  s.nbar_guess = num(o, "nbar_guess", s.nbar_guess);
  return s;
}

void sim_flop_data(const Context& ctx, const json& o) {
  const auto setup = fit_setup(o);
  FlopModelParams truth;
  truth.phi = num(o, "phi_deg") * std::numbers::pi / 180.0;
  const auto nb = nums(o, "nbar", 2);
  truth.nbar = {nb[0], nb[1]};
  truth.rabi0 = num(o, "rabi0_rad_s");
  const int shots = integer(o, "shots", 250);
  std::vector<FlopDataset> layout;
  if (!has(o, "datasets") || !o.at("datasets").is_array()) throw ConfigError("flop-data needs 'datasets'");
  for (const auto& d : o.at("datasets")) {
    FlopDataset ds;
    ds.transition = parse_transition(text(d, "transition", "carrier"), integer(d, "mode", 0));
    ds.times = axis(d, "times_s", "t_min_s", "t_max_s", 50);
    ds.shots = shots;
    layout.push_back(ds);
  }
  const auto data = simulate_flop_data(truth, setup, layout, ctx.seed);
  Csv csv(ctx.file("flop_data.csv"), flop_data_header);
  for (const auto& d : data)
    for (std::size_t i = 0; i < d.times.size(); ++i)
      csv.row(std::string(transition_name(d.transition.kind)), d.transition.mode, d.times[i], d.p_down[i], d.shots);
}

void sim_thermometry(const Context& ctx, const json& o) {
  Csv csv(ctx.file("thermometry.csv"), thermometry_header);
  for (double r : nums(o, "ratios", 0)) csv.row(r, sideband_thermometry(r));
}

void sim_heating(const Context& ctx, const json& o) {
  const double nbar0 = num(o, "nbar0");
  const auto rates = nums(o, "rates_quanta_per_s", 0);
  const auto times = axis(o, "times_s", "t_min_s", "t_max_s", 11);
  Csv csv(ctx.file("heating.csv"), heating_header);
  for (double t : times)
    for (std::size_t m = 0; m < rates.size(); ++m) csv.row(t, m, rates[m], heating_evolution(nbar0, rates[m], t));
}

void sim_tickle(const Context& ctx, const json& o) {
  const double e = num(o, "field_V_per_m"), w = num(o, "omega_rad_s"), t = num(o, "t_exc_s");
  const auto species = ctx.species();
  Csv csv(ctx.file("tickle.csv"), tickle_header);
  for (double we : axis(o, "omega_exc_rad_s", "omega_exc_min_rad_s", "omega_exc_max_rad_s", 101)) {
    const auto r = tickle_response(e, we, t, w, species);
    csv.row(we, r.amplitude, r.resonant_estimate, r.steady_amplitude, r.detectable);
  }
}

void sim_exchange(const Context& ctx, const json& o) {
  const double w = num(o, "omega_rad_s");
  const auto species = ctx.species();
  Csv csv(ctx.file("exchange.csv"), exchange_header);
  for (double d : nums(o, "distances_m", 0)) {
    const double r = exchange_rate(d, w, species);
    csv.row(d, w, r, rad_to_hz(r));
  }
}

void sim_micromotion(const Context& ctx, const json& o) {
  const auto species = ctx.species();
  const auto modes = mode_analysis(mat3(o, "curvature_V_per_m2"), species);
  const auto geom = RamanGeometry::crossed_beams(num(o, "wavelength_m", 280e-9),
                                                 has(o, "delta_k_direction") ? vec3(o, "delta_k_direction") : Vec3::UnitX());
  const auto r = micromotion_analysis(vec3(o, "stray_field_V_per_m"), modes, ctx.drive(), geom, species);
  Csv csv(ctx.file("micromotion.csv"), micromotion_header);
  csv.row(r.displacement.x(), r.displacement.y(), r.displacement.z(), r.amplitude.x(), r.amplitude.y(), r.amplitude.z(),
          r.q[0], r.q[1], r.q[2], r.modulation_index, r.z_sensitivity);
}

void sim_detection(const Context& ctx, const json& o) {
  DetectionModel m;
  m.bright_mean = num(o, "bright_mean", m.bright_mean);
  m.dark_mean = num(o, "dark_mean", m.dark_mean);
  m.duration = num(o, "duration_s", m.duration);
  m.threshold = integer(o, "threshold", m.threshold);
  const int shots = integer(o, "shots", 250);
  const auto ps = nums(o, "p_down", 0);
  Csv csv(ctx.file("detection.csv"), detection_header);
  Csv hist(ctx.file("detection_histogram.csv"), histogram_header);
  for (std::size_t k = 0; k < ps.size(); ++k) {
    const auto r = simulate_detection(ps[k], m, shots, ctx.seed, k);
    csv.row(ps[k], shots, r.threshold, r.inferred_p_down, expected_readout(ps[k], m), r.mean_counts);
    for (std::size_t c = 0; c < r.histogram.size(); ++c) hist.row(ps[k], c, r.histogram[c]);
  }
}

void sim_ramp(const Context& ctx, const json& o) {
  ControlSet a{Eigen::VectorXd::Ones(1), num(o, "u_start_V"), "a"};
  ControlSet b{Eigen::VectorXd::Ones(1), num(o, "u_end_V"), "b"};
  const double rate = num(o, "update_rate_Hz", default_update_rate);
  const auto wf = make_ramp(a, b, num(o, "t_ramp_s"), parse_ramp_shape(text(o, "shape", "linear")), rate);
  const auto& u = wf.channel(0);
  const auto r = ramp_check(u, 1.0 / rate, num(o, "c_per_m2"), num(o, "omega0_rad_s"), ctx.species());
  Csv csv(ctx.file("ramp.csv"), ramp_header);
  for (std::size_t k = 0; k < u.size(); ++k) csv.row(wf.time(k), u[k], r.omega[k], r.epsilon[k]);
  *ctx.out << "ramp: max epsilon " << fmt(r.max_epsilon) << (r.adiabatic ? " (adiabatic)\n" : " (NOT adiabatic)\n");
}

std::vector<FlopDataset> read_flop_data(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot read " + path);
  std::string line;
  std::getline(f, line);
  if (line != flop_data_header) throw ConfigError("flop data must start with header '" + std::string(flop_data_header) + "'");
  std::vector<FlopDataset> out;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string kind, mode, t, p, shots;
    if (!std::getline(ss, kind, ',') || !std::getline(ss, mode, ',') || !std::getline(ss, t, ',') ||
        !std::getline(ss, p, ',') || !std::getline(ss, shots))
      throw ConfigError("malformed flop data line " + std::to_string(lineno));
    try {
      const Transition tr = parse_transition(kind, std::stoi(mode));
      if (out.empty() || out.back().transition.kind != tr.kind || out.back().transition.mode != tr.mode)
        out.push_back({tr, {}, {}, std::stoi(shots)});
      out.back().times.push_back(std::stod(t));
      out.back().p_down.push_back(std::stod(p));
    } catch (const std::logic_error&) {
      throw ConfigError("malformed number on flop data line " + std::to_string(lineno));
    }
  }
  return out;
}

void cmd_fit_flop(const Context& ctx) {
  const json& o = section(ctx.cfg, "fit_flop");
  const auto data = read_flop_data(text(o, "data_csv", ""));
  const auto fit = fit_flopping(data, fit_setup(o));
  Csv csv(ctx.file("fit.csv"), fit_header);
  csv.row(fit.phi_deg, fit.stderr_[0], fit.params.nbar[0], fit.stderr_[1], fit.params.nbar[1], fit.stderr_[2],
          fit.params.rabi0, fit.stderr_[3], fit.chi2);
  *ctx.out << "fit-flop: phi = " << fmt(fit.phi_deg) << " deg\n";
}

ControlSet literal_set(const json& o, const std::string& key) {
  const auto v = nums(o, key, 0);
  return {Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())), 1.0, key};
}

void cmd_waveform(const Context& ctx) {
  const json& o = section(ctx.cfg, "waveform");
  const double rate = num(o, "update_rate_Hz", default_update_rate);
  if (!has(o, "segments") || !o.at("segments").is_array() || o.at("segments").empty())
    throw ConfigError("waveform needs a non-empty 'segments' array");
  std::vector<std::string> ids;
  if (has(o, "channel_ids"))
    for (const auto& s : o.at("channel_ids")) ids.push_back(s.get<std::string>());
  std::optional<Waveform> wf;
  for (const auto& seg : o.at("segments")) {
    const std::string kind = text(seg, "kind", "");
    Waveform part;
    if (kind == "static") {
      part = make_static(literal_set(seg, "volts"), num(seg, "duration_s"), rate, ids);
    } else if (kind == "ramp") {
      part = make_ramp(literal_set(seg, "from_V"), literal_set(seg, "to_V"), num(seg, "duration_s"),
                       parse_ramp_shape(text(seg, "shape", "linear")), rate, ids);
    } else {
      throw ConfigError("segment kind must be 'static' or 'ramp'");
    }
    wf = wf ? concatenate(*wf, part) : part;
  }
  if (has(o, "tones"))
    for (const auto& t : o.at("tones"))
      wf = add_tone(*wf, text(t, "channel", ""), num(t, "omega_rad_s"), num(t, "amp_V"), num(t, "t_start_s", 0.0),
                    num(t, "t_window_s"));
  export_waveform(*wf, ctx.file("waveform.bin").string());
  std::ofstream csv(ctx.file("waveform.csv"));
  csv << waveform_csv(*wf);
  if (!csv) throw Error(ErrorKind::Io, "cannot write waveform.csv");
  *ctx.out << "waveform: " << wf->channel_count() << " channels x " << wf->length() << " samples\n";
}

void cmd_field_sample(const Context& ctx) {
  const json& o = section(ctx.cfg, "field_sample");
  const auto layout = ctx.layout();
  const std::string id = text(o, "electrode", "");
  const auto idx = layout.find(id);
  if (!idx) throw ConfigError("no electrode '" + id + "' in layout");
  const BasisPotential basis(layout.electrodes()[*idx]);
  std::vector<Vec3> pts;
  if (has(o, "points_m")) {
    pts = points(o, "points_m");
  } else {
    const Vec3 lo = vec3(o, "lo_m"), hi = vec3(o, "hi_m");
    const auto s = nums(o, "samples", 3);
    const int n[3] = {static_cast<int>(s[0]), static_cast<int>(s[1]), static_cast<int>(s[2])};
    for (int d = 0; d < 3; ++d)
      if (n[d] < 1) throw ConfigError("samples must be positive");
    auto at = [&](int d, int i) { return n[d] == 1 ? lo[d] : lo[d] + (hi[d] - lo[d]) * i / (n[d] - 1); };
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) pts.emplace_back(at(0, i), at(1, j), at(2, k));
  }
  Csv csv(ctx.file("field_sample.csv"), field_sample_header);
  for (const auto& r : pts) {
    const auto f = basis_eval(basis, r, 2);
    const auto& h = f.hessian;
    csv.row(r.x(), r.y(), r.z(), f.value, f.gradient.x(), f.gradient.y(), f.gradient.z(), h(0, 0), h(0, 1), h(0, 2),
            h(1, 1), h(1, 2), h(2, 2));
  }
  *ctx.out << "field-sample: " << pts.size() << " rows\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Surface-electrode ion-trap design and analysis toolkit", "iontrap"};
  app.require_subcommand(1);
  Context ctx;
  ctx.out = &out;
  std::string config_path, out_dir = ".";
  app.add_option("--layout", ctx.layout_path, "electrode layout (JSON)");
  app.add_option("--config", config_path, "run configuration (JSON)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", ctx.seed, "random seed");

  std::function<void(const Context&)> action;
  auto bind = [&](CLI::App* sub, std::function<void(const Context&)> f) {
    sub->fallthrough();
    sub->callback([&action, f] { action = f; });
  };
  bind(app.add_subcommand("sites", "find trap sites and their modes"), cmd_sites);
  bind(app.add_subcommand("modes", "normal modes at given positions"), cmd_modes);
  bind(app.add_subcommand("solve-control", "minimum-norm control voltages"), cmd_solve_control);
  bind(app.add_subcommand("sweep", "detuning or rotation versus control amplitude"), cmd_sweep);
  bind(app.add_subcommand("rfopt", "LP-optimized RF electrode pattern"), cmd_rfopt);
  bind(app.add_subcommand("fit-flop", "fit carrier and sideband flopping data"), cmd_fit_flop);
  bind(app.add_subcommand("waveform", "build and export a control waveform"), cmd_waveform);
  bind(app.add_subcommand("field-sample", "sample one electrode's basis potential"), cmd_field_sample);

  auto* sim = app.add_subcommand("simulate", "forward-simulate a calibration experiment");
  sim->fallthrough();
  sim->require_subcommand(1);
  const std::vector<std::pair<std::string, void (*)(const Context&, const json&)>> sims = {
      {"flop", sim_flop},         {"flop-data", sim_flop_data}, {"thermometry", sim_thermometry},
      {"heating", sim_heating},   {"tickle", sim_tickle},       {"exchange", sim_exchange},
      {"micromotion", sim_micromotion}, {"detection", sim_detection}, {"ramp", sim_ramp}};
  for (const auto& [name, fn] : sims) {
    const std::string key = name;
    auto f = fn;
    bind(sim->add_subcommand(name, "simulate " + name),
         [key, f](const Context& c) { f(c, section(section(c.cfg, "simulate"), key)); });
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_config;
  }

  try {
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot read config '" + config_path + "'");
      ctx.cfg = json::parse(f);
      if (!ctx.cfg.is_object()) throw ConfigError("config must be a JSON object");
      if (has(ctx.cfg, "seed") && app.count("--seed") == 0) ctx.seed = ctx.cfg.at("seed").get<std::uint64_t>();
    }
    ctx.out_dir = out_dir;
    std::filesystem::create_directories(ctx.out_dir);
    if (!action) throw ConfigError("no command given");
    action(ctx);
    return exit_ok;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const ConstraintError& e) {
    err << "error: " << e.what() << '\n';
    for (const auto& r : e.rows()) err << "  dependent row: " << r << '\n';
    return exit_computation;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    const bool config = e.kind() == ErrorKind::Schema || e.kind() == ErrorKind::Io || e.kind() == ErrorKind::UnknownKind;
    return config ? exit_config : exit_computation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return exit_config;
  }
}

}  // namespace iontrap::cli
