#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <cstdint>
#include <numbers>
#include <random>
#include <set>
#include <array>
#include <vector>

#include "iontrap/error.hpp"
#include "iontrap/physics.hpp"
#include "iontrap/trap.hpp"

namespace iontrap {

struct RamanGeometry {
  Vec3 delta_k = Vec3::UnitX();  // m^-1
  double wavelength = 280e-9;    // m

  /// Two beams crossing at 90 degrees: |dk| = sqrt(2) * 2 pi / lambda along direction.
  static RamanGeometry crossed_beams(double wavelength, const Vec3& direction) {
    RamanGeometry g;
    g.wavelength = wavelength;
    g.delta_k = std::sqrt(2.0) * 2.0 * std::numbers::pi / wavelength * direction.normalized();
    return g;
  }
  void validate() const {
    if (!(delta_k.norm() > 0.0)) throw Error(ErrorKind::InvalidArgument, "delta_k must be nonzero");
  }
};

struct LambDicke {
  double eta = 0.0;        // >= 0
  double angle_deg = 0.0;  // between delta_k and the mode axis, [0, 90]
};

inline LambDicke lamb_dicke(const RamanGeometry& g, double omega, const Vec3& mode_vector, const IonSpecies& species = {}) {
  g.validate();
  species.validate();
  if (!(omega > 0.0)) throw Error(ErrorKind::InvalidArgument, "mode frequency must be positive");
  if (!(mode_vector.norm() > 0.0)) throw Error(ErrorKind::InvalidArgument, "mode vector must be nonzero");
  const double c = std::min(1.0, std::abs(g.delta_k.normalized().dot(mode_vector.normalized())));
  LambDicke out;
  out.angle_deg = std::acos(c) * 180.0 / std::numbers::pi;
  out.eta = g.delta_k.norm() * std::sqrt(constants::hbar / (2.0 * species.mass * omega)) * c;
  return out;
}

/// Thermal Fock populations truncated where the tail mass drops below tail_tol
/// (at least min_states states), then renormalized.
inline std::vector<double> thermal_populations(double nbar, double tail_tol = 1e-6, int min_states = 20) {
  if (!(nbar >= 0.0)) throw Error(ErrorKind::InvalidArgument, "nbar must be non-negative");
  const double q = nbar / (1.0 + nbar);
  int n = min_states;
  if (q > 0.0) n = std::max(n, static_cast<int>(std::ceil(std::log(tail_tol) / std::log(q))));
  std::vector<double> p(static_cast<std::size_t>(n));
  double sum = 0.0, qn = 1.0;
  for (int k = 0; k < n; ++k, qn *= q) {
    p[static_cast<std::size_t>(k)] = qn / (1.0 + nbar);
    sum += p[static_cast<std::size_t>(k)];
  }
  for (auto& v : p) v /= sum;
  return p;
}

struct ThermalMode {
  double omega = 0.0;
  Vec3 u = Vec3::UnitX();
  double nbar = 0.0;
  std::vector<double> populations;

  static ThermalMode thermal(double nbar, double omega = 0.0, const Vec3& u = Vec3::UnitX()) {
    return {omega, u, nbar, thermal_populations(nbar)};
  }
};

struct SpinMotionState {
  double p_down = 1.0;
  double p_up = 0.0;
  std::vector<std::vector<double>> modes;  // Fock populations per mode

  void validate() const {
    if (p_down < 0.0 || p_up < 0.0 || p_down > 1.0 || p_up > 1.0 || std::abs(p_down + p_up - 1.0) > 1e-9)
      throw Error(ErrorKind::InvalidArgument, "spin populations must lie in [0, 1] and sum to 1");
    for (const auto& m : modes) {
      double s = 0.0;
      for (double v : m) {
        if (v < 0.0) throw Error(ErrorKind::InvalidArgument, "Fock populations must be non-negative");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-6)
        throw Error(ErrorKind::InvalidArgument, "Fock distribution truncated too early (mass " + std::to_string(s) + ")");
    }
  }
};

enum class TransitionKind { Carrier, Blue, Red };

/// Blue: |down, n> <-> |up, n+1> on `mode`; red: |down, n> <-> |up, n-1>.
struct Transition {
  TransitionKind kind = TransitionKind::Carrier;
  int mode = 0;
};

/// <n'| exp(i eta (a + a^dag)) |n> magnitude for n' = n + s, as a Rabi factor.
inline double coupling_factor(int n, int s, double eta) {
  if (n < 0 || n + s < 0) return 0.0;
  const int lo = std::min(n, n + s), hi = std::max(n, n + s);
  const int d = hi - lo;
  const double x = eta * eta;
  if (eta == 0.0) return d == 0 ? 1.0 : 0.0;
  const double ratio = std::exp(0.5 * (std::lgamma(lo + 1.0) - std::lgamma(hi + 1.0)));
  return std::exp(-0.5 * x) * std::pow(eta, d) * ratio *
         std::abs(std::assoc_laguerre(static_cast<unsigned>(lo), static_cast<unsigned>(d), x));
}

namespace detail {

// Calls f(weight, factor_product) over all joint Fock states of the spectator
// modes with nonzero eta; the transition mode itself is excluded.
template <class F>
void for_each_spectator(const SpinMotionState& st, const std::vector<double>& etas, int skip, F&& f) {
  std::vector<int> active;
  for (int k = 0; k < static_cast<int>(st.modes.size()); ++k)
    if (k != skip && etas[static_cast<std::size_t>(k)] != 0.0) active.push_back(k);
  std::vector<std::vector<double>> dw(active.size());
  for (std::size_t a = 0; a < active.size(); ++a) {
    const auto& pop = st.modes[static_cast<std::size_t>(active[a])];
    for (std::size_t n = 0; n < pop.size(); ++n)
      dw[a].push_back(coupling_factor(static_cast<int>(n), 0, etas[static_cast<std::size_t>(active[a])]));
  }
  std::vector<std::size_t> idx(active.size(), 0);
  for (;;) {
    double w = 1.0, fac = 1.0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      w *= st.modes[static_cast<std::size_t>(active[a])][idx[a]];
      fac *= dw[a][idx[a]];
    }
    f(w, fac);
    std::size_t a = 0;
    for (; a < active.size(); ++a) {
      if (++idx[a] < st.modes[static_cast<std::size_t>(active[a])].size()) break;
      idx[a] = 0;
    }
    if (a == active.size()) break;
  }
}

}  // namespace detail

/// P(|down>, t) = offset + sum_k coef_k sin^2(rate_k t / 2).
struct FlopTerms {
  double offset = 0.0;
  std::vector<double> coef, rate;

  double operator()(double t) const {
    double p = offset;
    for (std::size_t k = 0; k < coef.size(); ++k) {
      const double s = std::sin(0.5 * rate[k] * t);
      p += coef[k] * s * s;
    }
    return std::clamp(p, 0.0, 1.0);
  }
};

/// Resolved-sideband rotating-wave model with P_flip = sin^2(Omega t / 2);
/// every mode other than the driven one contributes a Debye-Waller factor.
inline FlopTerms flop_terms(const SpinMotionState& st, const Transition& tr, double rabi0, const std::vector<double>& etas) {
  st.validate();
  if (etas.size() != st.modes.size()) throw Error(ErrorKind::DimensionMismatch, "need one eta per mode");
  for (double e : etas)
    if (!(e >= 0.0)) throw Error(ErrorKind::InvalidArgument, "Lamb-Dicke parameters must be non-negative");
  const int j = tr.mode;
  if (tr.kind != TransitionKind::Carrier && (j < 0 || j >= static_cast<int>(st.modes.size())))
    throw Error(ErrorKind::UnknownKind, "transition refers to a mode that does not exist");
  const int s = tr.kind == TransitionKind::Blue ? 1 : tr.kind == TransitionKind::Red ? -1 : 0;
  const int skip = tr.kind == TransitionKind::Carrier ? -1 : j;

  FlopTerms out;
  auto add = [&](double c, double r) {
    if (c == 0.0) return;
    if (r == 0.0) return;  // never flips
    out.coef.push_back(c);
    out.rate.push_back(r);
  };
  std::vector<double> cj_down, cj_up;
  if (skip >= 0) {
    const auto& pop = st.modes[static_cast<std::size_t>(j)];
    const double eta = etas[static_cast<std::size_t>(j)];
    for (int n = 0; n < static_cast<int>(pop.size()); ++n) {
      // |down, n> couples to |up, n+s>; |up, n> couples to |down, n-s>
      cj_down.push_back(coupling_factor(n, s, eta));
      cj_up.push_back(coupling_factor(n, -s, eta));
    }
  }
  detail::for_each_spectator(st, etas, skip, [&](double w, double fac) {
    if (w == 0.0) return;
    out.offset += w * st.p_down;
    if (skip < 0) {
      add(w * (st.p_up - st.p_down), rabi0 * fac);
      return;
    }
    const auto& pop = st.modes[static_cast<std::size_t>(j)];
    for (std::size_t n = 0; n < pop.size(); ++n) {
      const double wn = w * pop[n];
      add(-wn * st.p_down, rabi0 * fac * cj_down[n]);
      add(wn * st.p_up, rabi0 * fac * cj_up[n]);
    }
  });
  return out;
}

inline double flop_signal(const SpinMotionState& st, const Transition& tr, double rabi0, const std::vector<double>& etas,
                          double t) {
  return flop_terms(st, tr, rabi0, etas)(t);
}

inline std::vector<double> flop_curve(const SpinMotionState& st, const Transition& tr, double rabi0,
                                      const std::vector<double>& etas, const std::vector<double>& times) {
  const FlopTerms f = flop_terms(st, tr, rabi0, etas);
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times) out.push_back(f(t));
  return out;
}

/// Mean occupation from the red/blue first-sideband excitation ratio.
inline double sideband_thermometry(double r) {
  if (!(r >= 0.0) || r >= 1.0) throw Error(ErrorKind::InvalidArgument, "sideband ratio must satisfy 0 <= r < 1");
  return r / (1.0 - r);
}

/// Asymptotic red/blue ratio of a thermal state; inverse of sideband_thermometry.
inline double thermal_sideband_ratio(double nbar) { return nbar / (1.0 + nbar); }

inline double heating_evolution(double nbar0, double rate, double t) {
  if (rate < 0.0) throw Error(ErrorKind::InvalidArgument, "heating rate must be non-negative");
  return nbar0 + rate * t;
}

inline ThermalMode heat_mode(const ThermalMode& m, double rate, double t) {
  ThermalMode out = m;
  out.nbar = heating_evolution(m.nbar, rate, t);
  out.populations = thermal_populations(out.nbar);
  return out;
}

/// Linear frequency drift: f0 + slope * elapsed.
inline double drifted_frequency(double f0, double slope, double elapsed) { return f0 + slope * elapsed; }

struct TickleResult {
  double amplitude = 0.0;           // m, free oscillation after the pulse
  double resonant_estimate = 0.0;   // Q E t / (2 m omega)
  double steady_amplitude = 0.0;    // (Q E / m) / |omega^2 - omega_exc^2|
  bool detectable = false;
};

inline constexpr double detection_threshold_m = 100e-9;

/// Undamped mode driven by E sin(omega_exc t) for t_exc from rest.
inline TickleResult tickle_response(double field, double omega_exc, double t_exc, double omega,
                                    const IonSpecies& species = {}) {
  species.validate();
  if (!(omega > 0.0) || t_exc < 0.0) throw Error(ErrorKind::InvalidArgument, "need omega > 0 and t_exc >= 0");
  const double f = species.charge_to_mass() * field;
  // integral_0^t e^{i d s} ds = t e^{i d t / 2} sinc(d t / 2)
  auto window = [&](double d) {
    const double x = 0.5 * d * t_exc;
    const double sinc = std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x;
    return std::complex<double>(std::cos(x), std::sin(x)) * (t_exc * sinc);
  };
  const std::complex<double> integral = (window(omega_exc - omega) - window(-(omega_exc + omega))) / std::complex<double>(0.0, 2.0);
  TickleResult out;
  out.amplitude = std::abs(f * integral) / omega;
  out.resonant_estimate = std::abs(f) * t_exc / (2.0 * omega);
  const double gap = std::abs(omega * omega - omega_exc * omega_exc);
  out.steady_amplitude = gap > 0.0 ? std::abs(f) / gap : std::numeric_limits<double>::infinity();
  out.detectable = out.amplitude > detection_threshold_m;
  return out;
}

/// Coulomb exchange rate between two ions in separate wells.
inline double exchange_rate(double d, double omega, const IonSpecies& species = {}) {
  species.validate();
  if (!(d > 0.0) || !(omega > 0.0)) throw Error(ErrorKind::InvalidArgument, "need d > 0 and omega > 0");
  return species.charge * species.charge /
         (4.0 * std::numbers::pi * constants::epsilon0 * species.mass * omega * d * d * d);
}

struct MicromotionResult {
  Vec3 displacement = Vec3::Zero();  // m
  Vec3 amplitude = Vec3::Zero();     // m, RF-driven oscillation amplitude
  Vec3 q = Vec3::Zero();             // Mathieu q per mode
  double modulation_index = 0.0;
  double z_sensitivity = 0.0;        // m per unit fractional change of U_RF
};

inline MicromotionResult micromotion_analysis(const Vec3& stray_field, const ModeStructure& modes, const RFDrive& drive,
                                              const RamanGeometry& geometry, const IonSpecies& species = {}) {
  species.validate();
  drive.validate();
  if (!modes.all_stable()) throw Error(ErrorKind::Instability, "micromotion needs a positive-definite trap");
  Mat3 k = Mat3::Zero();
  for (int j = 0; j < 3; ++j) k += modes.omega[j] * modes.omega[j] * modes.u(j) * modes.u(j).transpose();
  Eigen::FullPivLU<Mat3> lu(k);
  if (!lu.isInvertible()) throw Error(ErrorKind::Degenerate, "stiffness matrix is singular");
  MicromotionResult out;
  out.displacement = species.charge_to_mass() * lu.solve(stray_field);
  for (int j = 0; j < 3; ++j) {
    out.q[j] = 2.0 * std::sqrt(2.0) * modes.omega[j] / drive.omega_rf;
    out.amplitude += 0.5 * out.q[j] * modes.u(j).dot(out.displacement) * modes.u(j);
  }
  out.modulation_index = std::abs(geometry.delta_k.dot(out.amplitude));
  out.z_sensitivity = -2.0 * out.displacement.z();
  return out;
}

struct DetectionModel {
  double bright_mean = 12.0;  // counts for |down>
  double dark_mean = 0.8;     // counts for |up>
  double duration = 150e-6;   // s
  int threshold = -1;         // counts >= threshold read as |down>; < 0 selects the optimum

  void validate() const {
    if (!(bright_mean > dark_mean) || dark_mean < 0.0)
      throw Error(ErrorKind::InvalidArgument, "detection needs bright_mean > dark_mean >= 0");
  }
};

/// P(N >= k) for N ~ Poisson(mean).
inline double poisson_tail(double mean, int k) {
  if (k <= 0) return 1.0;
  double term = std::exp(-mean), cdf = 0.0;
  for (int i = 0; i < k; ++i) {
    cdf += term;
    term *= mean / (i + 1);
  }
  return std::max(0.0, 1.0 - cdf);
}

/// Threshold minimizing the summed misclassification of both states.
inline int optimal_threshold(const DetectionModel& m) {
  m.validate();
  int best = 1;
  double err = 2.0;
  for (int k = 1; k <= static_cast<int>(std::ceil(m.bright_mean * 3 + 10)); ++k) {
    const double e = (1.0 - poisson_tail(m.bright_mean, k)) + poisson_tail(m.dark_mean, k);
    if (e < err - 1e-15) {
      err = e;
      best = k;
    }
  }
  return best;
}

/// Expected fraction of shots read as |down> for a given true P(|down>).
inline double expected_readout(double p_down, const DetectionModel& m) {
  const int th = m.threshold >= 0 ? m.threshold : optimal_threshold(m);
  return p_down * poisson_tail(m.bright_mean, th) + (1.0 - p_down) * poisson_tail(m.dark_mean, th);
}

/// Seed for an independent random stream; mixes (seed, task) with SplitMix64.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t task) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (task + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct DetectionResult {
  std::vector<int> histogram;  // histogram[k] = shots with k counts
  double inferred_p_down = 0.0;
  double mean_counts = 0.0;
  int threshold = 0;
};

inline DetectionResult simulate_detection(double p_down, const DetectionModel& m, int shots, std::uint64_t seed,
                                          std::uint64_t task = 0) {
  m.validate();
  if (shots < 1) throw Error(ErrorKind::InvalidArgument, "shots must be at least 1");
  if (!(p_down >= 0.0 && p_down <= 1.0)) throw Error(ErrorKind::InvalidArgument, "p_down must lie in [0, 1]");
  std::mt19937_64 rng(stream_seed(seed, task));
  std::bernoulli_distribution spin(p_down);
  std::poisson_distribution<int> bright(m.bright_mean), dark(m.dark_mean > 0.0 ? m.dark_mean : 1.0);
  DetectionResult out;
  out.threshold = m.threshold >= 0 ? m.threshold : optimal_threshold(m);
  long total = 0, down = 0;
  for (int s = 0; s < shots; ++s) {
    const bool is_down = spin(rng);
    const int c = is_down ? bright(rng) : (m.dark_mean > 0.0 ? dark(rng) : 0);
    if (static_cast<std::size_t>(c) >= out.histogram.size()) out.histogram.resize(static_cast<std::size_t>(c) + 1, 0);
    ++out.histogram[static_cast<std::size_t>(c)];
    total += c;
    if (c >= out.threshold) ++down;
  }
  out.inferred_p_down = static_cast<double>(down) / shots;
  out.mean_counts = static_cast<double>(total) / shots;
  return out;
}

struct RampCheck {
  std::vector<double> omega;  // rad/s
  std::vector<double> epsilon;
  double max_epsilon = 0.0;
  bool adiabatic = true;
};

inline constexpr double adiabatic_limit = 0.01;

/// omega(t)^2 = omega0^2 + (Q/m) U(t) c; epsilon = |d omega/dt| / omega^2.
inline RampCheck ramp_check(const std::vector<double>& u, double dt, double curvature_per_volt, double omega0,
                            const IonSpecies& species = {}) {
  species.validate();
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "sample interval must be positive");
  RampCheck out;
  const double qm = species.charge_to_mass();
  for (double v : u) {
    const double w2 = omega0 * omega0 + qm * v * curvature_per_volt;
    if (!(w2 > 0.0)) throw Error(ErrorKind::Instability, "mode frequency becomes imaginary during the ramp");
    out.omega.push_back(std::sqrt(w2));
  }
  const std::size_t n = out.omega.size();
  out.epsilon.assign(n, 0.0);
  for (std::size_t k = 0; k < n && n > 1; ++k) {
    double d;
    if (k == 0)
      d = (out.omega[1] - out.omega[0]) / dt;
    else if (k == n - 1)
      d = (out.omega[n - 1] - out.omega[n - 2]) / dt;
    else
      d = (out.omega[k + 1] - out.omega[k - 1]) / (2.0 * dt);
    out.epsilon[k] = std::abs(d) / (out.omega[k] * out.omega[k]);
    out.max_epsilon = std::max(out.max_epsilon, out.epsilon[k]);
  }
  out.adiabatic = out.max_epsilon < adiabatic_limit;
  return out;
}

// ---------------------------------------------------------------------------
// Flopping fit: two motional modes a, b probed by one Raman beam pair with
// eta_a = eta_a_max cos(phi), eta_b = eta_b_max sin(phi).

struct FlopDataset {
  Transition transition;
  std::vector<double> times;   // s
  std::vector<double> p_down;  // observed fraction
  int shots = 0;               // <= 0: unweighted
};

struct FlopModelParams {
  double phi = 0.0;               // rad, angle between delta_k and mode a
  std::array<double, 2> nbar{0.0, 0.0};
  double rabi0 = 0.0;             // rad/s
};

struct FlopFitSetup {
  std::array<double, 2> eta_max{0.0, 0.0};  // eta of each mode when aligned with delta_k
  double phi_lo = 2.0 * std::numbers::pi / 180.0;   // initial bracket for the angle scan
  double phi_hi = 88.0 * std::numbers::pi / 180.0;
  int phi_steps = 18;
  double nbar_guess = 0.1;
};

struct FlopFit {
  FlopModelParams params;
  double phi_deg = 0.0;
  std::array<double, 4> stderr_{0.0, 0.0, 0.0, 0.0};  // phi (deg), nbar_a, nbar_b, rabi0
  double chi2 = 0.0;
  int evaluations = 0;
  std::vector<std::vector<double>> populations;  // fitted Fock histograms per mode
};

inline std::vector<double> flop_model(const FlopModelParams& p, const FlopFitSetup& setup, const FlopDataset& d) {
  SpinMotionState st;
  st.modes = {thermal_populations(std::abs(p.nbar[0])), thermal_populations(std::abs(p.nbar[1]))};
  const std::vector<double> etas{setup.eta_max[0] * std::abs(std::cos(p.phi)), setup.eta_max[1] * std::abs(std::sin(p.phi))};
  return flop_curve(st, d.transition, std::abs(p.rabi0), etas, d.times);
}

/// Binomial sampling of model curves; one random stream per dataset.
inline std::vector<FlopDataset> simulate_flop_data(const FlopModelParams& truth, const FlopFitSetup& setup,
                                                   std::vector<FlopDataset> layout, std::uint64_t seed) {
  for (std::size_t k = 0; k < layout.size(); ++k) {
    auto& d = layout[k];
    const auto p = flop_model(truth, setup, d);
    d.p_down = p;
    if (d.shots <= 0) continue;
    std::mt19937_64 rng(stream_seed(seed, k));
    for (std::size_t i = 0; i < p.size(); ++i) {
      std::binomial_distribution<int> draw(d.shots, p[i]);
      d.p_down[i] = static_cast<double>(draw(rng)) / d.shots;
    }
  }
  return layout;
}

namespace detail {

struct FlopResidual {
  using Scalar = double;
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };

  const std::vector<FlopDataset>* data;
  const FlopFitSetup* setup;
  int n_values;
  mutable int calls = 0;

  int inputs() const { return 4; }
  int values() const { return n_values; }

  static FlopModelParams unpack(const Eigen::VectorXd& x) {
    FlopModelParams p;
    p.phi = x[0];
    p.nbar = {std::abs(x[1]), std::abs(x[2])};
    p.rabi0 = std::abs(x[3]);
    return p;
  }

  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
    ++calls;
    const FlopModelParams p = unpack(x);
    int k = 0;
    for (const auto& d : *data) {
      const auto m = flop_model(p, *setup, d);
      for (std::size_t i = 0; i < m.size(); ++i, ++k) {
        // binomial variance at the model, floored so certain outcomes keep finite weight
        const double w = d.shots > 0 ? std::sqrt((m[i] * (1.0 - m[i]) + 1.0 / d.shots) / d.shots) : 1.0;
        f[k] = (d.p_down[i] - m[i]) / w;
      }
    }
    return 0;
  }

  double cost(const Eigen::VectorXd& x) const {
    Eigen::VectorXd f(n_values);
    (*this)(x, f);
    return f.squaredNorm();
  }
};

}  // namespace detail

/// Weighted least squares over the flop model; deterministic for given data and setup.
inline FlopFit fit_flopping(const std::vector<FlopDataset>& data, const FlopFitSetup& setup) {
  std::set<std::pair<int, int>> kinds;
  int n_values = 0;
  bool flat = true;
  const FlopDataset* carrier = nullptr;
  double t_max = 0.0;
  for (const auto& d : data) {
    if (d.times.size() != d.p_down.size() || d.times.empty())
      throw Error(ErrorKind::DimensionMismatch, "each dataset needs matching, non-empty time and probability arrays");
    if (d.transition.kind != TransitionKind::Carrier && (d.transition.mode < 0 || d.transition.mode > 1))
      throw Error(ErrorKind::UnknownKind, "flop fit models two modes (0 and 1)");
    kinds.insert({static_cast<int>(d.transition.kind), d.transition.kind == TransitionKind::Carrier ? 0 : d.transition.mode});
    n_values += static_cast<int>(d.times.size());
    const auto [lo, hi] = std::minmax_element(d.p_down.begin(), d.p_down.end());
    if (*hi - *lo > 1e-6) flat = false;
    if (d.transition.kind == TransitionKind::Carrier && !carrier) carrier = &d;
    t_max = std::max(t_max, *std::max_element(d.times.begin(), d.times.end()));
  }
  if (kinds.size() < 2) throw Error(ErrorKind::InvalidArgument, "flop fit needs data from at least two transitions");
  if (flat) throw Error(ErrorKind::Degenerate, "flop data carry no signal");
  if (!(setup.eta_max[0] > 0.0) || !(setup.eta_max[1] > 0.0))
    throw Error(ErrorKind::InvalidArgument, "eta_max must be positive for both modes");
  if (!(t_max > 0.0)) throw Error(ErrorKind::InvalidArgument, "time grid must extend past zero");

  detail::FlopResidual fn{&data, &setup, n_values};
  const double phi_mid = 0.5 * (setup.phi_lo + setup.phi_hi);

  // Rabi frequency from the carrier (or everything when no carrier was taken).
  double rabi_best = 0.0, cost_best = std::numeric_limits<double>::infinity();
  {
    std::vector<FlopDataset> sub;
    if (carrier) sub.push_back(*carrier);
    else sub = data;
    int nv = 0;
    for (const auto& d : sub) nv += static_cast<int>(d.times.size());
    detail::FlopResidual cf{&sub, &setup, nv};
    const double lo = 0.2 * std::numbers::pi / t_max, hi = 400.0 * std::numbers::pi / t_max;
    const int steps = 400;
    for (int i = 0; i <= steps; ++i) {
      const double r = lo * std::pow(hi / lo, static_cast<double>(i) / steps);
      Eigen::VectorXd x(4);
      x << phi_mid, setup.nbar_guess, setup.nbar_guess, r;
      const double c = cf.cost(x);
      if (c < cost_best) {
        cost_best = c;
        rabi_best = r;
      }
    }
  }
  // Angle scan at that Rabi frequency.
  double phi_best = phi_mid;
  cost_best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= setup.phi_steps; ++i) {
    const double phi = setup.phi_lo + (setup.phi_hi - setup.phi_lo) * i / std::max(1, setup.phi_steps);
    Eigen::VectorXd x(4);
    x << phi, setup.nbar_guess, setup.nbar_guess, rabi_best;
    const double c = fn.cost(x);
    if (c < cost_best) {
      cost_best = c;
      phi_best = phi;
    }
  }

  Eigen::VectorXd x(4);
  x << phi_best, setup.nbar_guess, setup.nbar_guess, rabi_best;
  Eigen::NumericalDiff<detail::FlopResidual, Eigen::Central> nd(fn, 1e-7);
  Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::FlopResidual, Eigen::Central>> lm(nd);
  lm.parameters.xtol = 1e-13;
  lm.parameters.ftol = 1e-15;
  lm.parameters.maxfev = 4000;
  const auto status = lm.minimize(x);
  using S = Eigen::LevenbergMarquardtSpace::Status;
  if (status == S::ImproperInputParameters || status == S::TooManyFunctionEvaluation || !x.allFinite())
    throw Error(ErrorKind::NonConvergence, "flop fit did not converge (status " + std::to_string(static_cast<int>(status)) + ")");

  FlopFit out;
  out.params = detail::FlopResidual::unpack(x);
  // fold the angle into [0, 90] degrees; the model only sees |cos| and |sin|
  double phi = std::fmod(std::abs(out.params.phi), std::numbers::pi);
  if (phi > 0.5 * std::numbers::pi) phi = std::numbers::pi - phi;
  out.params.phi = phi;
  out.phi_deg = phi * 180.0 / std::numbers::pi;
  out.chi2 = fn.cost(x);
  out.evaluations = fn.calls;

  Eigen::MatrixXd J(n_values, 4);
  nd.df(x, J);
  const int dof = std::max(1, n_values - 4);
  const Eigen::MatrixXd cov = (J.transpose() * J).completeOrthogonalDecomposition().pseudoInverse() * (out.chi2 / dof);
  out.stderr_ = {std::sqrt(std::max(0.0, cov(0, 0))) * 180.0 / std::numbers::pi, std::sqrt(std::max(0.0, cov(1, 1))),
                 std::sqrt(std::max(0.0, cov(2, 2))), std::sqrt(std::max(0.0, cov(3, 3)))};
  out.populations = {thermal_populations(out.params.nbar[0]), thermal_populations(out.params.nbar[1])};
  return out;
}

}  // namespace iontrap
