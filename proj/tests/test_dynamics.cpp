#include <gtest/gtest.h>

#include <boost/math/distributions/poisson.hpp>
#include <boost/numeric/odeint.hpp>
#include <random>

#include "flop_scenario.hpp"
#include "iontrap/dynamics.hpp"
#include "iontrap/waveform.hpp"
#include "oracles.hpp"

using namespace iontrap;

namespace {

constexpr double pi = std::numbers::pi;
const double rabi0 = hz_to_rad(100e3);

SpinMotionState one_mode(double nbar) {
  SpinMotionState st;
  st.modes = {thermal_populations(nbar)};
  return st;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> t;
  for (int i = 0; i < n; ++i) t.push_back(a + (b - a) * i / (n - 1));
  return t;
}

std::vector<double> normalized(std::vector<double> p) {
  double s = 0.0;
  for (double v : p) s += v;
  for (auto& v : p) v /= s;
  return p;
}

ModeStructure modes_hz(double fx, double fy, double fz) {
  const double qm = IonSpecies{}.charge_to_mass();
  const Vec3 w(hz_to_rad(fx), hz_to_rad(fy), hz_to_rad(fz));
  return mode_analysis(Vec3(w.cwiseProduct(w) / qm).asDiagonal());
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::Io;
}

// Undamped oscillator from rest under f sin(w_exc t), integrated in units of
// 1/omega and f/omega^2; returns the free amplitude after t_exc.
double tickle_by_ode(double field, double omega_exc, double t_exc, double omega) {
  const double f = IonSpecies{}.charge_to_mass() * field;
  const double scale = f / (omega * omega), ratio = omega_exc / omega;
  using State = std::array<double, 2>;
  State y{0.0, 0.0};
  auto rhs = [&](const State& s, State& d, double tau) {
    d[0] = s[1];
    d[1] = -s[0] + std::sin(ratio * tau);
  };
  namespace ode = boost::numeric::odeint;
  ode::integrate_adaptive(ode::make_controlled(1e-13, 1e-13, ode::runge_kutta_dopri5<State>()), rhs, y, 0.0,
                          omega * t_exc, 0.01);
  return scale * std::hypot(y[0], y[1]);
}

}  // namespace

// ---- Lamb-Dicke ------------------------------------------------------------

TEST(LambDicke, MagnesiumAt5MHzIsAboutPointTwo) {
  const auto g = RamanGeometry::crossed_beams(280e-9, Vec3::UnitX());
  const double omega = 2.0 * pi * 5.3e6;
  const double x0 = std::sqrt(1.054571817e-34 / (2.0 * 25.0 * 1.66053906660e-27 * omega));
  const double expect = std::sqrt(2.0) * 2.0 * pi / 280e-9 * x0;
  const auto ld = lamb_dicke(g, omega, Vec3::UnitX());
  EXPECT_NEAR(ld.eta, expect, 1e-12 * expect);
  EXPECT_NEAR(ld.eta, 0.20, 0.01);
  EXPECT_DOUBLE_EQ(ld.angle_deg, 0.0);
}

TEST(LambDicke, AngleAndScaling) {
  const auto g = RamanGeometry::crossed_beams(280e-9, Vec3::UnitX());
  const double w = hz_to_rad(2.6e6);
  EXPECT_NEAR(lamb_dicke(g, w, Vec3::UnitY()).eta, 0.0, 1e-15);
  EXPECT_NEAR(lamb_dicke(g, w, Vec3::UnitY()).angle_deg, 90.0, 1e-12);
  const Vec3 u(std::cos(pi / 3), std::sin(pi / 3), 0.0);
  const auto tilted = lamb_dicke(g, w, u);
  EXPECT_NEAR(tilted.angle_deg, 60.0, 1e-10);
  EXPECT_NEAR(tilted.eta, 0.5 * lamb_dicke(g, w, Vec3::UnitX()).eta, 1e-14);
  // antiparallel vector gives the same non-negative eta
  EXPECT_DOUBLE_EQ(lamb_dicke(g, w, -Vec3::UnitX()).eta, lamb_dicke(g, w, Vec3::UnitX()).eta);
  EXPECT_NEAR(lamb_dicke(g, 2.0 * w, Vec3::UnitX()).eta, lamb_dicke(g, w, Vec3::UnitX()).eta / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(kind_of([&] { lamb_dicke(g, w, Vec3::Zero()); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { lamb_dicke(g, 0.0, Vec3::UnitX()); }), ErrorKind::InvalidArgument);
}

// ---- Fock populations and couplings ----------------------------------------

TEST(ThermalPopulations, CutoffIsSmallestWithTinyTail) {
  for (double nbar : {0.0, 0.05, 0.6, 5.0}) {
    const auto p = thermal_populations(nbar);
    const int n = static_cast<int>(p.size());
    const double q = nbar / (1.0 + nbar);
    EXPECT_GE(n, 20);
    EXPECT_LT(std::pow(q, n), 1e-6);
    if (n > 20) EXPECT_GE(std::pow(q, n - 1), 1e-6);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    // ratios stay geometric after renormalization
    if (nbar > 0.0) EXPECT_NEAR(p[3] / p[2], q, 1e-12);
  }
}

TEST(CouplingFactor, MatchesDisplacementMatrixElements) {
  for (double eta : {0.05, 0.2, 0.45}) {
    const Eigen::MatrixXcd d = oracle::displacement(eta, 120);
    for (int n = 0; n < 30; ++n)
      for (int s = -2; s <= 2; ++s) {
        if (n + s < 0) {
          EXPECT_EQ(coupling_factor(n, s, eta), 0.0);
          continue;
        }
        EXPECT_NEAR(coupling_factor(n, s, eta), std::abs(d(n + s, n)), 1e-12) << n << " " << s << " " << eta;
      }
  }
}

TEST(CouplingFactor, LambDickeLimit) {
  const double eta = 1e-4;
  for (int n = 0; n < 10; ++n) {
    EXPECT_NEAR(coupling_factor(n, 0, eta), 1.0, 1e-7);
    EXPECT_NEAR(coupling_factor(n, 1, eta), eta * std::sqrt(n + 1.0), 1e-7 * eta * std::sqrt(n + 1.0));
    if (n > 0) EXPECT_NEAR(coupling_factor(n, -1, eta), eta * std::sqrt(n + 0.0), 1e-7 * eta * std::sqrt(n + 0.0));
  }
  EXPECT_EQ(coupling_factor(0, -1, 0.3), 0.0);
  EXPECT_EQ(coupling_factor(3, 0, 0.0), 1.0);
  EXPECT_EQ(coupling_factor(3, 1, 0.0), 0.0);
}

// ---- flopping ---------------------------------------------------------------

TEST(FlopSignal, GroundStateRedSidebandNeverFlips) {
  const auto st = one_mode(0.0);
  for (double t : linspace(0.0, 500e-6, 101)) EXPECT_EQ(flop_signal(st, {TransitionKind::Red, 0}, rabi0, {0.2}, t), 1.0);
}

TEST(FlopSignal, CarrierPiPulseFlipsGroundState) {
  EXPECT_NEAR(flop_signal(one_mode(0.0), {TransitionKind::Carrier, 0}, rabi0, {0.0}, pi / rabi0), 0.0, 1e-15);
  // with eta > 0 the ground-state carrier is slowed by exp(-eta^2 / 2)
  const double eta = 0.2;
  EXPECT_NEAR(flop_signal(one_mode(0.0), {TransitionKind::Carrier, 0}, rabi0, {eta}, pi / (rabi0 * std::exp(-0.5 * eta * eta))),
              0.0, 1e-12);
}

TEST(FlopSignal, ZeroEtaCarrierIsTwoLevelRabi) {
  SpinMotionState st = one_mode(0.4);
  st.p_down = 0.7;
  st.p_up = 0.3;
  for (double t : linspace(0.0, 80e-6, 57)) {
    const double s = std::sin(0.5 * rabi0 * t);
    EXPECT_NEAR(flop_signal(st, {TransitionKind::Carrier, 0}, rabi0, {0.0}, t), 0.7 - 0.4 * s * s, 1e-15);
  }
}

TEST(FlopSignal, MatchesFockSpaceEvolution) {
  const double eta = 0.2;
  const auto times = linspace(0.0, 150e-6, 16);
  for (double nbar : {0.05, 0.3, 0.6}) {
    const auto p = oracle::thermal_exact(nbar, 201);
    const auto st = one_mode(nbar);
    for (auto [kind, s] : {std::pair{TransitionKind::Blue, 1}, {TransitionKind::Red, -1}, {TransitionKind::Carrier, 0}}) {
      const auto ref = oracle::fock_flop(p, s, eta, rabi0, times);
      const auto got = flop_curve(st, {kind, 0}, rabi0, {eta}, times);
      for (std::size_t i = 0; i < times.size(); ++i)
        EXPECT_NEAR(got[i], ref[i], 1e-8) << "nbar " << nbar << " s " << s << " t " << times[i];
    }
  }
}

TEST(FlopSignal, SpectatorModeEntersAsDebyeWaller) {
  const double eta_a = 0.18, eta_b = 0.09;
  const auto pa = normalized(oracle::thermal_exact(0.3, 14));
  const auto pb = normalized(oracle::thermal_exact(0.1, 10));
  SpinMotionState st;
  st.modes = {pa, pb};
  const auto times = linspace(0.0, 120e-6, 13);
  struct Case {
    TransitionKind kind;
    int s, mode;
  };
  for (const Case c : {Case{TransitionKind::Carrier, 0, 0}, Case{TransitionKind::Blue, 1, 0}, Case{TransitionKind::Red, -1, 1},
                       Case{TransitionKind::Blue, 1, 1}}) {
    const auto ref = oracle::fock_flop_two_modes(pa, pb, c.s, c.mode, eta_a, eta_b, rabi0, times);
    const auto got = flop_curve(st, {c.kind, c.mode}, rabi0, {eta_a, eta_b}, times);
    for (std::size_t i = 0; i < times.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-10) << c.s << " " << c.mode;
  }
}

TEST(FlopSignal, ProbabilitiesStayInUnitInterval) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    SpinMotionState st;
    st.p_down = u(rng);
    st.p_up = 1.0 - st.p_down;
    st.modes = {thermal_populations(2.0 * u(rng)), thermal_populations(2.0 * u(rng))};
    const std::vector<double> etas{0.5 * u(rng), 0.5 * u(rng)};
    const Transition tr{static_cast<TransitionKind>(trial % 3), trial % 2};
    for (double t : linspace(0.0, 1e-3, 200)) {
      const double p = flop_signal(st, tr, rabi0, etas, t);
      EXPECT_GE(p, 0.0);
      EXPECT_LE(p, 1.0);
    }
  }
}

TEST(FlopSignal, Errors) {
  auto st = one_mode(0.2);
  EXPECT_EQ(kind_of([&] { flop_signal(st, {TransitionKind::Blue, 3}, rabi0, {0.1}, 1e-6); }), ErrorKind::UnknownKind);
  EXPECT_EQ(kind_of([&] { flop_signal(st, {TransitionKind::Blue, 0}, rabi0, {0.1, 0.2}, 1e-6); }),
            ErrorKind::DimensionMismatch);
  st.modes[0].resize(2);  // tail mass far above the cutoff tolerance
  EXPECT_EQ(kind_of([&] { flop_signal(st, {TransitionKind::Blue, 0}, rabi0, {0.1}, 1e-6); }), ErrorKind::InvalidArgument);
}

// ---- fitting -----------------------------------------------------------------

TEST(FitFlopping, NoiselessDataRecoveredExactly) {
  const auto setup = flop_scenario::setup();
  for (double phi : {24.7, 36.1}) {
    const auto truth = flop_scenario::truth(phi);
    const auto data = simulate_flop_data(truth, setup, flop_scenario::layout(0), 1);
    const auto fit = fit_flopping(data, setup);
    EXPECT_NEAR(fit.params.phi, truth.phi, 1e-6);
    EXPECT_NEAR(fit.params.nbar[0], truth.nbar[0], 1e-6 * truth.nbar[0]);
    EXPECT_NEAR(fit.params.nbar[1], truth.nbar[1], 1e-6 * truth.nbar[1]);
    EXPECT_NEAR(fit.params.rabi0, truth.rabi0, 1e-6 * truth.rabi0);
    EXPECT_LT(fit.chi2, 1e-12);
  }
}

TEST(FitFlopping, SeededRoundTrips) {
  // a few seeds here; the acceptance run does 100 per angle
  const auto setup = flop_scenario::setup();
  for (double phi : {24.7, 36.1})
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const auto data = simulate_flop_data(flop_scenario::truth(phi), setup, flop_scenario::layout(), seed);
      const auto fit = fit_flopping(data, setup);
      EXPECT_TRUE(flop_scenario::recovered(fit, phi))
          << "phi " << fit.phi_deg << " nbar " << fit.params.nbar[0] << " " << fit.params.nbar[1] << " seed " << seed;
      // reported uncertainties are of the size of the actual scatter
      EXPECT_GT(fit.stderr_[0], 0.01);
      EXPECT_LT(fit.stderr_[0], 0.5);
    }
}

TEST(FitFlopping, DeterministicForSameData) {
  const auto setup = flop_scenario::setup();
  const auto data = simulate_flop_data(flop_scenario::truth(24.7), setup, flop_scenario::layout(), 9);
  const auto a = fit_flopping(data, setup), b = fit_flopping(data, setup);
  EXPECT_EQ(a.params.phi, b.params.phi);
  EXPECT_EQ(a.params.nbar, b.params.nbar);
  EXPECT_EQ(a.params.rabi0, b.params.rabi0);
  // and the simulated noise itself is reproducible
  const auto again = simulate_flop_data(flop_scenario::truth(24.7), setup, flop_scenario::layout(), 9);
  for (std::size_t k = 0; k < data.size(); ++k) EXPECT_EQ(data[k].p_down, again[k].p_down);
}

TEST(FitFlopping, Errors) {
  const auto setup = flop_scenario::setup();
  auto data = simulate_flop_data(flop_scenario::truth(24.7), setup, flop_scenario::layout(0), 1);
  EXPECT_EQ(kind_of([&] { fit_flopping({data[0]}, setup); }), ErrorKind::InvalidArgument);
  auto flat = data;
  for (auto& d : flat) std::fill(d.p_down.begin(), d.p_down.end(), 1.0);
  EXPECT_EQ(kind_of([&] { fit_flopping(flat, setup); }), ErrorKind::Degenerate);
  auto ragged = data;
  ragged[1].p_down.pop_back();
  EXPECT_EQ(kind_of([&] { fit_flopping(ragged, setup); }), ErrorKind::DimensionMismatch);
}

// ---- thermometry, heating, drift ----------------------------------------------

TEST(Thermometry, Examples) {
  EXPECT_EQ(sideband_thermometry(0.0), 0.0);
  EXPECT_NEAR(sideband_thermometry(1.0 / 11.0), 0.1, 1e-15);
  EXPECT_EQ(sideband_thermometry(0.5), 1.0);
  EXPECT_EQ(kind_of([] { sideband_thermometry(1.0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { sideband_thermometry(-0.1); }), ErrorKind::InvalidArgument);
}

TEST(Thermometry, RoundTripThroughSidebandRatio) {
  for (double nbar : {0.0, 0.05, 0.1, 0.3, 0.6, 2.0, 17.0})
    EXPECT_NEAR(sideband_thermometry(thermal_sideband_ratio(nbar)), nbar, 1e-9 * std::max(1.0, nbar));
}

TEST(Thermometry, RatioMatchesEarlySidebandExcitation) {
  // for a short weak pulse the red/blue excitation ratio tends to nbar/(1+nbar)
  const double eta = 1e-3, t = 1e-3 / rabi0 / eta;
  for (double nbar : {0.05, 0.3, 0.6}) {
    const auto st = one_mode(nbar);
    const double red = 1.0 - flop_signal(st, {TransitionKind::Red, 0}, rabi0, {eta}, t);
    const double blue = 1.0 - flop_signal(st, {TransitionKind::Blue, 0}, rabi0, {eta}, t);
    EXPECT_NEAR(red / blue, thermal_sideband_ratio(nbar), 1e-4 * thermal_sideband_ratio(nbar));
  }
}

TEST(Heating, LinearGrowthAtMeasuredRates) {
  EXPECT_NEAR(heating_evolution(0.1, 0.9e3, 1e-3), 1.0, 1e-15);
  EXPECT_EQ(heating_evolution(0.1, 0.0, 1.0), 0.1);
  double last = 0.0;
  for (double rate : {0.9e3, 2.2e3, 4.0e3}) {
    const double n = heating_evolution(0.1, rate, 1e-3);
    EXPECT_EQ(n, 0.1 + rate * 1e-3);
    EXPECT_GT(n, last);
    last = n;
    // doubling the time doubles the gain
    EXPECT_NEAR(heating_evolution(0.1, rate, 2e-3) - 0.1, 2.0 * (n - 0.1), 1e-14);
  }
  const auto m = heat_mode(ThermalMode::thermal(0.1, hz_to_rad(5.3e6)), 2.2e3, 1e-3);
  EXPECT_EQ(m.populations, thermal_populations(0.1 + 2.2));
  EXPECT_EQ(kind_of([] { heating_evolution(0.1, -1.0, 1.0); }), ErrorKind::InvalidArgument);
}

TEST(Drift, HourAtMeasuredSlope) {
  const double f0 = 5.3e6;
  EXPECT_EQ(drifted_frequency(f0, -1.5, 3600.0) - f0, -5400.0);
  EXPECT_EQ(drifted_frequency(f0, 0.0, 3600.0), f0);
}

// ---- tickle --------------------------------------------------------------------

TEST(Tickle, ZeroFieldGivesNothing) {
  const auto r = tickle_response(0.0, hz_to_rad(2.6e6), 100e-6, hz_to_rad(2.6e6));
  EXPECT_EQ(r.amplitude, 0.0);
  EXPECT_FALSE(r.detectable);
}

TEST(Tickle, ThresholdFieldOnResonance) {
  const double w = hz_to_rad(2.6e6), t = 100e-6;
  const double qm = 1.602176634e-19 / (25.0 * 1.66053906660e-27);
  const double e_th = 2.0 * w * detection_threshold_m / (qm * t);
  EXPECT_NEAR(e_th, 8e-3, 1e-3);
  const auto r = tickle_response(e_th, w, t, w);
  EXPECT_NEAR(r.resonant_estimate, detection_threshold_m, 1e-12 * detection_threshold_m);
  // the exact solution differs only by the counter-rotating term
  EXPECT_NEAR(r.amplitude, r.resonant_estimate, 1e-3 * r.resonant_estimate);
  EXPECT_TRUE(tickle_response(1.01 * e_th, w, t, w).detectable);
  EXPECT_FALSE(tickle_response(0.98 * e_th, w, t, w).detectable);
}

TEST(Tickle, DetunedPulseStaysBelowThreshold) {
  const double w = hz_to_rad(2.6e6), t = 100e-6;
  const double e_th = 2.0 * w * detection_threshold_m / (IonSpecies{}.charge_to_mass() * t);
  const double width = 2.0 * pi / t;
  const auto r = tickle_response(e_th, w + 10.0 * width, t, w);
  EXPECT_FALSE(r.detectable);
  EXPECT_LT(r.amplitude, 0.1 * detection_threshold_m);
}

TEST(Tickle, ExactSolutionMatchesIntegration) {
  const double w = hz_to_rad(2.6e6), t = 100e-6, e = 5e-3;
  // detunings chosen off whole-cycle commensurability, where the ion ends at rest
  for (double d : {0.0, 3e3, 17e3, 437e3, -1.234e6}) {
    const double we = w + hz_to_rad(d);
    const double ref = tickle_by_ode(e, we, t, w);
    EXPECT_NEAR(tickle_response(e, we, t, w).amplitude, ref, 1e-7 * ref) << d;
  }
  const auto far = tickle_response(e, 0.3 * w, t, w);
  const double steady = IonSpecies{}.charge_to_mass() * e / (w * w * (1.0 - 0.09));
  EXPECT_NEAR(far.steady_amplitude, steady, 1e-12 * steady);
}

// ---- exchange ------------------------------------------------------------------

TEST(Exchange, FortyMicronArray) {
  const double w = hz_to_rad(2e6);
  const double rate = exchange_rate(40e-6, w);
  const double q = 1.602176634e-19;
  const double expect = q * q / (4.0 * pi * 8.8541878128e-12 * 25.0 * 1.66053906660e-27 * w * std::pow(40e-6, 3));
  EXPECT_NEAR(rate, expect, 1e-12 * expect);
  EXPECT_GT(rad_to_hz(rate), 0.85e3);
  EXPECT_LT(rad_to_hz(rate), 1.25e3);
  EXPECT_NEAR(rad_to_hz(rate), 1.1e3, 0.05e3);
}

TEST(Exchange, ScalingLaws) {
  const double w = hz_to_rad(2e6);
  const double base = exchange_rate(40e-6, w);
  EXPECT_NEAR(exchange_rate(80e-6, w), base / 8.0, 1e-14 * base);
  EXPECT_NEAR(exchange_rate(40e-6, 2.0 * w), base / 2.0, 1e-14 * base);
  EXPECT_EQ(kind_of([&] { exchange_rate(0.0, w); }), ErrorKind::InvalidArgument);
}

// ---- micromotion ---------------------------------------------------------------

TEST(Micromotion, StrayFieldDisplacements) {
  const auto modes = modes_hz(2.6e6, 3.5e6, 4.1e6);
  const auto g = RamanGeometry::crossed_beams(280e-9, Vec3::UnitX());
  const RFDrive drive;
  const double qm = IonSpecies{}.charge_to_mass();

  const auto x = micromotion_analysis(Vec3(3.0, 0, 0), modes, drive, g);
  const double dx = qm * 3.0 / std::pow(hz_to_rad(2.6e6), 2);
  EXPECT_NEAR(x.displacement.x(), dx, 1e-12 * dx);
  EXPECT_NEAR(x.displacement.x(), 43e-9, 1e-9);
  EXPECT_LT(x.displacement.tail<2>().norm(), 1e-12 * dx);
  const double qx = 2.0 * std::sqrt(2.0) * hz_to_rad(2.6e6) / drive.omega_rf;
  EXPECT_NEAR(x.amplitude.x(), 0.5 * qx * dx, 1e-12 * dx);
  EXPECT_NEAR(x.modulation_index, g.delta_k.norm() * 0.5 * qx * dx, 1e-12);

  const auto z = micromotion_analysis(Vec3(0, 0, 900.0), modes, drive, g);
  EXPECT_NEAR(z.displacement.z(), 5e-6, 0.2 * 5e-6);
  EXPECT_NEAR(z.displacement.z(), qm * 900.0 / std::pow(hz_to_rad(4.1e6), 2), 1e-18);
  EXPECT_DOUBLE_EQ(z.z_sensitivity, -2.0 * z.displacement.z());
  // z motion is invisible to a beam pair along x
  EXPECT_LT(z.modulation_index, 1e-12);
}

TEST(Micromotion, ZeroFieldAndScaling) {
  const auto modes = modes_hz(2.6e6, 3.5e6, 4.1e6);
  const auto g = RamanGeometry::crossed_beams(280e-9, Vec3(1, 1, 0));
  const auto zero = micromotion_analysis(Vec3::Zero(), modes, {}, g);
  EXPECT_EQ(zero.displacement.norm(), 0.0);
  EXPECT_EQ(zero.modulation_index, 0.0);
  const Vec3 e(2.0, -1.0, 300.0);
  const auto a = micromotion_analysis(e, modes, {}, g);
  const auto b = micromotion_analysis(e, modes_hz(5.2e6, 7e6, 8.2e6), {}, g);
  EXPECT_LT((b.displacement - a.displacement / 4.0).norm(), 1e-12 * a.displacement.norm());
  // displacement is linear in the field
  const auto c = micromotion_analysis(3.0 * e, modes, {}, g);
  EXPECT_LT((c.displacement - 3.0 * a.displacement).norm(), 1e-12 * c.displacement.norm());
}

TEST(Micromotion, NeedsConfiningModes) {
  const double qm = IonSpecies{}.charge_to_mass();
  const double k = std::pow(hz_to_rad(2e6), 2) / qm;
  const auto unstable = mode_analysis(Vec3(k, k, -k).asDiagonal());
  EXPECT_EQ(kind_of([&] { micromotion_analysis(Vec3(1, 0, 0), unstable, {}, RamanGeometry{}); }), ErrorKind::Instability);
}

// ---- detection -----------------------------------------------------------------

TEST(Detection, PoissonTailMatchesDistribution) {
  for (double mean : {0.8, 12.0})
    for (int k = 0; k < 30; ++k) {
      const double ref = k == 0 ? 1.0 : boost::math::cdf(boost::math::complement(boost::math::poisson(mean), k - 1.0));
      EXPECT_NEAR(poisson_tail(mean, k), ref, 1e-13) << mean << " " << k;
    }
}

TEST(Detection, ThresholdMinimizesMisclassification) {
  const DetectionModel m;
  const int th = optimal_threshold(m);
  const auto err = [&](int k) { return 1.0 - poisson_tail(m.bright_mean, k) + poisson_tail(m.dark_mean, k); };
  for (int k = 1; k < 40; ++k) EXPECT_GE(err(k), err(th) - 1e-15);
  EXPECT_GT(th, 1);
  EXPECT_LT(th, 12);
}

TEST(Detection, BrightStateWithinThreeSigmaOfAnalyticFidelity) {
  const DetectionModel m;
  const int shots = 100000;
  for (double p : {1.0, 0.5}) {
    const auto r = simulate_detection(p, m, shots, 42);
    const double expect = expected_readout(p, m);
    const double sigma = std::sqrt(expect * (1.0 - expect) / shots);
    EXPECT_LT(std::abs(r.inferred_p_down - expect), 3.0 * sigma + 1e-12) << p;
  }
}

TEST(Detection, DarkStateMeanCounts) {
  const DetectionModel m;
  const int shots = 100000;
  const auto r = simulate_detection(0.0, m, shots, 43);
  EXPECT_NEAR(r.mean_counts, 0.8, 3.0 * std::sqrt(0.8 / shots));
  long n = 0, total = 0;
  for (std::size_t k = 0; k < r.histogram.size(); ++k) {
    n += r.histogram[k];
    total += static_cast<long>(k) * r.histogram[k];
  }
  EXPECT_EQ(n, shots);
  EXPECT_DOUBLE_EQ(static_cast<double>(total) / shots, r.mean_counts);
}

TEST(Detection, SeededStreamsAreReproducible) {
  const DetectionModel m;
  const auto a = simulate_detection(0.4, m, 2000, 7, 3);
  const auto b = simulate_detection(0.4, m, 2000, 7, 3);
  EXPECT_EQ(a.histogram, b.histogram);
  EXPECT_NE(simulate_detection(0.4, m, 2000, 7, 4).histogram, a.histogram);
  EXPECT_EQ(kind_of([&] { simulate_detection(0.4, m, 0, 7); }), ErrorKind::InvalidArgument);
  DetectionModel bad;
  bad.dark_mean = 20.0;
  EXPECT_EQ(kind_of([&] { simulate_detection(0.4, bad, 10, 7); }), ErrorKind::InvalidArgument);
}

// ---- ramps ---------------------------------------------------------------------

namespace {

std::vector<double> tune_ramp(double t_ramp, RampShape shape = RampShape::Linear) {
  ControlSet a, b;
  a.v_hat = b.v_hat = Eigen::VectorXd::Ones(1);
  b.u_c = 2.3;
  return make_ramp(a, b, t_ramp, shape).channel(0);
}

constexpr double tune_curvature = 1.164e7;

}  // namespace

TEST(RampCheck, ConstantVoltageIsAdiabatic) {
  const auto r = ramp_check(std::vector<double>(50, 1.7), 20e-9, tune_curvature, hz_to_rad(2.6e6));
  EXPECT_EQ(r.max_epsilon, 0.0);
  EXPECT_TRUE(r.adiabatic);
}

TEST(RampCheck, LinearRampMatchesAnalyticRate) {
  const double w0 = hz_to_rad(2.6e6), dt = 1.0 / default_update_rate;
  const auto u = tune_ramp(7.5e-6);
  ASSERT_EQ(u.size(), 375u);
  const auto r = ramp_check(u, dt, tune_curvature, w0);
  // d omega / dt = (Q/m) c dU/dt / (2 omega); largest where omega is smallest
  const double qm = IonSpecies{}.charge_to_mass();
  const double slope = 2.3 / (374 * dt);
  const double expect = qm * tune_curvature * slope / (2.0 * w0 * w0 * w0);
  EXPECT_NEAR(r.max_epsilon, expect, 1e-3 * expect);
  EXPECT_LT(r.max_epsilon, adiabatic_limit);
  EXPECT_TRUE(r.adiabatic);
  EXPECT_NEAR(r.omega.front(), w0, 1e-6);
  EXPECT_NEAR(r.omega.back(), std::sqrt(w0 * w0 + qm * 2.3 * tune_curvature), 1e-6);
}

TEST(RampCheck, LongerRampScalesInversely) {
  const double w0 = hz_to_rad(2.6e6), dt = 1.0 / default_update_rate;
  const double short_eps = ramp_check(tune_ramp(7.5e-6), dt, tune_curvature, w0).max_epsilon;
  const double long_eps = ramp_check(tune_ramp(120e-6), dt, tune_curvature, w0).max_epsilon;
  // 16x in duration; sample alignment (n - 1 intervals) shifts it by 0.3 %
  EXPECT_NEAR(short_eps / long_eps, 16.0, 0.01 * 16.0);
}

TEST(RampCheck, FastRampFlaggedAndInstabilityRejected) {
  const double w0 = hz_to_rad(2.6e6);
  const auto fast = ramp_check({0.0, 2.3}, 1e-9, tune_curvature, w0);
  EXPECT_FALSE(fast.adiabatic);
  EXPECT_EQ(kind_of([&] { ramp_check({0.0, 10.0}, 20e-9, -1e8, w0); }), ErrorKind::Instability);
  EXPECT_EQ(kind_of([&] { ramp_check({0.0, 1.0}, 0.0, tune_curvature, w0); }), ErrorKind::InvalidArgument);
}
