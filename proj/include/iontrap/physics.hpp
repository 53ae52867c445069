#pragma once

#include <numbers>
#include <string>

#include "iontrap/error.hpp"

namespace iontrap {

// CODATA 2018 exact / recommended values, SI units.
namespace constants {
inline constexpr double elementary_charge = 1.602176634e-19;
inline constexpr double atomic_mass_unit = 1.66053906660e-27;
inline constexpr double hbar = 1.054571817e-34;
inline constexpr double epsilon0 = 8.8541878128e-12;
inline constexpr double two_pi = 2.0 * std::numbers::pi;
}  // namespace constants

struct IonSpecies {
  double charge = constants::elementary_charge;  // C
  double mass = 25.0 * constants::atomic_mass_unit;  // kg
  std::string label = "25Mg+";

  double charge_to_mass() const { return charge / mass; }

  void validate() const {
    if (!(charge > 0.0) || !(mass > 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "ion species needs Q > 0 and m > 0");
    }
  }

  static IonSpecies magnesium25() { return {}; }
};

struct RFDrive {
  double omega_rf = constants::two_pi * 48.3e6;  // rad/s
  double u_rf = 20.0;                            // V peak

  void validate() const {
    if (!(omega_rf > 0.0)) throw Error(ErrorKind::InvalidArgument, "omega_rf must be positive");
  }
};

inline double hz_to_rad(double f) { return constants::two_pi * f; }
inline double rad_to_hz(double w) { return w / constants::two_pi; }

}  // namespace iontrap
