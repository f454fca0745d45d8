#pragma once

// Closed-form physics of a charged dielectric sphere held in an optical
// trap next to a biased needle. Everything is SI and pure.

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "levitas/constants.hpp"
#include "levitas/error.hpp"

namespace levitas {

struct ParticleSpec {
  double radius = 0.0;   // m
  double density = 0.0;  // kg/m^3
  long charge_count = 0; // multiples of e

  double mass() const;
  double charge() const { return static_cast<double>(charge_count) * constants::elementary_charge; }
  void validate() const;
};

struct TrapSpec {
  double omega_z = 0.0;            // rad/s
  double calibration_gamma = 1.0;  // detector units per metre (multiplies the physical PSD as gamma^2)

  double spring_constant(double mass) const { return mass * omega_z * omega_z; }
  void validate() const;
};

struct Environment {
  double pressure = 0.0;                                  // Pa
  double gas_temperature = 300.0;                         // K
  double gas_molecule_mass = constants::air_molecule_mass; // kg
  double feedback_damping = 0.0;                          // rad/s

  void validate() const;
};

struct NeedleSpec {
  double tip_radius = 0.0;  // m
  double distance = 0.0;    // m, laser focus to tip (d')
  double theta = 0.0;       // rad, force direction vs z

  void validate() const;
};

enum class DriveMode { none, dc, ac };

constexpr std::string_view to_string(DriveMode mode) {
  switch (mode) {
    case DriveMode::none: return "none";
    case DriveMode::dc: return "dc";
    case DriveMode::ac: return "ac";
  }
  return "none";
}

struct DriveProgram {
  DriveMode mode = DriveMode::none;
  double voltage = 0.0;                 // V
  std::optional<double> omega_ac;       // rad/s, only for ac

  void validate() const;
};

inline double mass_from_radius(double radius, double density) {
  require_domain(radius >= 0.0, "mass_from_radius: radius must be >= 0");
  require_domain(density > 0.0, "mass_from_radius: density must be > 0");
  return 4.0 / 3.0 * constants::pi * radius * radius * radius * density;
}

inline double ParticleSpec::mass() const { return mass_from_radius(radius, density); }

inline void ParticleSpec::validate() const {
  require_domain(radius > 0.0 && std::isfinite(radius), "ParticleSpec.radius must be > 0");
  require_domain(density > 0.0 && std::isfinite(density), "ParticleSpec.density must be > 0");
}

inline void TrapSpec::validate() const {
  require_domain(omega_z > 0.0 && std::isfinite(omega_z), "TrapSpec.omega_z must be > 0");
  require_domain(calibration_gamma > 0.0 && std::isfinite(calibration_gamma),
                 "TrapSpec.calibration_gamma must be > 0");
}

inline void Environment::validate() const {
  require_domain(pressure >= 0.0 && std::isfinite(pressure), "Environment.pressure must be >= 0");
  require_domain(gas_temperature > 0.0 && std::isfinite(gas_temperature),
                 "Environment.gas_temperature must be > 0");
  require_domain(gas_molecule_mass > 0.0, "Environment.gas_molecule_mass must be > 0");
  require_domain(feedback_damping >= 0.0 && std::isfinite(feedback_damping),
                 "Environment.feedback_damping must be >= 0");
}

inline void NeedleSpec::validate() const {
  require_domain(tip_radius > 0.0, "NeedleSpec.tip_radius must be > 0");
  require_domain(distance > tip_radius, "NeedleSpec.distance must exceed the tip radius");
  require_domain(theta >= 0.0 && theta < constants::pi / 2.0, "NeedleSpec.theta must lie in [0, pi/2)");
}

inline void DriveProgram::validate() const {
  require_domain(std::isfinite(voltage), "DriveProgram.voltage must be finite");
  switch (mode) {
    case DriveMode::none:
    case DriveMode::dc:
      require_domain(!omega_ac.has_value(), "DriveProgram.omega_ac is only allowed for ac drive");
      break;
    case DriveMode::ac:
      require_domain(omega_ac.has_value() && *omega_ac > 0.0, "DriveProgram.omega_ac must be > 0 for ac drive");
      break;
  }
}

// Epstein free-molecular drag: F = delta (4 pi / 3) r^2 n m_g c_bar v with
// c_bar = sqrt(8 k T / (pi m_g)) and n = P / (k T). Dividing by the sphere
// mass gives Gamma0 = delta P sqrt(8 m_g / (pi k T)) / (r rho).
inline double epstein_prefactor(const Environment& env) {
  return constants::epstein_diffuse *
         std::sqrt(8.0 * env.gas_molecule_mass / (constants::pi * constants::boltzmann * env.gas_temperature));
}

inline double epstein_damping(const Environment& env, const ParticleSpec& particle) {
  env.validate();
  particle.validate();
  return epstein_prefactor(env) * env.pressure / (particle.radius * particle.density);
}

/// Radius that reproduces a measured gas damping rate at the given pressure.
inline double epstein_radius(double gamma0, const Environment& env, double density) {
  env.validate();
  require(gamma0 > 0.0 && std::isfinite(gamma0), ErrorKind::inversion,
          "epstein_radius: gas damping must be > 0 to invert");
  require(env.pressure > 0.0, ErrorKind::inversion, "epstein_radius: pressure must be > 0 to invert");
  require_domain(density > 0.0, "epstein_radius: density must be > 0");
  const double radius = epstein_prefactor(env) * env.pressure / (gamma0 * density);
  // Outside this window the sphere is either sub-molecular or no longer in the
  // free-molecular regime at any pressure where the trap holds.
  require(radius >= 1e-10 && radius <= 1e-4, ErrorKind::inversion,
          "epstein_radius: inverted radius " + std::to_string(radius) + " m is outside [0.1 nm, 100 um]");
  return radius;
}

inline double quality_factor(double omega0, double gamma0) {
  require_domain(omega0 > 0.0 && gamma0 > 0.0, "quality_factor: inputs must be > 0");
  return omega0 / gamma0;
}

/// sqrt(4 k T m omega0 / Q) with Q = omega0 / Gamma0, in N/sqrt(Hz).
inline double thermal_force_sensitivity(double temperature, double mass, double omega0, double gamma0) {
  require_domain(temperature > 0.0 && mass > 0.0 && omega0 > 0.0,
                 "thermal_force_sensitivity: temperature, mass and omega0 must be > 0");
  require_domain(gamma0 >= 0.0, "thermal_force_sensitivity: gamma0 must be >= 0");
  return std::sqrt(4.0 * constants::boltzmann * temperature * mass * gamma0);
}

/// Charge on a spherical needle tip of radius r_t held at potential V.
inline double tip_charge(double voltage, double tip_radius) {
  require_domain(tip_radius > 0.0, "tip_charge: tip radius must be > 0");
  return 4.0 * constants::pi * constants::vacuum_permittivity * tip_radius * voltage;
}

inline double coulomb_force(double particle_charge, double voltage, const NeedleSpec& needle, double distance) {
  require_domain(distance > 0.0, "coulomb_force: distance must be > 0");
  require_domain(needle.tip_radius > 0.0, "coulomb_force: tip radius must be > 0");
  return particle_charge * voltage * needle.tip_radius / (distance * distance);
}

/// Force component along z for the needle at its nominal distance.
inline double coulomb_force_z(double particle_charge, double voltage, const NeedleSpec& needle) {
  return std::cos(needle.theta) * coulomb_force(particle_charge, voltage, needle, needle.distance);
}

/// Mean z shift in the small-displacement limit: cos(theta) q V r_t / (omega_z^2 m d'^2).
inline double dc_displacement(double particle_charge, double voltage, const NeedleSpec& needle,
                              const TrapSpec& trap, double mass) {
  needle.validate();
  trap.validate();
  require_domain(mass > 0.0, "dc_displacement: mass must be > 0");
  return coulomb_force_z(particle_charge, voltage, needle) / (trap.omega_z * trap.omega_z * mass);
}

/// Trap frequency that makes dc_displacement return `displacement`.
inline double trap_frequency_for_displacement(double displacement, double particle_charge, double voltage,
                                              const NeedleSpec& needle, double mass) {
  needle.validate();
  require_domain(mass > 0.0, "trap_frequency_for_displacement: mass must be > 0");
  const double force = coulomb_force_z(particle_charge, voltage, needle);
  require_domain(displacement != 0.0 && force / displacement > 0.0,
                 "trap_frequency_for_displacement: displacement must share the sign of the force");
  return std::sqrt(force / (displacement * mass));
}

inline double cm_temperature(double t0, double gamma0, double delta_gamma) {
  require_domain(gamma0 > 0.0, "cm_temperature: gamma0 must be > 0");
  require_domain(delta_gamma >= 0.0, "cm_temperature: delta_gamma must be >= 0");
  require_domain(t0 > 0.0, "cm_temperature: t0 must be > 0");
  return t0 * gamma0 / (gamma0 + delta_gamma);
}

/// One-sided angular thermal force density 2 m k T Gamma0 / pi [N^2 s].
inline double thermal_force_psd(double temperature, double mass, double gamma0) {
  require_domain(temperature >= 0.0 && mass > 0.0 && gamma0 >= 0.0, "thermal_force_psd: invalid input");
  return 2.0 * mass * constants::boltzmann * temperature * gamma0 / constants::pi;
}

/// |oscillator denominator|^2 = (omega0^2 - omega^2)^2 + gamma^2 omega^2.
inline double response_denominator(double omega, double omega0, double gamma_total) {
  const double detune = omega0 * omega0 - omega * omega;
  return detune * detune + gamma_total * gamma_total * omega * omega;
}

/// Driven peak height (|F_th|^2 + |F_c|^2) / (m^2 |D(omega_ac)|^2).
///
/// `force_c` is the drive term in the same spectral units as `force_th_sq`
/// (see the force pipeline for the integration-time conversion).
inline double ac_response_psd(double omega_ac, double force_c, double force_th_sq, double mass, double omega0,
                              double gamma0, double delta_gamma) {
  require_domain(mass > 0.0 && omega0 > 0.0, "ac_response_psd: mass and omega0 must be > 0");
  require_domain(gamma0 >= 0.0 && delta_gamma >= 0.0 && force_th_sq >= 0.0,
                 "ac_response_psd: damping and thermal force must be >= 0");
  const double denom = response_denominator(omega_ac, omega0, gamma0 + delta_gamma);
  require(denom > 0.0, ErrorKind::singularity, "ac_response_psd: undamped response evaluated on resonance");
  return (force_th_sq + force_c * force_c) / (mass * mass * denom);
}

inline double sql_sensitivity(double omega0, double mass, double tau_f) {
  require_domain(omega0 > 0.0 && tau_f > 0.0, "sql_sensitivity: omega0 and tau_f must be > 0");
  require_domain(mass >= 0.0, "sql_sensitivity: mass must be >= 0");
  return std::sqrt(constants::hbar * omega0 * mass / (2.0 * tau_f));
}

/// Measurement time that puts the SQL at `target` N/sqrt(Hz).
inline double measurement_time_for_sql(double target, double omega0, double mass) {
  require_domain(target > 0.0 && omega0 > 0.0 && mass > 0.0, "measurement_time_for_sql: inputs must be > 0");
  return constants::hbar * omega0 * mass / (2.0 * target * target);
}

namespace presets {

// Back-solved values for quantities the experiment does not report.
// omega_z: dc_displacement = 6.6 nm at 10 kV with q = 9e, m = 7.6e-19 kg,
// r_t = 100 um, d' = 39.6 mm, theta = 45 deg  ->  2 pi * 57.30 kHz.
inline constexpr double dc_trap_frequency_hz = 57.3e3;
inline constexpr double trap_frequency_hz = 57.0e3;
// tau_F: sql_sensitivity = 6e-24 N/sqrt(Hz) at 57 kHz and r = 50 nm silica -> 0.728 s.
inline constexpr double sql_measurement_time = 0.73;
inline constexpr double silica_density = 2650.0;

}  // namespace presets

}  // namespace levitas
