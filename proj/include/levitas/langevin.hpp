#pragma once

// Stochastic integration of the driven, damped trap oscillator
//
//   z'' + (Gamma0 + dGamma) z' + omega_z^2 z = F_th(t)/m + F_z(t)/m
//
// with a BAOAB splitting: half kicks from the conservative and drive force
// (B), half drifts (A), and an exact Ornstein-Uhlenbeck update of the velocity
// (O). Feedback is cold viscous damping, so the O step relaxes towards the
// effective temperature T0 Gamma0 / (Gamma0 + dGamma). With noise off the
// scheme reduces to a second-order Strang splitting.
//
// The spring kicks use the stiffness omega_s^2 = (2 sin(omega_z dt / 2) / dt)^2,
// which makes the discrete oscillation frequency equal omega_z exactly. Plain
// Verlet stiffness would shift the resonance by (omega_z dt)^2 / 24, far more
// than a high-Q linewidth. The price is a stationary variance of
// k T / (m omega_s^2), high by about (omega_z dt)^2 / 12.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "levitas/constants.hpp"
#include "levitas/core_model.hpp"
#include "levitas/error.hpp"
#include "levitas/experiment.hpp"
#include "levitas/rng.hpp"

namespace levitas {

/// Largest accepted omega_z * dt.
inline constexpr double max_phase_per_step = 0.1;

struct SimulationPlan {
  ExperimentConfig experiment;
  double duration = 0.0;  // s
  double dt = 0.0;        // s
  std::uint64_t seed = 0;
  bool record_velocity = false;
  bool thermal_noise = true;
  InitialCondition initial = InitialCondition::rest;
  double initial_z = 0.0;  // m, rest start only
  double initial_v = 0.0;  // m/s, rest start only

  static SimulationPlan from_config(const ExperimentConfig& config) {
    SimulationPlan plan;
    plan.experiment = config;
    plan.duration = config.simulation.duration;
    plan.dt = config.simulation.dt;
    plan.seed = config.simulation.seed;
    plan.record_velocity = config.simulation.record_velocity;
    plan.initial = config.simulation.initial;
    return plan;
  }

  std::size_t sample_count() const {
    return static_cast<std::size_t>(std::floor(duration / dt * (1.0 + 1e-12)));
  }

  void validate() const {
    experiment.validate();
    require(dt > 0.0 && std::isfinite(dt), ErrorKind::configuration, "SimulationPlan.dt must be > 0");
    require(duration >= dt && std::isfinite(duration), ErrorKind::configuration,
            "SimulationPlan.duration must be >= dt");
    require(dt * experiment.trap.omega_z <= max_phase_per_step * (1.0 + 1e-12), ErrorKind::configuration,
            "SimulationPlan: dt * omega_z = " + std::to_string(dt * experiment.trap.omega_z) +
                " exceeds the stability guard " + std::to_string(max_phase_per_step));
  }
};

struct Trajectory {
  double dt = 0.0;
  std::vector<double> positions;
  std::optional<std::vector<double>> velocities;
  std::uint64_t seed = 0;
  ExperimentConfig experiment;

  std::size_t size() const { return positions.size(); }
  double time(std::size_t i) const { return static_cast<double>(i) * dt; }
  double duration() const { return static_cast<double>(positions.size()) * dt; }
};

/// Leading-order impulse standard deviation of the thermal force over one
/// step, sqrt(2 k T0 m Gamma0 dt) [N s]. Divided by m it is the velocity kick
/// sqrt(2 k T0 Gamma0 dt / m); the integrator uses the exact OU variance
/// (k T / m)(1 - exp(-2 Gamma dt)), which agrees to first order in dt.
inline double thermal_kick_sigma(double t0, double mass, double gamma0, double dt) {
  require_domain(t0 >= 0.0 && mass > 0.0 && gamma0 >= 0.0 && dt > 0.0,
                 "thermal_kick_sigma: inputs must be non-negative with mass, dt > 0");
  return std::sqrt(2.0 * constants::boltzmann * t0 * mass * gamma0 * dt);
}

/// Tracks (cos wt, sin wt) on t = n dt by complex rotation, resynchronised
/// from the exact phase every `resync` steps so rounding cannot accumulate.
class PhaseRotator {
 public:
  PhaseRotator(double omega, double dt) : omega_(omega), dt_(dt), step_(std::polar(1.0, omega * dt)) { reset(0); }

  void reset(std::size_t index) {
    index_ = index;
    value_ = std::polar(1.0, omega_ * dt_ * static_cast<double>(index));
  }

  double cos() const { return value_.real(); }
  double sin() const { return value_.imag(); }
  std::complex<double> value() const { return value_; }

  void advance() {
    ++index_;
    if (index_ % resync == 0) {
      value_ = std::polar(1.0, omega_ * dt_ * static_cast<double>(index_));
    } else {
      value_ *= step_;
    }
  }

  static constexpr std::size_t resync = 1024;

 private:
  double omega_;
  double dt_;
  std::complex<double> step_;
  std::complex<double> value_;
  std::size_t index_ = 0;
};

namespace detail {

struct OscillatorTerms {
  double omega_sq;
  double gamma_total;
  double t_eff;
  double mass;
  double drive_accel;  // F_z / m
  DriveMode mode;
  double omega_ac;
};

/// Kick stiffness whose velocity-Verlet rotation angle per step is omega dt.
inline double matched_stiffness(double omega, double dt) {
  const double s = 2.0 * std::sin(0.5 * omega * dt) / dt;
  return s * s;
}

inline OscillatorTerms oscillator_terms(const ExperimentConfig& cfg, double dt) {
  OscillatorTerms t{};
  t.mass = cfg.mass();
  t.omega_sq = matched_stiffness(cfg.trap.omega_z, dt);
  const double gamma0 = cfg.gamma0();
  t.gamma_total = gamma0 + cfg.environment.feedback_damping;
  t.t_eff = t.gamma_total > 0.0 ? cfg.environment.gas_temperature * gamma0 / t.gamma_total : 0.0;
  t.mode = cfg.drive.mode;
  t.drive_accel =
      cfg.drive.mode == DriveMode::none ? 0.0 : coulomb_force_z(cfg.particle.charge(), cfg.drive.voltage, cfg.needle) / t.mass;
  t.omega_ac = cfg.drive.omega_ac.value_or(0.0);
  return t;
}

}  // namespace detail

/// Runs the integrator and hands each sample to `sink(index, z, v)`,
/// sample i being the state at t = i dt. Use this directly to reduce long
/// runs on the fly instead of materialising a Trajectory.
template <class Sink>
void integrate(const SimulationPlan& plan, Sink&& sink) {
  plan.validate();
  const auto terms = detail::oscillator_terms(plan.experiment, plan.dt);
  const double dt = plan.dt;
  const double half = 0.5 * dt;
  const std::size_t n = plan.sample_count();

  const double decay = std::exp(-terms.gamma_total * dt);
  const double kt_over_m = constants::boltzmann * terms.t_eff / terms.mass;
  const double noise = plan.thermal_noise ? std::sqrt(kt_over_m * (1.0 - decay * decay)) : 0.0;

  NormalSource rng(plan.seed);

  double z = plan.initial_z;
  double v = plan.initial_v;
  if (plan.initial == InitialCondition::thermal) {
    const double z_eq = terms.mode == DriveMode::dc ? terms.drive_accel / terms.omega_sq : 0.0;
    const double kt = plan.thermal_noise ? kt_over_m : 0.0;
    z = z_eq + std::sqrt(kt / terms.omega_sq) * rng.normal();
    v = std::sqrt(kt) * rng.normal();
  }

  std::optional<PhaseRotator> drive;
  if (terms.mode == DriveMode::ac) drive.emplace(terms.omega_ac, dt);
  double drive_now = terms.mode == DriveMode::none ? 0.0 : terms.drive_accel;  // a(t_0); cos(0) = 1

  for (std::size_t i = 0; i < n; ++i) {
    sink(i, z, v);
    if (i + 1 == n) break;

    double drive_next = drive_now;
    if (drive) {
      drive->advance();
      drive_next = terms.drive_accel * drive->cos();
    }

    v += half * (drive_now - terms.omega_sq * z);
    z += half * v;
    v = decay * v + noise * rng.normal();
    z += half * v;
    v += half * (drive_next - terms.omega_sq * z);
    drive_now = drive_next;

    if (!std::isfinite(z) || !std::isfinite(v)) {
      throw IntegrationFailure(i + 1, "simulate: state became non-finite at step " + std::to_string(i + 1));
    }
  }
}

inline Trajectory simulate(const SimulationPlan& plan) {
  plan.validate();
  Trajectory out;
  out.dt = plan.dt;
  out.seed = plan.seed;
  out.experiment = plan.experiment;
  const std::size_t n = plan.sample_count();
  out.positions.resize(n);
  if (plan.record_velocity) out.velocities.emplace(n);
  integrate(plan, [&](std::size_t i, double z, double v) {
    out.positions[i] = z;
    if (out.velocities) (*out.velocities)[i] = v;
  });
  return out;
}

/// Least-squares fit of a cos(wt) + b sin(wt) + c, accumulated sample by sample.
class SineFitAccumulator {
 public:
  SineFitAccumulator(double omega, double dt, std::size_t first_index)
      : rotator_(omega, dt) {
    rotator_.reset(first_index);
  }

  void add(double z) {
    const double c = rotator_.cos();
    const double s = rotator_.sin();
    scc_ += c * c;
    sss_ += s * s;
    scs_ += c * s;
    sc_ += c;
    ss_ += s;
    zc_ += z * c;
    zs_ += z * s;
    z_ += z;
    ++count_;
    rotator_.advance();
  }

  std::size_t count() const { return count_; }

  /// Returns (a, b, c).
  std::array<double, 3> solve() const {
    const double n = static_cast<double>(count_);
    // Symmetric 3x3 normal equations, solved by Cramer's rule.
    const double m[3][3] = {{scc_, scs_, sc_}, {scs_, sss_, ss_}, {sc_, ss_, n}};
    const double r[3] = {zc_, zs_, z_};
    auto det3 = [](const double a[3][3]) {
      return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
             a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    };
    const double d = det3(m);
    require(d != 0.0 && std::isfinite(d), ErrorKind::insufficient_data, "sine fit: singular normal equations");
    std::array<double, 3> out{};
    for (int k = 0; k < 3; ++k) {
      double mk[3][3];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) mk[i][j] = (j == k) ? r[i] : m[i][j];
      out[k] = det3(mk) / d;
    }
    return out;
  }

 private:
  PhaseRotator rotator_;
  double scc_ = 0, sss_ = 0, scs_ = 0, sc_ = 0, ss_ = 0, zc_ = 0, zs_ = 0, z_ = 0;
  std::size_t count_ = 0;
};

struct SteadyState {
  double amplitude = 0.0;  // m
  double phase = 0.0;      // rad, z = A cos(w t + phase)
  double offset = 0.0;     // m
  std::size_t samples = 0;
};

inline std::size_t settle_index(std::size_t n, double settle_fraction) {
  require_domain(settle_fraction >= 0.0 && settle_fraction < 1.0, "settle_fraction must lie in [0, 1)");
  return static_cast<std::size_t>(std::floor(settle_fraction * static_cast<double>(n)));
}

inline void check_demodulation_window(std::size_t samples, double dt, double omega) {
  require_domain(omega > 0.0 && omega * dt < constants::pi, "demodulation frequency must lie in (0, Nyquist)");
  const double periods = static_cast<double>(samples) * dt * omega / (2.0 * constants::pi);
  require(periods >= 20.0, ErrorKind::insufficient_data,
          "demodulation window spans " + std::to_string(periods) + " drive periods, need >= 20");
}

/// Amplitude and phase of the response at omega_ac over the post-settle window.
inline SteadyState steady_state_amplitude(const Trajectory& trajectory, double omega_ac, double settle_fraction) {
  const std::size_t first = settle_index(trajectory.size(), settle_fraction);
  const std::size_t samples = trajectory.size() - first;
  check_demodulation_window(samples, trajectory.dt, omega_ac);
  SineFitAccumulator acc(omega_ac, trajectory.dt, first);
  for (std::size_t i = first; i < trajectory.size(); ++i) acc.add(trajectory.positions[i]);
  const auto [a, b, c] = acc.solve();
  return SteadyState{std::hypot(a, b), std::atan2(-b, a), c, samples};
}

}  // namespace levitas
