#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "levitas/core_model.hpp"

namespace levitas {

enum class WindowKind { hann, rectangular };

constexpr std::string_view to_string(WindowKind w) { return w == WindowKind::hann ? "hann" : "rectangular"; }

enum class InitialCondition { rest, thermal };

constexpr std::string_view to_string(InitialCondition c) { return c == InitialCondition::rest ? "rest" : "thermal"; }

struct SimulationDefaults {
  double dt = 0.0;        // s
  double duration = 0.0;  // s
  std::uint64_t seed = 0;
  double settle_fraction = 0.2;
  InitialCondition initial = InitialCondition::rest;
  bool record_velocity = false;
};

struct SweepSettings {
  std::vector<double> dc_voltages;      // V
  double ac_detuning_step = 0.0;        // rad/s
  int ac_points = 21;
  double integration_time = 10.0;       // s of post-settle data per point
};

struct AnalysisSettings {
  double tau_f = presets::sql_measurement_time;  // s
  bool project_cos_theta = true;
  std::size_t segment_length = 65536;
  double overlap = 0.5;
  WindowKind window = WindowKind::hann;
  double pressure_rel_uncertainty = 0.15;
  double snr_threshold = 1.0;
};

/// Full description of one run. Values are SI; `feedback_over_gamma0`
/// remembers whether the feedback damping was given relative to the gas
/// damping so the file form survives a round trip.
struct ExperimentConfig {
  std::string name;
  std::vector<std::pair<std::string, std::string>> notes;
  ParticleSpec particle;
  TrapSpec trap;
  Environment environment;
  std::optional<double> feedback_over_gamma0;
  NeedleSpec needle;
  DriveProgram drive;
  SimulationDefaults simulation;
  std::optional<SweepSettings> sweep;
  AnalysisSettings analysis;

  double mass() const { return particle.mass(); }
  double gamma0() const { return epstein_damping(environment, particle); }
  double gamma_total() const { return gamma0() + environment.feedback_damping; }

  void validate() const {
    particle.validate();
    trap.validate();
    environment.validate();
    needle.validate();
    drive.validate();
  }
};

}  // namespace levitas
