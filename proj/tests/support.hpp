#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "levitas/experiment.hpp"

namespace levitas::testing {

inline bool throws_kind(ErrorKind kind, auto&& fn) {
  try {
    fn();
  } catch (const Error& err) {
    return err.kind() == kind;
  }
  return false;
}

/// 41 nm silica sphere in a 57 kHz trap.
inline ExperimentConfig base_config(double pressure_mbar, double feedback_over_gamma0 = 0.0) {
  ExperimentConfig c;
  c.name = "test";
  c.particle = {41e-9, 2650.0, 9};
  c.trap = {2.0 * constants::pi * 57e3, 1.0};
  c.environment.pressure = pressure_mbar * constants::pascal_per_mbar;
  c.environment.feedback_damping = feedback_over_gamma0 * c.gamma0();
  c.needle = {100e-6, 39.6e-3, constants::pi / 4.0};
  c.simulation.dt = 0.05 / c.trap.omega_z;
  c.simulation.duration = 0.01;
  c.simulation.seed = 1;
  c.simulation.initial = InitialCondition::thermal;
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("levitas-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace levitas::testing
