#pragma once

// Experiment configuration files.
//
// JSON with a unit suffix on every dimensioned key, converted to SI on load.
// Parsing collects every problem it finds, each tagged with the JSON pointer
// of the offending value. Serialization writes keys in a fixed order with
// values rounded to 15 significant digits, so a serialized file parses and
// re-serializes to the same bytes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "levitas/constants.hpp"
#include "levitas/core_model.hpp"
#include "levitas/error.hpp"
#include "levitas/experiment.hpp"
#include "levitas/langevin.hpp"

namespace levitas {

struct ConfigIssue {
  std::string pointer;
  std::string message;
};

class ParseError : public Error {
 public:
  explicit ParseError(std::vector<ConfigIssue> issues)
      : Error(ErrorKind::parse, summarise(issues)), issues_(std::move(issues)) {}
  const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

 private:
  static std::string summarise(const std::vector<ConfigIssue>& issues) {
    std::string out = std::to_string(issues.size()) + " configuration problem(s)";
    for (const auto& i : issues) out += "; " + (i.pointer.empty() ? "/" : i.pointer) + ": " + i.message;
    return out;
  }
  std::vector<ConfigIssue> issues_;
};

namespace units {
inline constexpr double nm = 1e-9;
inline constexpr double um = 1e-6;
inline constexpr double mm = 1e-3;
inline constexpr double ns = 1e-9;
inline constexpr double khz_to_rad_s = 2.0 * constants::pi * 1e3;
inline constexpr double hz_to_rad_s = 2.0 * constants::pi;
inline constexpr double deg = constants::pi / 180.0;
}  // namespace units

namespace detail {

using json = nlohmann::ordered_json;

class ConfigReader {
 public:
  std::vector<ConfigIssue> issues;

  void fail(const std::string& pointer, const std::string& message) { issues.push_back({pointer, message}); }

  /// Object at `key`; null when absent (reported if required) or not an object.
  const json* object(const json& parent, const std::string& ptr, const char* key, bool required) {
    const std::string here = ptr + "/" + key;
    auto it = parent.find(key);
    if (it == parent.end()) {
      if (required) fail(here, "missing required section");
      return nullptr;
    }
    if (!it->is_object()) {
      fail(here, "expected an object");
      return nullptr;
    }
    return &*it;
  }

  /// Rejects keys outside `known`, pointing unit-less spellings at the right key.
  void reject_unknown(const json& obj, const std::string& ptr, const std::vector<std::string>& known) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      const std::string& key = it.key();
      if (std::find(known.begin(), known.end(), key) != known.end()) continue;
      std::string hint;
      for (const auto& k : known) {
        if (k.rfind(key + "_", 0) == 0) hint = k;
      }
      fail(ptr + "/" + key, hint.empty() ? "unknown key" : "value needs a unit suffix, expected '" + hint + "'");
    }
  }

  std::optional<double> number(const json& obj, const std::string& ptr, const char* key, bool required) {
    const std::string here = ptr + "/" + key;
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) fail(here, "missing required field");
      return std::nullopt;
    }
    if (!it->is_number()) {
      fail(here, "expected a number");
      return std::nullopt;
    }
    const double v = it->get<double>();
    if (!std::isfinite(v)) {
      fail(here, "must be finite");
      return std::nullopt;
    }
    return v;
  }

  std::optional<long long> integer(const json& obj, const std::string& ptr, const char* key, bool required) {
    const std::string here = ptr + "/" + key;
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) fail(here, "missing required field");
      return std::nullopt;
    }
    if (!it->is_number_integer()) {
      fail(here, "expected an integer");
      return std::nullopt;
    }
    return it->get<long long>();
  }

  std::optional<std::uint64_t> unsigned64(const json& obj, const std::string& ptr, const char* key, bool required) {
    const std::string here = ptr + "/" + key;
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) fail(here, "missing required field");
      return std::nullopt;
    }
    if (!it->is_number_unsigned()) {
      fail(here, "expected a non-negative integer");
      return std::nullopt;
    }
    return it->get<std::uint64_t>();
  }

  std::optional<bool> boolean(const json& obj, const std::string& ptr, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) return std::nullopt;
    if (!it->is_boolean()) {
      fail(ptr + "/" + key, "expected true or false");
      return std::nullopt;
    }
    return it->get<bool>();
  }

  std::optional<std::string> string(const json& obj, const std::string& ptr, const char* key, bool required) {
    const std::string here = ptr + "/" + key;
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) fail(here, "missing required field");
      return std::nullopt;
    }
    if (!it->is_string()) {
      fail(here, "expected a string");
      return std::nullopt;
    }
    return it->get<std::string>();
  }

  void check(bool ok, const std::string& pointer, const std::string& message) {
    if (!ok) fail(pointer, message);
  }
};

inline double round15(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v == 0.0 ? 0.0 : v;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return std::strtod(buf, nullptr);
}

}  // namespace detail

inline ExperimentConfig parse_config_json(const nlohmann::ordered_json& doc) {
  using detail::json;
  detail::ConfigReader r;
  ExperimentConfig cfg;
  if (!doc.is_object()) throw ParseError(std::vector<ConfigIssue>{{"", "configuration must be a JSON object"}});

  r.reject_unknown(doc, "", {"name", "notes", "particle", "trap", "environment", "needle", "drive", "simulation",
                             "sweep", "analysis"});
  if (auto v = r.string(doc, "", "name", false)) cfg.name = *v;
  if (auto it = doc.find("notes"); it != doc.end()) {
    if (!it->is_object()) {
      r.fail("/notes", "expected an object of strings");
    } else {
      for (auto n = it->begin(); n != it->end(); ++n) {
        if (n->is_string()) {
          cfg.notes.emplace_back(n.key(), n->get<std::string>());
        } else {
          r.fail("/notes/" + n.key(), "expected a string");
        }
      }
    }
  }

  bool particle_ok = false, env_ok = false;
  if (auto p = r.object(doc, "", "particle", true)) {
    const std::string ptr = "/particle";
    r.reject_unknown(*p, ptr, {"radius_nm", "density_kg_m3", "charge_e"});
    auto radius = r.number(*p, ptr, "radius_nm", true);
    auto density = r.number(*p, ptr, "density_kg_m3", true);
    auto charge = r.integer(*p, ptr, "charge_e", true);
    if (radius) {
      cfg.particle.radius = *radius * units::nm;
      r.check(*radius > 0.0, ptr + "/radius_nm", "ParticleSpec.radius must be > 0");
    }
    if (density) {
      cfg.particle.density = *density;
      r.check(*density > 0.0, ptr + "/density_kg_m3", "ParticleSpec.density must be > 0");
    }
    if (charge) cfg.particle.charge_count = static_cast<long>(*charge);
    particle_ok = radius && density && *radius > 0.0 && *density > 0.0;
  }

  if (auto t = r.object(doc, "", "trap", true)) {
    const std::string ptr = "/trap";
    r.reject_unknown(*t, ptr, {"frequency_khz", "calibration_gamma_per_m"});
    if (auto f = r.number(*t, ptr, "frequency_khz", true)) {
      cfg.trap.omega_z = *f * units::khz_to_rad_s;
      r.check(*f > 0.0, ptr + "/frequency_khz", "TrapSpec.omega_z must be > 0");
    }
    if (auto g = r.number(*t, ptr, "calibration_gamma_per_m", false)) {
      cfg.trap.calibration_gamma = *g;
      r.check(*g > 0.0, ptr + "/calibration_gamma_per_m", "TrapSpec.calibration_gamma must be > 0");
    }
  }

  std::optional<double> feedback_ratio;
  if (auto e = r.object(doc, "", "environment", true)) {
    const std::string ptr = "/environment";
    r.reject_unknown(*e, ptr, {"pressure_mbar", "gas_temperature_k", "gas_molecule_mass_u", "feedback_damping_rad_s",
                               "feedback_damping_over_gamma0"});
    auto pressure = r.number(*e, ptr, "pressure_mbar", true);
    if (pressure) {
      cfg.environment.pressure = *pressure * constants::pascal_per_mbar;
      r.check(*pressure >= 0.0, ptr + "/pressure_mbar", "Environment.pressure must be >= 0");
    }
    auto temperature = r.number(*e, ptr, "gas_temperature_k", false);
    if (temperature) {
      cfg.environment.gas_temperature = *temperature;
      r.check(*temperature > 0.0, ptr + "/gas_temperature_k", "Environment.gas_temperature must be > 0");
    }
    auto molecule = r.number(*e, ptr, "gas_molecule_mass_u", false);
    if (molecule) {
      cfg.environment.gas_molecule_mass = *molecule * constants::atomic_mass_unit;
      r.check(*molecule > 0.0, ptr + "/gas_molecule_mass_u", "Environment.gas_molecule_mass must be > 0");
    }
    auto absolute = r.number(*e, ptr, "feedback_damping_rad_s", false);
    feedback_ratio = r.number(*e, ptr, "feedback_damping_over_gamma0", false);
    if (absolute && feedback_ratio) {
      r.fail(ptr + "/feedback_damping_over_gamma0", "give feedback damping either in rad/s or relative, not both");
    } else if (absolute) {
      cfg.environment.feedback_damping = *absolute;
      r.check(*absolute >= 0.0, ptr + "/feedback_damping_rad_s", "Environment.feedback_damping must be >= 0");
    } else if (feedback_ratio) {
      r.check(*feedback_ratio >= 0.0, ptr + "/feedback_damping_over_gamma0",
              "Environment.feedback_damping must be >= 0");
    }
    env_ok = (!pressure || *pressure >= 0.0) && (!temperature || *temperature > 0.0) &&
             (!molecule || *molecule > 0.0) && pressure.has_value();
  }
  if (feedback_ratio && *feedback_ratio >= 0.0 && particle_ok && env_ok) {
    cfg.feedback_over_gamma0 = *feedback_ratio;
    cfg.environment.feedback_damping = *feedback_ratio * epstein_damping(cfg.environment, cfg.particle);
  }

  if (auto n = r.object(doc, "", "needle", true)) {
    const std::string ptr = "/needle";
    r.reject_unknown(*n, ptr, {"tip_radius_um", "distance_mm", "angle_deg"});
    auto tip = r.number(*n, ptr, "tip_radius_um", true);
    auto distance = r.number(*n, ptr, "distance_mm", true);
    auto angle = r.number(*n, ptr, "angle_deg", true);
    if (tip) {
      cfg.needle.tip_radius = *tip * units::um;
      r.check(*tip > 0.0, ptr + "/tip_radius_um", "NeedleSpec.tip_radius must be > 0");
    }
    if (distance) {
      cfg.needle.distance = *distance * units::mm;
      r.check(!tip || cfg.needle.distance > cfg.needle.tip_radius, ptr + "/distance_mm",
              "NeedleSpec.distance must exceed the tip radius");
    }
    if (angle) {
      cfg.needle.theta = *angle * units::deg;
      r.check(*angle >= 0.0 && *angle < 90.0, ptr + "/angle_deg", "NeedleSpec.theta must lie in [0, pi/2)");
    }
  }

  if (auto d = r.object(doc, "", "drive", true)) {
    const std::string ptr = "/drive";
    r.reject_unknown(*d, ptr, {"mode", "voltage_v", "frequency_khz"});
    auto mode = r.string(*d, ptr, "mode", true);
    if (mode) {
      if (*mode == "none") {
        cfg.drive.mode = DriveMode::none;
      } else if (*mode == "dc") {
        cfg.drive.mode = DriveMode::dc;
      } else if (*mode == "ac") {
        cfg.drive.mode = DriveMode::ac;
      } else {
        r.fail(ptr + "/mode", "expected one of none, dc, ac");
      }
    }
    const bool driven = mode && (*mode == "dc" || *mode == "ac");
    if (auto v = r.number(*d, ptr, "voltage_v", driven)) cfg.drive.voltage = *v;
    auto f = r.number(*d, ptr, "frequency_khz", mode && *mode == "ac");
    if (f) {
      if (mode && *mode != "ac") {
        r.fail(ptr + "/frequency_khz", "DriveProgram.omega_ac is only allowed for ac drive");
      } else {
        cfg.drive.omega_ac = *f * units::khz_to_rad_s;
        r.check(*f > 0.0, ptr + "/frequency_khz", "DriveProgram.omega_ac must be > 0 for ac drive");
      }
    }
  }

  if (auto s = r.object(doc, "", "simulation", true)) {
    const std::string ptr = "/simulation";
    r.reject_unknown(*s, ptr, {"dt_ns", "duration_s", "seed", "settle_fraction", "initial", "record_velocity"});
    auto dt = r.number(*s, ptr, "dt_ns", true);
    auto duration = r.number(*s, ptr, "duration_s", true);
    if (dt) {
      cfg.simulation.dt = *dt * units::ns;
      r.check(*dt > 0.0, ptr + "/dt_ns", "SimulationPlan.dt must be > 0");
      if (*dt > 0.0 && cfg.trap.omega_z > 0.0) {
        r.check(cfg.simulation.dt * cfg.trap.omega_z <= max_phase_per_step * (1.0 + 1e-12), ptr + "/dt_ns",
                "SimulationPlan: dt * omega_z exceeds the stability guard " + std::to_string(max_phase_per_step));
      }
    }
    if (duration) {
      cfg.simulation.duration = *duration;
      r.check(!dt || *duration >= cfg.simulation.dt, ptr + "/duration_s", "SimulationPlan.duration must be >= dt");
    }
    if (auto seed = r.unsigned64(*s, ptr, "seed", true)) cfg.simulation.seed = *seed;
    if (auto f = r.number(*s, ptr, "settle_fraction", false)) {
      cfg.simulation.settle_fraction = *f;
      r.check(*f >= 0.0 && *f < 1.0, ptr + "/settle_fraction", "settle_fraction must lie in [0, 1)");
    }
    if (auto init = r.string(*s, ptr, "initial", false)) {
      if (*init == "rest") {
        cfg.simulation.initial = InitialCondition::rest;
      } else if (*init == "thermal") {
        cfg.simulation.initial = InitialCondition::thermal;
      } else {
        r.fail(ptr + "/initial", "expected rest or thermal");
      }
    }
    if (auto rv = r.boolean(*s, ptr, "record_velocity")) cfg.simulation.record_velocity = *rv;
  }

  if (auto s = r.object(doc, "", "sweep", false)) {
    const std::string ptr = "/sweep";
    r.reject_unknown(*s, ptr, {"dc_voltages_v", "ac_detuning_step_hz", "ac_points", "integration_time_s"});
    SweepSettings sweep;
    if (auto it = s->find("dc_voltages_v"); it != s->end()) {
      if (!it->is_array()) {
        r.fail(ptr + "/dc_voltages_v", "expected an array of numbers");
      } else {
        for (std::size_t i = 0; i < it->size(); ++i) {
          if ((*it)[i].is_number()) {
            sweep.dc_voltages.push_back((*it)[i].get<double>());
          } else {
            r.fail(ptr + "/dc_voltages_v/" + std::to_string(i), "expected a number");
          }
        }
      }
    }
    if (auto v = r.number(*s, ptr, "ac_detuning_step_hz", false)) {
      sweep.ac_detuning_step = *v * units::hz_to_rad_s;
      r.check(*v > 0.0, ptr + "/ac_detuning_step_hz", "ac detuning step must be > 0");
    }
    if (auto v = r.integer(*s, ptr, "ac_points", false)) {
      sweep.ac_points = static_cast<int>(*v);
      r.check(*v >= 1 && *v <= 100000, ptr + "/ac_points", "ac_points must lie in [1, 100000]");
    }
    if (auto v = r.number(*s, ptr, "integration_time_s", false)) {
      sweep.integration_time = *v;
      r.check(*v > 0.0, ptr + "/integration_time_s", "integration time must be > 0");
    }
    cfg.sweep = sweep;
  }

  if (auto a = r.object(doc, "", "analysis", false)) {
    const std::string ptr = "/analysis";
    r.reject_unknown(*a, ptr, {"tau_f_s", "project_cos_theta", "segment_length_samples", "overlap_fraction", "window",
                               "pressure_rel_uncertainty", "snr_threshold"});
    auto& an = cfg.analysis;
    if (auto v = r.number(*a, ptr, "tau_f_s", false)) {
      an.tau_f = *v;
      r.check(*v > 0.0, ptr + "/tau_f_s", "tau_f must be > 0");
    }
    if (auto v = r.boolean(*a, ptr, "project_cos_theta")) an.project_cos_theta = *v;
    if (auto v = r.integer(*a, ptr, "segment_length_samples", false)) {
      r.check(*v >= 2, ptr + "/segment_length_samples", "segment length must be >= 2");
      if (*v >= 2) an.segment_length = static_cast<std::size_t>(*v);
    }
    if (auto v = r.number(*a, ptr, "overlap_fraction", false)) {
      an.overlap = *v;
      r.check(*v >= 0.0 && *v < 1.0, ptr + "/overlap_fraction", "overlap must lie in [0, 1)");
    }
    if (auto v = r.string(*a, ptr, "window", false)) {
      if (*v == "hann") {
        an.window = WindowKind::hann;
      } else if (*v == "rectangular") {
        an.window = WindowKind::rectangular;
      } else {
        r.fail(ptr + "/window", "expected hann or rectangular");
      }
    }
    if (auto v = r.number(*a, ptr, "pressure_rel_uncertainty", false)) {
      an.pressure_rel_uncertainty = *v;
      r.check(*v >= 0.0, ptr + "/pressure_rel_uncertainty", "pressure uncertainty must be >= 0");
    }
    if (auto v = r.number(*a, ptr, "snr_threshold", false)) {
      an.snr_threshold = *v;
      r.check(*v > 0.0, ptr + "/snr_threshold", "snr threshold must be > 0");
    }
  }

  if (!r.issues.empty()) throw ParseError(std::move(r.issues));
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw ParseError(std::vector<ConfigIssue>{{"", e.what()}});
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::ordered_json::parse_error& e) {
    throw ParseError(std::vector<ConfigIssue>{{"", std::string("invalid JSON: ") + e.what()}});
  }
  return parse_config_json(doc);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ExperimentConfig parse_config_file(const std::string& path) { return parse_config_text(read_text_file(path)); }

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  using detail::round15;
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  auto& notes = j["notes"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : cfg.notes) notes[k] = v;
  j["particle"] = {{"radius_nm", round15(cfg.particle.radius / units::nm)},
                   {"density_kg_m3", round15(cfg.particle.density)},
                   {"charge_e", cfg.particle.charge_count}};
  j["trap"] = {{"frequency_khz", round15(cfg.trap.omega_z / units::khz_to_rad_s)},
               {"calibration_gamma_per_m", round15(cfg.trap.calibration_gamma)}};
  nlohmann::ordered_json env = {{"pressure_mbar", round15(cfg.environment.pressure / constants::pascal_per_mbar)},
                                {"gas_temperature_k", round15(cfg.environment.gas_temperature)},
                                {"gas_molecule_mass_u",
                                 round15(cfg.environment.gas_molecule_mass / constants::atomic_mass_unit)}};
  if (cfg.feedback_over_gamma0) {
    env["feedback_damping_over_gamma0"] = round15(*cfg.feedback_over_gamma0);
  } else {
    env["feedback_damping_rad_s"] = round15(cfg.environment.feedback_damping);
  }
  j["environment"] = env;
  j["needle"] = {{"tip_radius_um", round15(cfg.needle.tip_radius / units::um)},
                 {"distance_mm", round15(cfg.needle.distance / units::mm)},
                 {"angle_deg", round15(cfg.needle.theta / units::deg)}};
  nlohmann::ordered_json drive = {{"mode", std::string(to_string(cfg.drive.mode))},
                                  {"voltage_v", round15(cfg.drive.voltage)}};
  if (cfg.drive.omega_ac) drive["frequency_khz"] = round15(*cfg.drive.omega_ac / units::khz_to_rad_s);
  j["drive"] = drive;
  j["simulation"] = {{"dt_ns", round15(cfg.simulation.dt / units::ns)},
                     {"duration_s", round15(cfg.simulation.duration)},
                     {"seed", cfg.simulation.seed},
                     {"settle_fraction", round15(cfg.simulation.settle_fraction)},
                     {"initial", std::string(to_string(cfg.simulation.initial))},
                     {"record_velocity", cfg.simulation.record_velocity}};
  if (cfg.sweep) {
    nlohmann::ordered_json volts = nlohmann::ordered_json::array();
    for (double v : cfg.sweep->dc_voltages) volts.push_back(round15(v));
    j["sweep"] = {{"dc_voltages_v", volts},
                  {"ac_detuning_step_hz", round15(cfg.sweep->ac_detuning_step / units::hz_to_rad_s)},
                  {"ac_points", cfg.sweep->ac_points},
                  {"integration_time_s", round15(cfg.sweep->integration_time)}};
  }
  const auto& an = cfg.analysis;
  j["analysis"] = {{"tau_f_s", round15(an.tau_f)},
                   {"project_cos_theta", an.project_cos_theta},
                   {"segment_length_samples", an.segment_length},
                   {"overlap_fraction", round15(an.overlap)},
                   {"window", std::string(to_string(an.window))},
                   {"pressure_rel_uncertainty", round15(an.pressure_rel_uncertainty)},
                   {"snr_threshold", round15(an.snr_threshold)}};
  return j;
}

inline std::string serialize_config(const ExperimentConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

}  // namespace levitas
