#pragma once

// Command-line front end. run_command is the whole program; the executable
// only forwards argv. Every artifact is a pure function of the config file
// bytes, the seed, any input file and the tool version, and lands in a
// per-run directory named after a hash of those.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "levitas/campaigns.hpp"
#include "levitas/config.hpp"
#include "levitas/core_model.hpp"
#include "levitas/error.hpp"
#include "levitas/force_pipeline.hpp"
#include "levitas/io.hpp"
#include "levitas/langevin.hpp"
#include "levitas/lorentz_fit.hpp"
#include "levitas/spectral.hpp"

#ifndef LEVITAS_VERSION
#define LEVITAS_VERSION "0.0.0"
#endif

namespace levitas {

inline constexpr std::string_view tool_version = LEVITAS_VERSION;

namespace cli {

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = 1;
  std::string format = "csv";
  std::string input;
};

struct Context {
  Options options;
  std::string config_bytes;
  ExperimentConfig config;
  std::string input_bytes;
  std::uint64_t seed = 0;
  std::string run_id;
  std::filesystem::path run_dir;
  std::vector<std::string> files;

  void emit(const std::string& name, const std::string& content) {
    write_once(run_dir / name, content);
    files.push_back((run_dir / name).string());
  }
};

/// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string make_run_id(const Context& ctx) {
  std::uint64_t h = fnv1a(tool_version);
  h = fnv1a(ctx.options.command, fnv1a("\x1f", h));
  h = fnv1a(ctx.config_bytes, fnv1a("\x1f", h));
  h = fnv1a(std::to_string(ctx.seed), fnv1a("\x1f", h));
  h = fnv1a(ctx.input_bytes, fnv1a("\x1f", h));
  h = fnv1a(ctx.options.format, fnv1a("\x1f", h));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline ojson provenance(const Context& ctx) {
  ojson p;
  p["tool"] = "levitas";
  p["version"] = std::string(tool_version);
  p["command"] = ctx.options.command;
  p["run_id"] = ctx.run_id;
  p["seed"] = ctx.seed;
  p["config_fnv1a"] = [&] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(ctx.config_bytes)));
    return std::string(buf);
  }();
  // Wall-clock time would break byte-identical reruns; a build system can pin one.
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) p["source_date_epoch"] = std::string(epoch);
  return p;
}

inline ojson error_json(const Error& e) {
  ojson j;
  j["kind"] = std::string(to_string(e.kind()));
  j["message"] = e.what();
  if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
    ojson issues = ojson::array();
    for (const auto& i : pe->issues()) issues.push_back({{"pointer", i.pointer}, {"message", i.message}});
    j["issues"] = issues;
  }
  if (const auto* ie = dynamic_cast<const IntegrationFailure*>(&e)) j["step"] = ie->step();
  return j;
}

// ---------------------------------------------------------------------------
// Shared pieces

inline Trajectory simulate_from(const Context& ctx) {
  auto plan = SimulationPlan::from_config(ctx.config);
  plan.seed = ctx.seed;
  return simulate(plan);
}

inline PsdEstimate psd_of(const Context& ctx, const Trajectory& t) {
  const auto& an = ctx.config.analysis;
  const std::size_t first = settle_index(t.size(), ctx.config.simulation.settle_fraction);
  const std::span<const double> data(t.positions.data() + first, t.size() - first);
  return welch_psd(data, t.dt, an.segment_length, an.overlap, an.window);
}

/// Without feedback the fitted linewidth is the gas damping and the radius
/// follows by Epstein inversion. With feedback the configured radius is taken
/// as known from such a reference run.
inline FitResult fit_with_derived(const Context& ctx, const PsdEstimate& psd) {
  FitOptions options;
  if (ctx.config.drive.mode == DriveMode::ac) options.exclude_omegas.push_back(*ctx.config.drive.omega_ac);
  auto fit = fit_lorentzian(psd, options);
  std::optional<double> radius;
  if (ctx.config.environment.feedback_damping > 0.0) radius = ctx.config.particle.radius;
  const auto cal = particle_params_from_fit(fit, ctx.config.environment, ctx.config.particle.density, radius);
  return with_derived(fit, cal);
}

inline DcSweepRecord dc_record_from(const Context& ctx) {
  DcSweepRecord record;
  if (!ctx.input_bytes.empty()) {
    record.points = read_dc_csv(ctx.input_bytes);
    record.needle = ctx.config.needle;
    record.trap = ctx.config.trap;
    record.mass = ctx.config.mass();
    record.mass_relative_error = pressure_exponent("mass") * ctx.config.analysis.pressure_rel_uncertainty;
    return record;
  }
  return run_dc_campaign(ctx.config, {ctx.seed, ctx.options.jobs, 32});
}

inline ojson dc_result_json(const Context& ctx, const DcSweepRecord& record) {
  ojson j;
  const auto slope = fit_dc_slope(record);
  j["slope_m_per_v"] = slope.slope;
  j["sigma_slope_m_per_v"] = slope.sigma;
  j["noise_floor_m"] = slope.noise_floor;
  j["mass_relative_error"] = record.mass_relative_error;
  j["charge"] = charge_json(dc_charge_estimate(record));
  j["true_charge_e"] = ctx.config.particle.charge_count;
  return j;
}

struct AcRun {
  AcSweepRecord record;
  std::vector<AcPointReading> readings;
};

inline AcRun ac_record_from(const Context& ctx) {
  const auto& cfg = ctx.config;
  require(cfg.drive.mode == DriveMode::ac, ErrorKind::configuration, "ac-sweep: config drive.mode must be ac");
  if (!ctx.input_bytes.empty()) {
    AcRun run;
    auto& r = run.record;
    r.points = read_ac_csv(ctx.input_bytes);
    r.voltage = cfg.drive.voltage;
    r.needle = cfg.needle;
    r.mass = cfg.mass();
    r.omega0 = cfg.trap.omega_z;
    r.gamma0 = cfg.gamma0();
    r.delta_gamma = cfg.environment.feedback_damping;
    r.gas_temperature = cfg.environment.gas_temperature;
    r.integration_time = cfg.sweep ? cfg.sweep->integration_time : 10.0;
    return run;
  }
  auto campaign = run_ac_campaign(cfg, {ctx.seed, ctx.options.jobs});
  return {std::move(campaign.record), std::move(campaign.readings)};
}

inline ojson ac_result_json(const Context& ctx, const AcRun& run, bool& analysis_failed,
                            std::optional<Error>& first_error) {
  const auto& cfg = ctx.config;
  const auto& rec = run.record;
  ojson j;
  j["voltage_v"] = rec.voltage;
  j["integration_time_s"] = rec.integration_time;
  j["thermal_force_sq_n2_s"] = rec.thermal_term();
  j["true_force_z_n"] = coulomb_force_z(cfg.particle.charge(), rec.voltage, cfg.needle);
  j["true_charge_e"] = cfg.particle.charge_count;
  try {
    const auto fit = fit_detuning_sweep(rec);
    j["force_n"] = fit.force;
    j["sigma_force_n"] = fit.sigma_force;
    j["drive_term_n2_s"] = fit.spectral_term;
    j["aic_gain"] = fit.aic_gain;
    j["points"] = fit.points;
    j["charge"] = charge_json(ac_charge_estimate(fit.force, rec.voltage, cfg.needle, cfg.analysis.project_cos_theta,
                                                 fit.sigma_force));
    j["charge_unprojected"] =
        charge_json(ac_charge_estimate(fit.force, rec.voltage, cfg.needle, false, fit.sigma_force));
  } catch (const Error& e) {
    if (!is_analysis_error(e.kind())) throw;
    analysis_failed = true;
    if (!first_error) first_error = e;
    j["fit_error"] = error_json(e);
  }
  try {
    j["enhancement_factor"] = enhancement_factor(rec);
  } catch (const Error& e) {
    if (!is_analysis_error(e.kind())) throw;
    j["enhancement_error"] = error_json(e);
  }
  j["min_detectable_force_n"] = min_detectable_force(rec.gas_temperature, rec.mass, rec.gamma0, rec.integration_time,
                                                     cfg.analysis.snr_threshold);
  if (!run.readings.empty()) {
    ojson readings = ojson::array();
    for (const auto& r : run.readings) {
      readings.push_back({{"detuning_rad_s", r.detuning},
                          {"omega_ac_rad_s", r.omega_ac},
                          {"amplitude_m", r.amplitude},
                          {"phase_rad", r.phase},
                          {"seed", r.seed}});
    }
    j["readings"] = readings;
  }
  return j;
}

struct SensitivityRow {
  std::string quantity;
  std::string configuration;
  double value;
  std::string unit;
  double rel_uncertainty;
};

/// Extrapolated operating point for the sensitivity table.
struct Extrapolation {
  double pressure = 1e-9 * constants::pascal_per_mbar;
  double radius = 10e-9;
  double omega0 = 2.0 * constants::pi * 100e3;
};

inline std::vector<SensitivityRow> sensitivity_rows(const ExperimentConfig& cfg, Extrapolation ex = {}) {
  std::vector<SensitivityRow> rows;
  const double t0 = cfg.environment.gas_temperature;
  const double m = cfg.mass();
  const double g0 = cfg.gamma0();
  const double w0 = cfg.trap.omega_z;
  const double rel_p = cfg.analysis.pressure_rel_uncertainty;
  const double t_int = cfg.sweep ? cfg.sweep->integration_time : 10.0;
  const double floor = thermal_force_sensitivity(t0, m, w0, g0);
  const double rel_floor = propagate_pressure_uncertainty("thermal_force_sensitivity", floor, rel_p).relative;
  rows.push_back({"gas_damping", "configured", g0, "rad/s", 0.0});
  rows.push_back({"quality_factor", "configured", g0 > 0.0 ? quality_factor(w0, g0) : HUGE_VAL, "1", 0.0});
  rows.push_back({"thermal_force_sensitivity", "configured", floor, "N/sqrt(Hz)", rel_floor});
  if (g0 > 0.0) {
    rows.push_back({"thermal_force_integrated", "configured", floor / std::sqrt(t_int), "N", rel_floor});
    rows.push_back({"min_detectable_force", "configured",
                    min_detectable_force(t0, m, g0, t_int, cfg.analysis.snr_threshold), "N", rel_floor});
  }
  rows.push_back({"sql_sensitivity", "configured", sql_sensitivity(w0, m, cfg.analysis.tau_f), "N/sqrt(Hz)",
                  propagate_pressure_uncertainty("mass", 1.0, rel_p).relative / 2.0});

  Environment env = cfg.environment;
  env.pressure = ex.pressure;
  env.feedback_damping = 0.0;
  ParticleSpec particle = cfg.particle;
  particle.radius = ex.radius;
  const double g0x = epstein_damping(env, particle);
  const double floor_x = thermal_force_sensitivity(t0, particle.mass(), ex.omega0, g0x);
  rows.push_back({"thermal_force_sensitivity", "extrapolated", floor_x, "N/sqrt(Hz)", rel_floor});
  rows.push_back({"sql_sensitivity", "extrapolated", sql_sensitivity(ex.omega0, particle.mass(), cfg.analysis.tau_f),
                  "N/sqrt(Hz)", 0.0});
  return rows;
}

inline ojson sensitivity_json(const std::vector<SensitivityRow>& rows) {
  ojson arr = ojson::array();
  for (const auto& r : rows) {
    arr.push_back({{"quantity", r.quantity},
                   {"configuration", r.configuration},
                   {"value", r.value},
                   {"unit", r.unit},
                   {"rel_uncertainty", r.rel_uncertainty}});
  }
  return arr;
}

inline std::string sensitivity_csv(const std::vector<SensitivityRow>& rows) {
  std::string out = "quantity,configuration,value,unit,rel_uncertainty\n";
  for (const auto& r : rows) {
    out += r.quantity + "," + r.configuration + "," + format17(r.value) + "," + r.unit + "," +
           format17(r.rel_uncertainty) + "\n";
  }
  return out;
}

inline ojson uncertainty_table(const ExperimentConfig& cfg) {
  const double rel_p = cfg.analysis.pressure_rel_uncertainty;
  const double floor = thermal_force_sensitivity(cfg.environment.gas_temperature, cfg.mass(), cfg.trap.omega_z,
                                                 cfg.gamma0());
  const std::pair<const char*, double> entries[] = {
      {"radius", cfg.particle.radius},
      {"mass", cfg.mass()},
      {"dc_charge", cfg.particle.charge()},
      {"thermal_force_sensitivity", floor},
  };
  ojson table = ojson::array();
  for (const auto& [tag, value] : entries) {
    const auto u = propagate_pressure_uncertainty(tag, value, rel_p);
    table.push_back({{"quantity", tag}, {"value", u.value}, {"sigma", u.sigma}, {"relative", u.relative}});
  }
  return table;
}

// ---------------------------------------------------------------------------
// Subcommands. Each returns its exit code and writes into ctx.run_dir.

inline int cmd_simulate(Context& ctx) {
  const auto t = simulate_from(ctx);
  if (ctx.options.format == "json") {
    ojson j = trajectory_sidecar(t);
    j["t_s"] = ojson::array();
    j["z_m"] = t.positions;
    for (std::size_t i = 0; i < t.size(); ++i) j["t_s"].push_back(t.time(i));
    if (t.velocities) j["v_ms"] = *t.velocities;
    ctx.emit("trajectory.json", json_text(j));
  } else {
    ctx.emit("trajectory.csv", trajectory_csv(t));
    ctx.emit("trajectory.meta.json", json_text(trajectory_sidecar(t)));
  }
  return 0;
}

inline Trajectory trajectory_input(const Context& ctx) {
  if (ctx.input_bytes.empty()) return simulate_from(ctx);
  auto t = read_trajectory_csv(ctx.input_bytes);
  t.experiment = ctx.config;
  return t;
}

inline int cmd_psd(Context& ctx) {
  const auto psd = psd_of(ctx, trajectory_input(ctx));
  if (ctx.options.format == "json") {
    ojson j = psd_sidecar(psd);
    j["omega_rad_s"] = psd.omega;
    j["S_m2_s"] = psd.density;
    ctx.emit("psd.json", json_text(j));
  } else {
    ctx.emit("psd.csv", psd_csv(psd));
    ctx.emit("psd.meta.json", json_text(psd_sidecar(psd)));
  }
  return 0;
}

inline int cmd_fit(Context& ctx) {
  PsdEstimate psd;
  if (!ctx.input_bytes.empty() && csv_header(ctx.input_bytes) == psd_header) {
    psd = read_psd_csv(ctx.input_bytes);
  } else {
    psd = psd_of(ctx, trajectory_input(ctx));
  }
  ojson j;
  j["provenance"] = provenance(ctx);
  j["fit"] = fit_json(fit_with_derived(ctx, psd));
  ctx.emit("fit.json", json_text(j));
  return 0;
}

inline int cmd_dc_sweep(Context& ctx) {
  const auto record = dc_record_from(ctx);
  if (ctx.input_bytes.empty()) {
    if (ctx.options.format == "json") {
      ojson pts = ojson::array();
      for (const auto& p : record.points) pts.push_back({{"voltage_V", p.voltage}, {"mean_z_m", p.mean_z}, {"stderr_m", p.stderr_z}});
      ctx.emit("dc_sweep.json", json_text(pts));
    } else {
      ctx.emit("dc_sweep.csv", dc_csv(record));
    }
  }
  ojson j;
  j["provenance"] = provenance(ctx);
  j["dc"] = dc_result_json(ctx, record);
  ctx.emit("dc_charge.json", json_text(j));
  return 0;
}

inline int cmd_ac_sweep(Context& ctx) {
  const auto run = ac_record_from(ctx);
  if (ctx.input_bytes.empty()) {
    if (ctx.options.format == "json") {
      ojson pts = ojson::array();
      for (const auto& p : run.record.points) {
        pts.push_back({{"detuning_rad_s", p.detuning}, {"peak_height", p.peak_height}, {"stderr", p.stderr_peak}});
      }
      ctx.emit("ac_sweep.json", json_text(pts));
    } else {
      ctx.emit("ac_sweep.csv", ac_csv(run.record));
    }
  }
  bool failed = false;
  std::optional<Error> first;
  ojson j;
  j["provenance"] = provenance(ctx);
  j["ac"] = ac_result_json(ctx, run, failed, first);
  ctx.emit("ac_force.json", json_text(j));
  if (first) throw *first;
  return 0;
}

inline int cmd_sensitivity(Context& ctx, std::ostream& out) {
  const auto rows = sensitivity_rows(ctx.config);
  if (ctx.options.format == "json") {
    const auto text = json_text(sensitivity_json(rows));
    ctx.emit("sensitivity.json", text);
  } else {
    const auto text = sensitivity_csv(rows);
    ctx.emit("sensitivity.csv", text);
    out << text;
  }
  return 0;
}

inline int cmd_report(Context& ctx) {
  const auto& cfg = ctx.config;
  ojson j;
  j["run_id"] = ctx.run_id;
  j["provenance"] = provenance(ctx);
  j["config"] = config_to_json(cfg);
  j["sensitivity"] = sensitivity_json(sensitivity_rows(cfg));
  j["uncertainty"] = uncertainty_table(cfg);
  bool failed = false;
  std::optional<Error> first;
  auto guarded = [&](const char* key, auto&& body) {
    try {
      j[key] = body();
    } catch (const Error& e) {
      if (!is_analysis_error(e.kind())) throw;
      failed = true;
      if (!first) first = e;
      j[key] = {{"error", error_json(e)}};
    }
  };
  if (cfg.drive.mode == DriveMode::none) {
    guarded("calibration", [&] { return fit_json(fit_with_derived(ctx, psd_of(ctx, simulate_from(ctx)))); });
  }
  if (cfg.sweep && !cfg.sweep->dc_voltages.empty()) {
    guarded("dc", [&] { return dc_result_json(ctx, run_dc_campaign(cfg, {derive_seed(ctx.seed, 1), ctx.options.jobs, 32})); });
  }
  if (cfg.drive.mode == DriveMode::ac && cfg.sweep && cfg.sweep->ac_detuning_step > 0.0) {
    guarded("ac", [&] {
      auto campaign = run_ac_campaign(cfg, {derive_seed(ctx.seed, 2), ctx.options.jobs});
      AcRun run{std::move(campaign.record), std::move(campaign.readings)};
      return ac_result_json(ctx, run, failed, first);
    });
  }
  ctx.emit("report.json", json_text(j));
  if (first) throw *first;
  return 0;
}

}  // namespace cli

/// Runs one CLI invocation. Exit 0 on success, 1 when the analysis finds no
/// usable signal, 2 on usage, configuration or I/O errors. Errors are also
/// written to `err` as a JSON object.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  using cli::Context;
  Context ctx;
  auto& o = ctx.options;
  CLI::App app{"Levitated nanoparticle force-sensing simulator", "levitas"};
  app.set_version_flag("--version", std::string(tool_version));
  app.require_subcommand(1);

  struct Spec {
    const char* name;
    const char* help;
    bool input;
    bool jobs;
  };
  const Spec specs[] = {
      {"simulate", "Simulate a trajectory (trajectory CSV)", false, false},
      {"psd", "Welch power spectral density (PSD CSV)", true, false},
      {"fit", "Lorentzian fit with derived particle parameters (FitResult JSON)", true, false},
      {"dc-sweep", "DC voltage sweep and charge estimate", true, true},
      {"ac-sweep", "AC detuning sweep, force and charge estimate", true, true},
      {"sensitivity", "Thermal and quantum force sensitivity table", false, false},
      {"report", "Aggregate JSON report", false, true},
  };
  for (const auto& s : specs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", o.config_path, "Experiment configuration JSON")->required();
    sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
    sub->add_option("--out", o.out, "Output root (default $LEVITAS_OUT or ./levitas-out)");
    sub->add_option("--format", o.format, "Tabular output format")->check(CLI::IsMember({"csv", "json"}));
    if (s.jobs) sub->add_option("--jobs", o.jobs, "Concurrent sweep points")->check(CLI::Range(1u, 1024u));
    if (s.input) sub->add_option("--input", o.input, "Analyse this file instead of simulating");
    sub->callback([&o, name = s.name] { o.command = name; });
  }

  auto fail = [&](ErrorKind kind, const std::string& message, const ojson* extra = nullptr) {
    ojson j;
    j["error"] = extra ? *extra : ojson{{"kind", std::string(to_string(kind))}, {"message", message}};
    err << j.dump() << "\n";
    return is_analysis_error(kind) ? 1 : 2;
  };

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForVersion&) {
    out << tool_version << "\n";
    return 0;
  } catch (const CLI::Success&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(ErrorKind::configuration, std::string("usage: ") + e.what());
  }

  try {
    ctx.config_bytes = read_text_file(o.config_path);
    ctx.config = parse_config_text(ctx.config_bytes);
    if (!o.input.empty()) ctx.input_bytes = read_text_file(o.input);
    ctx.seed = o.seed.value_or(ctx.config.simulation.seed);
    ctx.config.simulation.seed = ctx.seed;
    if (o.out.empty()) {
      const char* env = std::getenv("LEVITAS_OUT");
      o.out = env && *env ? env : "levitas-out";
    }
    ctx.run_id = cli::make_run_id(ctx);
    ctx.run_dir = std::filesystem::path(o.out) / (o.command + "-" + ctx.run_id);

    int code = 0;
    std::optional<Error> deferred;
    try {
      if (o.command == "simulate") code = cli::cmd_simulate(ctx);
      else if (o.command == "psd") code = cli::cmd_psd(ctx);
      else if (o.command == "fit") code = cli::cmd_fit(ctx);
      else if (o.command == "dc-sweep") code = cli::cmd_dc_sweep(ctx);
      else if (o.command == "ac-sweep") code = cli::cmd_ac_sweep(ctx);
      else if (o.command == "sensitivity") code = cli::cmd_sensitivity(ctx, out);
      else if (o.command == "report") code = cli::cmd_report(ctx);
    } catch (const Error& e) {
      if (!is_analysis_error(e.kind()) || ctx.files.empty()) throw;
      deferred = e;  // partial artifacts were written; still report the failure
    }
    ojson summary{{"run_id", ctx.run_id}, {"run_dir", ctx.run_dir.string()}, {"files", ctx.files}};
    out << summary.dump() << "\n";
    if (deferred) {
      const auto j = cli::error_json(*deferred);
      return fail(deferred->kind(), deferred->what(), &j);
    }
    return code;
  } catch (const Error& e) {
    const auto j = cli::error_json(e);
    return fail(e.kind(), e.what(), &j);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ErrorKind::io, e.what());
  } catch (const std::exception& e) {
    return fail(ErrorKind::io, e.what());
  }
}

inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_command(args, out, err);
}

}  // namespace levitas
