#pragma once

// Simulated measurement campaigns: a DC voltage sweep read out as mean
// displacements, an AC detuning sweep read out by lock-in demodulation, and
// a thermal-line calibration run. Sweep points run concurrently, each with a
// seed derived from the master seed and its index, so results do not depend
// on the number of worker threads.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

#include "levitas/core_model.hpp"
#include "levitas/error.hpp"
#include "levitas/experiment.hpp"
#include "levitas/force_pipeline.hpp"
#include "levitas/langevin.hpp"
#include "levitas/lorentz_fit.hpp"
#include "levitas/rng.hpp"
#include "levitas/spectral.hpp"

namespace levitas {

/// Calls task(i) for i in [0, count) on up to `jobs` threads. The first
/// failure by index is rethrown after all workers finish.
template <class Task>
void parallel_for(std::size_t count, unsigned jobs, Task&& task) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// DC

struct DcCampaignOptions {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::size_t batches = 32;  // batch means for the standard error
};

/// Post-settle mean and batch-means standard error of a DC-driven run.
inline DcSweepPoint measure_dc_point(const SimulationPlan& plan, double settle_fraction, std::size_t batches) {
  const std::size_t n = plan.sample_count();
  const std::size_t first = settle_index(n, settle_fraction);
  const std::size_t used = n - first;
  require(used >= batches * 2, ErrorKind::insufficient_data, "dc point: post-settle window too short");
  const std::size_t per_batch = used / batches;
  std::vector<double> sums(batches, 0.0);
  integrate(plan, [&](std::size_t i, double z, double) {
    if (i < first) return;
    const std::size_t b = (i - first) / per_batch;
    if (b < batches) sums[b] += z;
  });
  double mean = 0.0;
  for (auto& s : sums) {
    s /= static_cast<double>(per_batch);
    mean += s;
  }
  mean /= static_cast<double>(batches);
  double ss = 0.0;
  for (double s : sums) ss += (s - mean) * (s - mean);
  const double stderr_z = std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches));
  return {plan.experiment.drive.voltage, mean, stderr_z};
}

inline DcSweepRecord run_dc_campaign(const ExperimentConfig& config, const DcCampaignOptions& options) {
  require(config.sweep && !config.sweep->dc_voltages.empty(), ErrorKind::configuration,
          "dc campaign: config has no sweep.dc_voltages_v");
  const auto& voltages = config.sweep->dc_voltages;
  DcSweepRecord record;
  record.points.resize(voltages.size());
  record.needle = config.needle;
  record.trap = config.trap;
  record.mass = config.mass();
  record.mass_relative_error = pressure_exponent("mass") * config.analysis.pressure_rel_uncertainty;
  parallel_for(voltages.size(), options.jobs, [&](std::size_t i) {
    ExperimentConfig point = config;
    point.drive = DriveProgram{DriveMode::dc, voltages[i], std::nullopt};
    auto plan = SimulationPlan::from_config(point);
    plan.seed = derive_seed(options.seed, i);
    record.points[i] = measure_dc_point(plan, config.simulation.settle_fraction, options.batches);
  });
  return record;
}

// ---------------------------------------------------------------------------
// AC

/// Lock-in readout at omega_ac: least-squares sine amplitude over the window
/// plus the spectral floor estimated from sideband bins at omega_ac +-
/// j 2 pi / T_w. Sidebands are computed from the demodulated signal averaged
/// in short blocks, which leaves bins a few times 2 pi / T_w away untouched.
class LockIn {
 public:
  static constexpr int sidebands = 8;  // per side
  static constexpr std::size_t blocks = 4096;

  LockIn(double omega, double dt, std::size_t first_index, std::size_t samples)
      : fit_(omega, dt, first_index),
        rotator_(omega, dt),
        dt_(dt),
        samples_(samples),
        block_length_(std::max<std::size_t>(1, samples / blocks)) {
    rotator_.reset(first_index);
    baseband_.reserve(samples / block_length_ + 1);
  }

  void add(double z) {
    fit_.add(z);
    block_ += z * std::conj(rotator_.value());
    rotator_.advance();
    if (++in_block_ == block_length_) flush();
  }

  struct Reading {
    double amplitude = 0.0;
    double phase = 0.0;
    double window = 0.0;          // s
    double sideband_power = 0.0;  // mean |X_j|^2 with X = (1/N) sum z e^{-i w t}
  };

  Reading read() {
    if (in_block_ > 0) flush();
    const auto [a, b, c] = fit_.solve();
    Reading r;
    r.amplitude = std::hypot(a, b);
    r.phase = std::atan2(-b, a);
    r.window = static_cast<double>(fit_.count()) * dt_;
    double power = 0.0;
    for (int j = -sidebands; j <= sidebands; ++j) {
      if (j == 0) continue;
      const double delta = 2.0 * constants::pi * j / r.window;
      std::complex<double> x = 0.0;
      for (std::size_t k = 0; k < baseband_.size(); ++k) {
        const auto& [t, value] = baseband_[k];
        x += value * std::polar(1.0, -delta * t);
      }
      x /= static_cast<double>(fit_.count());
      power += std::norm(x);
    }
    r.sideband_power = power / (2.0 * sidebands);
    return r;
  }

 private:
  void flush() {
    // Block centre relative to the window start.
    const double t = (static_cast<double>(consumed_) + 0.5 * static_cast<double>(in_block_ - 1)) * dt_;
    baseband_.emplace_back(t, block_);
    consumed_ += in_block_;
    in_block_ = 0;
    block_ = 0.0;
  }

  SineFitAccumulator fit_;
  PhaseRotator rotator_;
  double dt_;
  std::size_t samples_;
  std::size_t block_length_;
  std::size_t in_block_ = 0;
  std::size_t consumed_ = 0;
  std::complex<double> block_ = 0.0;
  std::vector<std::pair<double, std::complex<double>>> baseband_;
};

struct AcPointReading {
  double detuning = 0.0;
  double omega_ac = 0.0;
  double amplitude = 0.0;  // m
  double phase = 0.0;
  std::uint64_t seed = 0;
};

struct AcCampaign {
  AcSweepRecord record;
  std::vector<AcPointReading> readings;
};

struct AcCampaignOptions {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

/// Runs one drive frequency and converts the lock-in amplitude into a
/// one-sided angular peak height A^2 T_w / (4 pi). Its error bar is the
/// local spectral floor from the sidebands. A strong coherent part adds a
/// cross term to the true scatter; it is left out because it would tie each
/// weight to its own reading, and the sweep fit rescales by its Birge factor.
inline std::pair<AcSweepPoint, AcPointReading> measure_ac_point(const SimulationPlan& plan, double settle_fraction) {
  const double omega = *plan.experiment.drive.omega_ac;
  const std::size_t n = plan.sample_count();
  const std::size_t first = settle_index(n, settle_fraction);
  check_demodulation_window(n - first, plan.dt, omega);
  LockIn lockin(omega, plan.dt, first, n - first);
  integrate(plan, [&](std::size_t i, double z, double) {
    if (i >= first) lockin.add(z);
  });
  const auto r = lockin.read();
  const double to_peak = r.window / (4.0 * constants::pi);
  AcSweepPoint point;
  point.detuning = plan.experiment.trap.omega_z - omega;
  point.peak_height = r.amplitude * r.amplitude * to_peak;
  point.stderr_peak = 4.0 * r.sideband_power * to_peak;  // |A_j|^2 = 4 |X_j|^2
  return {point, AcPointReading{point.detuning, omega, r.amplitude, r.phase, plan.seed}};
}

inline AcCampaign run_ac_campaign(const ExperimentConfig& config, const AcCampaignOptions& options) {
  require(config.sweep.has_value(), ErrorKind::configuration, "ac campaign: config has no sweep section");
  const auto& sweep = *config.sweep;
  require(sweep.ac_detuning_step > 0.0 && sweep.ac_points >= 5, ErrorKind::configuration,
          "ac campaign: need sweep.ac_detuning_step_hz > 0 and sweep.ac_points >= 5");
  require(sweep.integration_time > 0.0, ErrorKind::configuration, "ac campaign: integration time must be > 0");
  const auto detunings = detuning_grid(sweep.ac_detuning_step, sweep.ac_points);
  const double settle = config.simulation.settle_fraction;
  const double duration = sweep.integration_time / (1.0 - settle);

  AcCampaign out;
  out.record.points.resize(detunings.size());
  out.readings.resize(detunings.size());
  parallel_for(detunings.size(), options.jobs, [&](std::size_t i) {
    ExperimentConfig point = config;
    point.drive = DriveProgram{DriveMode::ac, config.drive.voltage, config.trap.omega_z - detunings[i]};
    auto plan = SimulationPlan::from_config(point);
    plan.duration = duration;
    plan.seed = derive_seed(options.seed, i);
    auto [p, r] = measure_ac_point(plan, settle);
    out.record.points[i] = p;
    out.readings[i] = r;
  });

  auto& rec = out.record;
  rec.voltage = config.drive.voltage;
  rec.needle = config.needle;
  rec.mass = config.mass();
  rec.omega0 = config.trap.omega_z;
  rec.gamma0 = config.gamma0();
  rec.delta_gamma = config.environment.feedback_damping;
  rec.gas_temperature = config.environment.gas_temperature;
  // Effective window of the first point; all points share n and settle.
  auto plan = SimulationPlan::from_config(config);
  plan.duration = duration;
  const std::size_t n = plan.sample_count();
  rec.integration_time = static_cast<double>(n - settle_index(n, settle)) * config.simulation.dt;
  return out;
}

// ---------------------------------------------------------------------------
// Thermal-line calibration

struct CalibrationRun {
  PsdEstimate psd;
  FitResult fit;
  ParticleCalibration calibration;
};

/// Simulates the configured (undriven) run, fits its spectrum and derives
/// particle parameters. With `known_radius` the gas damping comes from the
/// Epstein law and the remaining linewidth is feedback.
inline CalibrationRun run_calibration(const ExperimentConfig& config, std::uint64_t seed,
                                      std::optional<double> known_radius) {
  auto plan = SimulationPlan::from_config(config);
  plan.seed = seed;
  const auto trajectory = simulate(plan);
  const std::size_t first = settle_index(trajectory.size(), config.simulation.settle_fraction);
  const std::span<const double> data(trajectory.positions.data() + first, trajectory.size() - first);
  CalibrationRun out;
  out.psd = welch_psd(data, trajectory.dt, config.analysis.segment_length, config.analysis.overlap,
                      config.analysis.window);
  FitOptions fit_options;
  if (config.drive.mode == DriveMode::ac) fit_options.exclude_omegas.push_back(*config.drive.omega_ac);
  out.fit = fit_lorentzian(out.psd, fit_options);
  out.calibration = particle_params_from_fit(out.fit, config.environment, config.particle.density, known_radius);
  out.fit = with_derived(out.fit, out.calibration);
  return out;
}

}  // namespace levitas
