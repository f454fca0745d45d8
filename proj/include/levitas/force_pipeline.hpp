#pragma once

// Charge and force extraction from DC displacement sweeps and AC detuning
// sweeps, plus sensitivity and uncertainty bookkeeping.
//
// AC peak heights are one-sided angular PSD values at the drive frequency
// [m^2 s]. In those units the thermal term of the driven response is
// |F_th|^2 = 2 m k T0 Gamma0 / pi, while a coherent drive of amplitude F,
// observed for an integration time T, concentrates F^2 / 2 of force power in
// one resolution bin of width 2 pi / T, i.e. |F_C|^2 = F^2 T / (4 pi).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "levitas/constants.hpp"
#include "levitas/core_model.hpp"
#include "levitas/error.hpp"

namespace levitas {

struct ChargeEstimate {
  double charge = 0.0;        // C
  long nearest = 0;           // multiples of e
  double residual = 0.0;      // charge / e - nearest, in [-0.5, 0.5]
  double sigma_e = 0.0;       // 1 sigma, units of e
  bool quality_warning = false;

  double count() const { return charge / constants::elementary_charge; }
};

/// Residuals above this fraction of e flag the estimate as doubtful.
inline constexpr double charge_residual_warning = 0.35;

inline ChargeEstimate make_charge_estimate(double charge, double sigma_charge) {
  ChargeEstimate out;
  out.charge = charge;
  const double count = charge / constants::elementary_charge;
  out.nearest = std::lround(count);
  out.residual = count - static_cast<double>(out.nearest);
  out.sigma_e = std::abs(sigma_charge) / constants::elementary_charge;
  out.quality_warning = std::abs(out.residual) > charge_residual_warning;
  return out;
}

// ---------------------------------------------------------------------------
// DC campaign

struct DcSweepPoint {
  double voltage = 0.0;  // V
  double mean_z = 0.0;   // m
  double stderr_z = 0.0; // m
};

struct DcSweepRecord {
  std::vector<DcSweepPoint> points;
  NeedleSpec needle;
  TrapSpec trap;
  double mass = 0.0;
  double mass_relative_error = 0.0;

  void validate() const {
    std::set<double> voltages;
    for (const auto& p : points) voltages.insert(p.voltage);
    require(voltages.size() >= 3 && voltages.count(0.0) == 1, ErrorKind::insufficient_data,
            "DcSweepRecord: need >= 3 distinct voltages including 0");
    needle.validate();
    trap.validate();
    require_domain(mass > 0.0, "DcSweepRecord.mass must be > 0");
    require_domain(mass_relative_error >= 0.0, "DcSweepRecord.mass_relative_error must be >= 0");
  }
};

/// Converts displacements recorded in detector units into metres.
inline DcSweepRecord calibrate_displacements(DcSweepRecord record, double calibration_gamma) {
  require_domain(calibration_gamma > 0.0, "calibrate_displacements: calibration must be > 0");
  for (auto& p : record.points) {
    p.mean_z /= calibration_gamma;
    p.stderr_z /= calibration_gamma;
  }
  return record;
}

struct DcSlopeFit {
  double slope = 0.0;        // m/V
  double sigma = 0.0;        // m/V
  double noise_floor = 0.0;  // |<z>| at 0 V
  double chi2 = 0.0;
  std::size_t points = 0;
};

/// Weighted least squares of <z> = slope * V through the origin. The 0 V
/// points only set the noise floor. Error bars are Birge-scaled when the
/// scatter exceeds them.
inline DcSlopeFit fit_dc_slope(const DcSweepRecord& record) {
  record.validate();
  DcSlopeFit out;
  std::vector<const DcSweepPoint*> used;
  double floor_sum = 0.0;
  std::size_t floor_n = 0;
  for (const auto& p : record.points) {
    if (p.voltage == 0.0) {
      floor_sum += std::abs(p.mean_z);
      ++floor_n;
    } else {
      used.push_back(&p);
    }
  }
  out.noise_floor = floor_n ? floor_sum / static_cast<double>(floor_n) : 0.0;
  const bool weighted = std::all_of(used.begin(), used.end(), [](auto* p) { return p->stderr_z > 0.0; });
  double swvv = 0.0, swvz = 0.0;
  for (auto* p : used) {
    const double w = weighted ? 1.0 / (p->stderr_z * p->stderr_z) : 1.0;
    swvv += w * p->voltage * p->voltage;
    swvz += w * p->voltage * p->mean_z;
  }
  out.slope = swvz / swvv;
  out.points = used.size();
  double chi2 = 0.0;
  for (auto* p : used) {
    const double w = weighted ? 1.0 / (p->stderr_z * p->stderr_z) : 1.0;
    const double r = p->mean_z - out.slope * p->voltage;
    chi2 += w * r * r;
  }
  out.chi2 = chi2;
  const double dof = static_cast<double>(used.size()) - 1.0;
  const double birge = dof > 0.0 ? chi2 / dof : 0.0;
  const double scale = weighted ? std::max(1.0, birge) : birge;
  out.sigma = std::sqrt(scale / swvv);
  return out;
}

/// Charge from the displacement slope, q = slope omega_z^2 m d'^2 / (cos theta r_t).
inline ChargeEstimate dc_charge_estimate(const DcSweepRecord& record) {
  const auto fit = fit_dc_slope(record);
  require(fit.slope != 0.0 && std::abs(fit.slope) >= 2.0 * fit.sigma, ErrorKind::indeterminate_charge,
          "dc_charge_estimate: displacement slope is not significant (|slope| < 2 sigma)");
  const auto& n = record.needle;
  const double per_slope = record.trap.omega_z * record.trap.omega_z * record.mass * n.distance * n.distance /
                           (std::cos(n.theta) * n.tip_radius);
  const double charge = fit.slope * per_slope;
  const double rel = std::hypot(fit.sigma / fit.slope, record.mass_relative_error);
  return make_charge_estimate(charge, charge * rel);
}

// ---------------------------------------------------------------------------
// AC campaign

struct AcSweepPoint {
  double detuning = 0.0;     // rad/s, omega0 - omega_ac
  double peak_height = 0.0;  // m^2 s, one-sided angular PSD at omega_ac
  double stderr_peak = 0.0;  // m^2 s
};

struct AcSweepRecord {
  std::vector<AcSweepPoint> points;
  double voltage = 0.0;          // V
  NeedleSpec needle;
  double mass = 0.0;             // kg
  double omega0 = 0.0;           // rad/s
  double gamma0 = 0.0;           // rad/s
  double delta_gamma = 0.0;      // rad/s
  double gas_temperature = 0.0;  // K
  double integration_time = 0.0; // s

  double gamma_total() const { return gamma0 + delta_gamma; }
  double omega_ac(const AcSweepPoint& p) const { return omega0 - p.detuning; }
  double thermal_term() const { return thermal_force_psd(gas_temperature, mass, gamma0); }

  void validate() const {
    require(!points.empty(), ErrorKind::insufficient_data, "AcSweepRecord: no points");
    const auto [lo, hi] = std::minmax_element(points.begin(), points.end(),
                                              [](auto& a, auto& b) { return a.detuning < b.detuning; });
    require(lo->detuning <= 0.0 && hi->detuning >= 0.0, ErrorKind::insufficient_data,
            "AcSweepRecord: detunings must bracket zero");
    require_domain(integration_time > 0.0, "AcSweepRecord.integration_time must be > 0");
    require_domain(mass > 0.0 && omega0 > 0.0 && gas_temperature > 0.0, "AcSweepRecord: oscillator parameters must be > 0");
    require_domain(gamma0 >= 0.0 && delta_gamma >= 0.0, "AcSweepRecord: damping must be >= 0");
    needle.validate();
    for (const auto& p : points) require_domain(omega0 - p.detuning > 0.0, "AcSweepRecord: drive frequency must be > 0");
  }
};

/// |F_C|^2 term of the driven response for a force amplitude seen over `integration_time`.
inline double drive_spectral_term(double force, double integration_time) {
  require_domain(integration_time > 0.0, "drive_spectral_term: integration time must be > 0");
  return force * force * integration_time / (4.0 * constants::pi);
}

inline double force_from_spectral_term(double term, double integration_time) {
  require_domain(integration_time > 0.0, "force_from_spectral_term: integration time must be > 0");
  return std::sqrt(std::max(term, 0.0) * 4.0 * constants::pi / integration_time);
}

/// Expected peak height at one sweep point for a z-force amplitude `force`.
inline double ac_model_peak(const AcSweepRecord& record, double detuning, double force) {
  return ac_response_psd(record.omega0 - detuning, std::sqrt(drive_spectral_term(force, record.integration_time)),
                         record.thermal_term(), record.mass, record.omega0, record.gamma0, record.delta_gamma);
}

/// Noiseless sweep generated from the response model.
inline AcSweepRecord synthesize_ac_sweep(AcSweepRecord base, double force, const std::vector<double>& detunings,
                                         double relative_stderr = 0.1) {
  base.points.clear();
  for (double d : detunings) {
    const double peak = ac_model_peak(base, d, force);
    base.points.push_back({d, peak, relative_stderr * peak});
  }
  return base;
}

inline std::vector<double> detuning_grid(double step, int points) {
  require_domain(step > 0.0 && points >= 1, "detuning_grid: step and count must be > 0");
  std::vector<double> out;
  const int half = points / 2;
  for (int i = 0; i < points; ++i) out.push_back(static_cast<double>(i - half) * step);
  return out;
}

struct AcForceFit {
  double force = 0.0;           // N, z-component amplitude
  double sigma_force = 0.0;     // N
  double spectral_term = 0.0;   // fitted |F_C|^2 [N^2 s]
  double sigma_spectral = 0.0;
  double chi2_free = 0.0;
  double chi2_thermal = 0.0;
  double aic_gain = 0.0;        // AIC(thermal only) - AIC(with drive)
  std::size_t points = 0;
};

/// Fits |F_C|^2 >= 0 with |F_th|^2 held at its thermal value. The model is
/// linear in |F_C|^2, so the weighted least-squares solution is closed form.
/// Error bars enter only as relative weights: the noise scale is taken from
/// the residuals of the free fit, which makes the estimate, its uncertainty
/// and the detection decision invariant under a common rescaling of them.
inline AcForceFit fit_detuning_sweep(const AcSweepRecord& record) {
  record.validate();
  require(record.points.size() >= 5, ErrorKind::insufficient_data, "fit_detuning_sweep: need >= 5 detuning points");
  const double th = record.thermal_term();
  const bool weighted = std::all_of(record.points.begin(), record.points.end(),
                                    [](auto& p) { return p.stderr_peak > 0.0; });
  double swuu = 0.0, swuy = 0.0;
  std::vector<double> u(record.points.size()), w(record.points.size());
  for (std::size_t i = 0; i < record.points.size(); ++i) {
    const auto& p = record.points[i];
    const double denom = response_denominator(record.omega_ac(p), record.omega0, record.gamma_total());
    require(denom > 0.0, ErrorKind::singularity, "fit_detuning_sweep: undamped response on resonance");
    u[i] = 1.0 / (record.mass * record.mass * denom);
    w[i] = weighted ? 1.0 / (p.stderr_peak * p.stderr_peak) : 1.0;
    swuu += w[i] * u[i] * u[i];
    swuy += w[i] * u[i] * (p.peak_height - th * u[i]);
  }
  AcForceFit out;
  out.points = record.points.size();
  out.spectral_term = std::max(swuy / swuu, 0.0);
  for (std::size_t i = 0; i < record.points.size(); ++i) {
    const double y = record.points[i].peak_height;
    const double r1 = y - (th + out.spectral_term) * u[i];
    const double r0 = y - th * u[i];
    out.chi2_free += w[i] * r1 * r1;
    out.chi2_thermal += w[i] * r0 * r0;
  }
  const double dof = static_cast<double>(out.points) - 1.0;
  const double noise_scale = out.chi2_free / dof;  // Birge factor of the free fit
  out.sigma_spectral = std::sqrt(noise_scale / swuu);
  // AIC with the noise scale from the free fit; one extra parameter costs 2.
  const double delta = out.chi2_thermal - out.chi2_free;
  out.aic_gain = noise_scale > 0.0 ? delta / noise_scale - 2.0 : (delta > 0.0 ? HUGE_VAL : -2.0);
  require(out.spectral_term > 0.0 && out.aic_gain > 0.0, ErrorKind::no_detectable_force,
          "fit_detuning_sweep: a drive term does not improve on the thermal-only model");
  out.force = force_from_spectral_term(out.spectral_term, record.integration_time);
  // d F / d term = F / (2 term)
  out.sigma_force = out.force * out.sigma_spectral / (2.0 * out.spectral_term);
  return out;
}

/// q = F d'^2 / (V r_t), with F first divided by cos(theta) when `project`
/// is set (the measured force is the z component of the needle force).
inline ChargeEstimate ac_charge_estimate(double force, double voltage, const NeedleSpec& needle, bool project,
                                         double sigma_force = 0.0) {
  require_domain(voltage != 0.0, "ac_charge_estimate: voltage must be non-zero");
  needle.validate();
  const double projection = project ? std::cos(needle.theta) : 1.0;
  const double per_force = needle.distance * needle.distance / (voltage * needle.tip_radius * projection);
  return make_charge_estimate(force * per_force, sigma_force * per_force);
}

/// On-resonance peak over the thermal-only response at the same frequency.
/// The driven peak is read from the sweep fit rather than the single nearest
/// point, which keeps the ratio >= 1 under measurement noise; a sweep without
/// a detectable drive gives 1.
inline double enhancement_factor(const AcSweepRecord& record) {
  record.validate();
  const AcSweepPoint* best = nullptr;
  for (const auto& p : record.points) {
    if (!best || std::abs(p.detuning) < std::abs(best->detuning)) best = &p;
  }
  require(best != nullptr && std::abs(best->detuning) <= 0.5 * record.gamma_total(), ErrorKind::insufficient_data,
          "enhancement_factor: no sweep point within half a linewidth of resonance");
  try {
    const auto fit = fit_detuning_sweep(record);
    return 1.0 + fit.spectral_term / record.thermal_term();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::no_detectable_force) return 1.0;
    throw;
  }
}

// ---------------------------------------------------------------------------
// Sensitivity and uncertainty

/// Force resolvable at `snr_threshold` after averaging for `integration_time`.
inline double min_detectable_force(double t0, double mass, double gamma0, double integration_time,
                                   double snr_threshold) {
  require_domain(t0 > 0.0 && mass > 0.0 && gamma0 > 0.0 && integration_time > 0.0 && snr_threshold > 0.0,
                 "min_detectable_force: inputs must be > 0");
  return std::sqrt(4.0 * constants::boltzmann * t0 * mass * gamma0) / std::sqrt(integration_time) * snr_threshold;
}

struct UncertainValue {
  double value = 0.0;
  double sigma = 0.0;
  double relative = 0.0;
};

/// Power of pressure each derived quantity scales with: the Epstein
/// inversion gives radius ~ P at fixed measured damping, so mass ~ P^3, the
/// DC charge ~ m ~ P^3 and the thermal force floor ~ sqrt(m Gamma0) ~ P^1.5.
inline double pressure_exponent(std::string_view tag) {
  if (tag == "radius") return 1.0;
  if (tag == "mass") return 3.0;
  if (tag == "dc_charge") return 3.0;
  if (tag == "thermal_force_sensitivity") return 1.5;
  throw Error(ErrorKind::domain, "propagate_pressure_uncertainty: unknown quantity tag '" + std::string(tag) + "'");
}

inline UncertainValue propagate_pressure_uncertainty(std::string_view tag, double value,
                                                     double relative_pressure_error) {
  require_domain(relative_pressure_error >= 0.0, "propagate_pressure_uncertainty: error must be >= 0");
  const double rel = pressure_exponent(tag) * relative_pressure_error;
  return {value, std::abs(value) * rel, rel};
}

}  // namespace levitas
