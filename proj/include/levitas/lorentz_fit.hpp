#pragma once

// Fit of the thermal oscillator line shape
//
//   S(w) = a * Gamma / ((w0^2 - w^2)^2 + Gamma^2 w^2),   a = gamma^2 k T / (pi m)
//
// to the positive-frequency half of a PsdEstimate. Parameters are fitted in
// log space (keeps w0, Gamma, a positive) by iteratively reweighted
// Levenberg-Marquardt with weights 1 / S_model^2: periodogram ordinates have
// a standard deviation proportional to their mean, so relative residuals are
// homoscedastic.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "levitas/constants.hpp"
#include "levitas/core_model.hpp"
#include "levitas/error.hpp"
#include "levitas/spectral.hpp"

namespace levitas {

struct LorentzParams {
  double omega0 = 0.0;       // rad/s
  double gamma_total = 0.0;  // rad/s
  double amplitude = 0.0;    // a, signal units^2 / s^3
};

inline double lorentz_model(double omega, const LorentzParams& p) {
  return p.amplitude * p.gamma_total / response_denominator(omega, p.omega0, p.gamma_total);
}

struct DerivedQuantities {
  double t_cm = 0.0;               // K
  double gamma0 = 0.0;             // rad/s
  double radius = 0.0;             // m
  double mass = 0.0;               // kg
  double calibration_gamma = 0.0;  // detector units per metre
};

struct FitResult {
  double omega0_hat = 0.0;
  double gamma_total_hat = 0.0;
  double amplitude_hat = 0.0;
  std::array<double, 9> covariance{};  // row-major over (omega0, gamma_total, amplitude)
  double residual_norm = 0.0;          // sqrt(sum of squared relative residuals)
  std::size_t points = 0;
  std::size_t iterations = 0;
  double band_low = 0.0;
  double band_high = 0.0;
  std::optional<DerivedQuantities> derived;

  LorentzParams params() const { return {omega0_hat, gamma_total_hat, amplitude_hat}; }
  double sigma(std::size_t i) const { return std::sqrt(std::max(covariance[i * 3 + i], 0.0)); }
};

class FitFailure : public Error {
 public:
  FitFailure(FitResult best, const std::string& what) : Error(ErrorKind::fit_failure, what), best_(best) {}
  const FitResult& best_iterate() const noexcept { return best_; }

 private:
  FitResult best_;
};

struct FitOptions {
  std::optional<LorentzParams> initial_guess;
  std::vector<double> exclude_omegas;  // drive lines, masked +-2 resolution bandwidths
  double band_halfwidths = 10.0;       // fit band = omega0 +- this many Gamma/2
  std::size_t min_band_points = 20;
  std::size_t max_iterations = 200;
};

/// Samples of the line shape on a symmetric grid, tagged as a noiseless estimate.
inline PsdEstimate sample_lorentzian(const LorentzParams& p, double omega_max, std::size_t points_per_side) {
  require_domain(omega_max > 0.0 && points_per_side >= 2, "sample_lorentzian: invalid grid");
  PsdEstimate out;
  const double d = omega_max / static_cast<double>(points_per_side);
  const long n = static_cast<long>(points_per_side);
  for (long k = -n; k <= n; ++k) {
    const double w = static_cast<double>(k) * d;
    out.omega.push_back(w);
    out.density.push_back(lorentz_model(w, p));
  }
  out.segments = 0;
  out.resolution_bandwidth = d;
  out.windowed_variance = out.integral();
  out.sample_variance = out.windowed_variance;
  out.parseval_consistent = true;
  return out;
}

namespace detail {

struct Band {
  std::vector<double> omega;
  std::vector<double> density;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<long>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

inline bool masked(double w, const std::vector<double>& drives, double halfwidth) {
  return std::any_of(drives.begin(), drives.end(), [&](double d) { return std::abs(w - d) <= halfwidth; });
}

/// Peak location, half-power width and height from the raw positive half.
inline LorentzParams self_initialise(const std::vector<double>& omega, const std::vector<double>& density,
                                     std::size_t segments) {
  const std::size_t n = omega.size();
  // Detection on a 5-bin running mean keeps single-bin noise spikes of a
  // lightly averaged periodogram from posing as a resonance.
  std::vector<double> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= 2 ? i - 2 : 0;
    const std::size_t hi = std::min(n - 1, i + 2);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += density[j];
    smooth[i] = s / static_cast<double>(hi - lo + 1);
  }
  const double median = median_of(smooth);
  const auto peak_it = std::max_element(smooth.begin(), smooth.end());
  const std::size_t peak = static_cast<std::size_t>(peak_it - smooth.begin());
  const double averaged = segments == 0 ? 1e12 : 5.0 * static_cast<double>(segments);
  const double threshold = 1.0 + std::max(0.2, 10.0 / std::sqrt(averaged));
  require(median > 0.0 && *peak_it > threshold * median, ErrorKind::no_peak,
          "fit_lorentzian: spectrum has no resolvable peak (peak/median = " +
              std::to_string(median > 0.0 ? *peak_it / median : 0.0) + ")");

  // Refine on the raw ordinates near the smoothed maximum.
  std::size_t top = peak;
  for (std::size_t j = (peak >= 2 ? peak - 2 : 0); j <= std::min(n - 1, peak + 2); ++j) {
    if (density[j] > density[top]) top = j;
  }
  const double height = smooth[peak] > density[top] ? smooth[peak] : density[top];
  const double half = 0.5 * height;
  auto crossing = [&](bool left) {
    std::size_t i = top;
    while (true) {
      if (left ? i == 0 : i + 1 >= n) return omega[i];
      const std::size_t j = left ? i - 1 : i + 1;
      if (smooth[j] < half) {
        const double f = (smooth[i] - half) / (smooth[i] - smooth[j]);
        return omega[i] + f * (omega[j] - omega[i]);
      }
      i = j;
    }
  };
  const double spacing = n > 1 ? omega[1] - omega[0] : 1.0;
  const double omega0 = omega[top];
  const double width = std::max(crossing(false) - crossing(true), spacing);
  return {omega0, width, height * width * omega0 * omega0};
}

inline Band select_band(const std::vector<double>& omega, const std::vector<double>& density, const LorentzParams& p,
                        const FitOptions& opt) {
  const double reach = opt.band_halfwidths * 0.5 * p.gamma_total;
  double lo = p.omega0 - reach;
  double hi = p.omega0 + reach;
  auto count = [&](double a, double b) {
    return static_cast<std::size_t>(std::count_if(omega.begin(), omega.end(), [&](double w) { return w >= a && w <= b; }));
  };
  const double spacing = omega.size() > 1 ? omega[1] - omega[0] : 1.0;
  while (count(lo, hi) < opt.min_band_points && (lo > omega.front() || hi < omega.back())) {
    lo -= spacing;
    hi += spacing;
  }
  Band band;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    if (omega[i] >= lo && omega[i] <= hi) {
      band.omega.push_back(omega[i]);
      band.density.push_back(density[i]);
    }
  }
  return band;
}

struct Solve {
  Eigen::Vector3d log_params;
  Eigen::Matrix3d normal;  // J^T J at the solution
  double cost = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

inline LorentzParams from_log(const Eigen::Vector3d& q) { return {std::exp(q[0]), std::exp(q[1]), std::exp(q[2])}; }

/// IRLS-LM in log parameters. Residuals r = (S - M) / W with W the model from
/// the previous accepted iterate.
inline Solve levenberg_marquardt(const Band& band, const LorentzParams& start, std::size_t max_iterations) {
  const std::size_t n = band.omega.size();
  Eigen::Vector3d q(std::log(start.omega0), std::log(start.gamma_total), std::log(start.amplitude));
  std::vector<double> weight(n);
  auto refresh_weights = [&](const Eigen::Vector3d& at) {
    const auto p = from_log(at);
    for (std::size_t i = 0; i < n; ++i) weight[i] = lorentz_model(band.omega[i], p);
  };
  auto cost_of = [&](const Eigen::Vector3d& at) {
    const auto p = from_log(at);
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = (band.density[i] - lorentz_model(band.omega[i], p)) / weight[i];
      c += r * r;
    }
    return c;
  };
  auto linearise = [&](const Eigen::Vector3d& at, Eigen::Matrix3d& jtj, Eigen::Vector3d& jtr) {
    const auto p = from_log(at);
    jtj.setZero();
    jtr.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      const double w = band.omega[i];
      const double w0sq = p.omega0 * p.omega0;
      const double detune = w0sq - w * w;
      const double denom = response_denominator(w, p.omega0, p.gamma_total);
      const double model = p.amplitude * p.gamma_total / denom;
      // d ln M / d(ln w0, ln Gamma, ln a)
      const Eigen::Vector3d dlog(-4.0 * w0sq * detune / denom,
                                 1.0 - 2.0 * p.gamma_total * p.gamma_total * w * w / denom, 1.0);
      const Eigen::Vector3d j = -(model / weight[i]) * dlog;
      const double r = (band.density[i] - model) / weight[i];
      jtj += j * j.transpose();
      jtr += j * r;
    }
  };

  refresh_weights(q);
  Solve out;
  double lambda = 1e-3;
  double cost = cost_of(q);
  Eigen::Matrix3d jtj;
  Eigen::Vector3d jtr;
  for (std::size_t it = 1; it <= max_iterations; ++it) {
    out.iterations = it;
    linearise(q, jtj, jtr);
    bool accepted = false;
    Eigen::Vector3d step = Eigen::Vector3d::Zero();
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::Matrix3d damped = jtj;
      for (int k = 0; k < 3; ++k) damped(k, k) *= (1.0 + lambda);
      step = damped.ldlt().solve(-jtr);
      const double trial_cost = cost_of(q + step);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        q += step;
        lambda = std::max(lambda * 0.3, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) {
      // No damping level lowers the cost: q is a minimum to working precision.
      out.converged = true;
      break;
    }
    refresh_weights(q);
    const double new_cost = cost_of(q);
    const bool small_step = step.cwiseAbs().maxCoeff() < 1e-10;
    const bool flat = std::abs(cost - new_cost) <= 1e-14 * cost;
    cost = new_cost;
    if (small_step || flat || cost == 0.0) {
      out.converged = true;
      break;
    }
  }
  linearise(q, jtj, jtr);
  out.log_params = q;
  out.normal = jtj;
  out.cost = cost;
  return out;
}

inline FitResult make_result(const Solve& s, const Band& band) {
  FitResult r;
  const auto p = from_log(s.log_params);
  r.omega0_hat = p.omega0;
  r.gamma_total_hat = p.gamma_total;
  r.amplitude_hat = p.amplitude;
  r.points = band.omega.size();
  r.iterations = s.iterations;
  r.residual_norm = std::sqrt(s.cost);
  r.band_low = band.omega.front();
  r.band_high = band.omega.back();
  const double dof = static_cast<double>(band.omega.size()) - 3.0;
  const double scale = dof > 0.0 ? s.cost / dof : 0.0;
  Eigen::Matrix3d cov_log = Eigen::Matrix3d::Zero();
  if (scale > 0.0) {
    cov_log = scale * s.normal.ldlt().solve(Eigen::Matrix3d::Identity());
  }
  const Eigen::Vector3d lin(p.omega0, p.gamma_total, p.amplitude);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      // Symmetrise; the ldlt solve leaves round-off asymmetry.
      const double c = 0.5 * (cov_log(i, j) + cov_log(j, i));
      r.covariance[static_cast<std::size_t>(i * 3 + j)] = lin[i] * lin[j] * c;
    }
  }
  return r;
}

}  // namespace detail

inline FitResult fit_lorentzian(const PsdEstimate& psd, const FitOptions& options = {}) {
  std::vector<double> omega;
  std::vector<double> density;
  const double mask = 2.0 * psd.resolution_bandwidth;
  for (std::size_t i = 0; i < psd.size(); ++i) {
    if (psd.omega[i] <= 0.0) continue;
    if (detail::masked(psd.omega[i], options.exclude_omegas, mask)) continue;
    omega.push_back(psd.omega[i]);
    density.push_back(psd.density[i]);
  }
  require(omega.size() >= 50, ErrorKind::insufficient_data,
          "fit_lorentzian: need >= 50 positive-frequency points, have " + std::to_string(omega.size()));
  for (std::size_t i = 0; i < density.size(); ++i) {
    require_domain(density[i] >= 0.0 && std::isfinite(density[i]), "fit_lorentzian: densities must be finite and >= 0");
  }

  LorentzParams guess = options.initial_guess ? *options.initial_guess
                                              : detail::self_initialise(omega, density, psd.segments);
  require_domain(guess.omega0 > 0.0 && guess.gamma_total > 0.0 && guess.amplitude > 0.0,
                 "fit_lorentzian: initial guess must be positive");
  require(omega.front() <= 0.5 * guess.omega0 + psd.spacing() && omega.back() >= 2.0 * guess.omega0,
          ErrorKind::insufficient_data, "fit_lorentzian: spectrum must cover [omega0/2, 2 omega0]");

  FitResult best;
  LorentzParams current = guess;
  // Second pass re-centres the band on the fitted line.
  for (int pass = 0; pass < 2; ++pass) {
    const auto band = detail::select_band(omega, density, current, options);
    require(band.omega.size() >= 4, ErrorKind::insufficient_data, "fit_lorentzian: fit band holds too few points");
    const auto solve = detail::levenberg_marquardt(band, current, options.max_iterations);
    best = detail::make_result(solve, band);
    const bool finite = std::isfinite(best.omega0_hat) && std::isfinite(best.gamma_total_hat) &&
                        std::isfinite(best.amplitude_hat);
    if (!solve.converged || !finite) {
      throw FitFailure(best, "fit_lorentzian: no convergence after " + std::to_string(solve.iterations) +
                                 " iterations");
    }
    current = best.params();
  }
  // Windowed ordinates are correlated with their neighbours. For a smooth
  // model the variance of a fitted parameter grows by sum_k |rho_k|^2, which
  // by Parseval is N sum w^4 / (sum w^2)^2 (1 for rectangular, 35/18 Hann).
  if (psd.segments > 0 && psd.window != WindowKind::rectangular) {
    const auto w = make_window(psd.window, psd.size());
    double w2 = 0.0, w4 = 0.0;
    for (double x : w) {
      w2 += x * x;
      w4 += x * x * x * x;
    }
    const double inflation = static_cast<double>(w.size()) * w4 / (w2 * w2);
    for (double& c : best.covariance) c *= inflation;
  }
  return best;
}

/// Particle properties from a thermal-line fit.
///
/// Without `known_radius` the fit must come from a run without feedback, so
/// the fitted linewidth is the gas damping and the Epstein law gives the
/// radius. With a radius from such a reference run, the gas damping at this
/// pressure follows from the Epstein law and the rest of the linewidth is
/// feedback.
struct ParticleCalibration {
  ParticleSpec particle;
  double gamma0 = 0.0;
  double delta_gamma = 0.0;
  double t_cm = 0.0;
  double calibration_gamma = 0.0;
};

inline ParticleCalibration particle_params_from_fit(const FitResult& fit, const Environment& env, double density,
                                                    std::optional<double> known_radius = std::nullopt) {
  require_domain(env.pressure > 0.0, "particle_params_from_fit: pressure must be > 0");
  require_domain(fit.omega0_hat > 0.0 && fit.gamma_total_hat > 0.0 && fit.amplitude_hat > 0.0,
                 "particle_params_from_fit: fit parameters must be > 0");
  ParticleCalibration out;
  out.particle.density = density;
  if (known_radius) {
    out.particle.radius = *known_radius;
    out.gamma0 = epstein_damping(env, out.particle);
  } else {
    out.gamma0 = fit.gamma_total_hat;
    out.particle.radius = epstein_radius(out.gamma0, env, density);
  }
  out.delta_gamma = std::max(fit.gamma_total_hat - out.gamma0, 0.0);
  out.t_cm = cm_temperature(env.gas_temperature, out.gamma0, out.delta_gamma);
  const double mass = out.particle.mass();
  // a = gamma^2 k T_cm / (pi m)
  out.calibration_gamma = std::sqrt(constants::pi * mass * fit.amplitude_hat / (constants::boltzmann * out.t_cm));
  return out;
}

inline FitResult with_derived(FitResult fit, const ParticleCalibration& cal) {
  fit.derived = DerivedQuantities{cal.t_cm, cal.gamma0, cal.particle.radius, cal.particle.mass(),
                                  cal.calibration_gamma};
  return fit;
}

}  // namespace levitas
