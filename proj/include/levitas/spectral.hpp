#pragma once

// Power spectral density estimation.
//
// Convention: double-sided density in angular frequency, on a grid that runs
// over negative and positive frequencies, so that sum(S * d_omega) over the
// whole grid is the variance of the (windowed) signal. A thermal oscillator
// then integrates to k T / (m omega0^2). The one-sided density in Hz used by
// most instruments is 4 pi times this value at positive frequencies.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "levitas/constants.hpp"
#include "levitas/error.hpp"
#include "levitas/experiment.hpp"
#include "levitas/langevin.hpp"

namespace levitas {

inline constexpr std::string_view psd_convention = "double-sided-angular";

struct PsdEstimate {
  std::vector<double> omega;    // rad/s, strictly increasing, symmetric about 0
  std::vector<double> density;  // signal units^2 * s
  std::size_t segments = 0;     // 0 for noiseless model samples
  WindowKind window = WindowKind::rectangular;
  double resolution_bandwidth = 0.0;  // rad/s, equivalent noise bandwidth
  double windowed_variance = 0.0;     // weighted mean square the estimate integrates to
  double sample_variance = 0.0;       // plain variance of the input
  bool parseval_consistent = false;

  std::size_t size() const { return omega.size(); }
  double spacing() const { return omega.size() > 1 ? omega[1] - omega[0] : 0.0; }

  /// sum(S * d_omega) over the grid.
  double integral() const {
    return std::accumulate(density.begin(), density.end(), 0.0) * spacing();
  }
};

/// One-sided density per Hz at omega >= 0 from the double-sided angular one.
inline double to_one_sided_hz(double double_sided_angular) { return 4.0 * constants::pi * double_sided_angular; }

inline std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::hann && n > 1) {
    // Periodic Hann, the usual choice for spectral averaging.
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * constants::pi * static_cast<double>(i) / static_cast<double>(n));
    }
  }
  return w;
}

namespace detail {

// FFTW's planner is not re-entrant; execution on distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    require(in_ != nullptr && out_ != nullptr, ErrorKind::io, "fft: allocation failed");
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    require(plan_ != nullptr, ErrorKind::io, "fft: planning failed");
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  double* input() { return in_; }
  void execute() { fftw_execute(plan_); }
  double power(std::size_t k) const { return out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1]; }

 private:
  std::size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_ = nullptr;
};

}  // namespace detail

/// Welch-averaged periodogram. Each segment has its own mean removed before
/// windowing.
inline PsdEstimate welch_psd(std::span<const double> data, double dt, std::size_t segment_length, double overlap,
                             WindowKind window) {
  require_domain(dt > 0.0, "welch_psd: dt must be > 0");
  require_domain(overlap >= 0.0 && overlap < 1.0, "welch_psd: overlap must lie in [0, 1)");
  require_domain(segment_length >= 2, "welch_psd: segment length must be >= 2");
  require(data.size() >= segment_length, ErrorKind::insufficient_data,
          "welch_psd: " + std::to_string(data.size()) + " samples is shorter than one segment of " +
              std::to_string(segment_length));

  const std::size_t n = segment_length;
  const auto hop = std::max<std::size_t>(
      1, n - static_cast<std::size_t>(std::floor(overlap * static_cast<double>(n))));
  const auto w = make_window(window, n);
  const double w_sq = std::inner_product(w.begin(), w.end(), w.begin(), 0.0);
  const double w_sum = std::accumulate(w.begin(), w.end(), 0.0);

  detail::RealFft fft(n);
  const std::size_t half = n / 2;
  std::vector<double> acc(half + 1, 0.0);
  double windowed_power = 0.0;
  std::size_t segments = 0;

  for (std::size_t start = 0; start + n <= data.size(); start += hop) {
    const auto seg = data.subspan(start, n);
    const double mean = std::accumulate(seg.begin(), seg.end(), 0.0) / static_cast<double>(n);
    double* in = fft.input();
    for (std::size_t i = 0; i < n; ++i) {
      in[i] = (seg[i] - mean) * w[i];
      windowed_power += in[i] * in[i];
    }
    fft.execute();
    for (std::size_t k = 0; k <= half; ++k) acc[k] += fft.power(k);
    ++segments;
  }

  // |X_k|^2 dt / (2 pi sum w^2) is the double-sided angular density; its sum
  // times d_omega = 2 pi / (n dt) returns sum (w x)^2 / sum w^2.
  const double scale = dt / (2.0 * constants::pi * w_sq * static_cast<double>(segments));
  const double d_omega = 2.0 * constants::pi / (static_cast<double>(n) * dt);

  PsdEstimate out;
  out.segments = segments;
  out.window = window;
  out.resolution_bandwidth = d_omega * static_cast<double>(n) * w_sq / (w_sum * w_sum);
  // Grid k = -(ceil(n/2) - 1) .. floor(n/2); the Nyquist bin of an even
  // length appears once, on the positive side.
  const long k_min = -static_cast<long>((n + 1) / 2 - 1);
  const long k_max = static_cast<long>(half);
  out.omega.reserve(n);
  out.density.reserve(n);
  for (long k = k_min; k <= k_max; ++k) {
    out.omega.push_back(static_cast<double>(k) * d_omega);
    out.density.push_back(acc[static_cast<std::size_t>(std::abs(k))] * scale);
  }

  out.windowed_variance = windowed_power / (w_sq * static_cast<double>(segments));
  const double total_mean = std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
  double ss = 0.0;
  for (double x : data) ss += (x - total_mean) * (x - total_mean);
  out.sample_variance = ss / static_cast<double>(data.size());
  const double integral = out.integral();
  out.parseval_consistent =
      std::abs(integral - out.windowed_variance) <= 1e-9 * std::max(out.windowed_variance, 1e-300);
  return out;
}

inline PsdEstimate welch_psd(const Trajectory& trajectory, std::size_t segment_length, double overlap,
                             WindowKind window) {
  return welch_psd(std::span<const double>(trajectory.positions), trajectory.dt, segment_length, overlap, window);
}

/// Thermal oscillator spectrum gamma^2 (k T / (pi m)) Gamma / ((w0^2 - w^2)^2 + Gamma^2 w^2).
///
/// `t0` is the temperature of the mode; with feedback pass the centre-of-mass
/// temperature together with the total damping.
inline double analytic_psd(double omega, double t0, double mass, double omega0, double gamma_total,
                           double calibration_gamma) {
  require_domain(t0 > 0.0 && mass > 0.0 && omega0 > 0.0 && gamma_total > 0.0 && calibration_gamma > 0.0,
                 "analytic_psd: parameters must be > 0");
  return calibration_gamma * calibration_gamma * constants::boltzmann * t0 / (constants::pi * mass) * gamma_total /
         response_denominator(omega, omega0, gamma_total);
}

}  // namespace levitas
