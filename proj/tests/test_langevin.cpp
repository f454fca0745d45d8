#include <catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numeric>

#include "levitas/campaigns.hpp"
#include "levitas/langevin.hpp"
#include "support.hpp"

using namespace levitas;
using levitas::testing::base_config;
using levitas::testing::throws_kind;
using Catch::Matchers::WithinRel;
using Catch::Matchers::WithinAbs;

namespace {

constexpr double kB = constants::boltzmann;
constexpr double pi = constants::pi;

/// Exact solution of z'' + G z' + w^2 z = a cos(W t) from (z0, v0).
struct DrivenOscillator {
  double w, gamma, a, drive_w, z0, v0;

  double operator()(double t) const {
    std::complex<double> particular_amp(0.0, 0.0);
    if (a != 0.0) particular_amp = a / std::complex<double>(w * w - drive_w * drive_w, gamma * drive_w);
    auto zp = [&](double s) { return (particular_amp * std::polar(1.0, drive_w * s)).real(); };
    auto vp = [&](double s) {
      return (particular_amp * std::complex<double>(0.0, drive_w) * std::polar(1.0, drive_w * s)).real();
    };
    const double wd = std::sqrt(w * w - 0.25 * gamma * gamma);
    const double c1 = z0 - zp(0.0);
    const double c2 = (v0 - vp(0.0) + 0.5 * gamma * c1) / wd;
    return std::exp(-0.5 * gamma * t) * (c1 * std::cos(wd * t) + c2 * std::sin(wd * t)) + zp(t);
  }
};

SimulationPlan quiet_plan(const ExperimentConfig& c, double duration, double dt) {
  auto plan = SimulationPlan::from_config(c);
  plan.duration = duration;
  plan.dt = dt;
  plan.thermal_noise = false;
  plan.initial = InitialCondition::rest;
  return plan;
}

}  // namespace

TEST_CASE("thermal kick", "[langevin]") {
  CHECK(thermal_kick_sigma(0.0, 1e-18, 0.1, 1e-7) == 0.0);
  CHECK_THAT(thermal_kick_sigma(300.0, 1e-18, 0.1, 4e-7), WithinRel(2.0 * thermal_kick_sigma(300.0, 1e-18, 0.1, 1e-7), 1e-14));
  CHECK_THAT(thermal_kick_sigma(300.0, 1e-18, 0.1, 1e-7), WithinRel(std::sqrt(2 * kB * 300.0 * 1e-18 * 0.1 * 1e-7), 1e-14));
}

TEST_CASE("plan invariants", "[langevin]") {
  auto c = base_config(1.0);
  auto plan = SimulationPlan::from_config(c);
  plan.duration = 1e-3;
  plan.dt = 1e-6;
  CHECK(plan.sample_count() == 1000);
  plan.dt = 0.11 / c.trap.omega_z;
  CHECK(throws_kind(ErrorKind::configuration, [&] { plan.validate(); }));
  plan.dt = 0.1 / c.trap.omega_z;
  CHECK_NOTHROW(plan.validate());
  plan.duration = 0.5 * plan.dt;
  CHECK(throws_kind(ErrorKind::configuration, [&] { plan.validate(); }));
}

TEST_CASE("non-finite state reports the step", "[langevin]") {
  auto plan = SimulationPlan::from_config(base_config(1.0));
  plan.initial = InitialCondition::rest;
  plan.initial_z = std::nan("");
  try {
    simulate(plan);
    FAIL("expected an integration failure");
  } catch (const IntegrationFailure& f) {
    CHECK(f.step() == 1);
    CHECK(f.kind() == ErrorKind::integration_failure);
  }
}

TEST_CASE("bit-identical reruns", "[langevin]") {
  auto c = base_config(1.0);
  c.drive = {DriveMode::ac, 3.0, c.trap.omega_z * 1.01};
  auto plan = SimulationPlan::from_config(c);
  plan.seed = 42;
  plan.record_velocity = true;
  const auto a = simulate(plan);
  const auto b = simulate(plan);
  CHECK(a.positions == b.positions);
  CHECK(*a.velocities == *b.velocities);
  plan.seed = 43;
  CHECK(simulate(plan).positions != a.positions);
  for (double z : a.positions) REQUIRE(std::isfinite(z));
}

TEST_CASE("phase rotator stays on the exact phase", "[langevin]") {
  const double w = 2 * pi * 57e3, dt = 2.5e-7;
  PhaseRotator r(w, dt);
  for (std::size_t i = 0; i < 1000003; ++i) r.advance();
  const auto exact = std::polar(1.0, w * dt * 1000003.0);
  CHECK(std::abs(r.value() - exact) < 1e-10);
}

TEST_CASE("DC drive settles on the static displacement", "[langevin]") {
  auto c = base_config(1e-3);
  c.environment.feedback_damping = 2e5;
  c.drive = {DriveMode::dc, 1e4, std::nullopt};
  const double dt = 0.02 / c.trap.omega_z;
  const auto t = simulate(quiet_plan(c, 40.0 / c.gamma_total(), dt));
  const double expected = dc_displacement(c.particle.charge(), 1e4, c.needle, c.trap, c.mass());
  CHECK_THAT(t.positions.back(), WithinRel(expected, 1e-3));
}

TEST_CASE("free decay follows the damped cosine", "[langevin]") {
  auto c = base_config(1e-2);
  c.environment.feedback_damping = 1e4;
  const double w = c.trap.omega_z, g = c.gamma_total();
  auto plan = quiet_plan(c, 20.0 / g, 0.02 / w);
  plan.initial_z = 1e-8;
  const auto t = simulate(plan);
  const DrivenOscillator exact{w, g, 0.0, 0.0, 1e-8, 0.0};
  double worst = 0.0;
  for (std::size_t i = 0; i < t.size(); i += 97) worst = std::max(worst, std::abs(t.positions[i] - exact(t.time(i))));
  CHECK(worst < 1e-3 * 1e-8);
  // Envelope decays at (Gamma0 + dGamma) / 2.
  const std::size_t late = t.size() - 1;
  CHECK(std::abs(t.positions[late]) <= 1e-8 * std::exp(-0.5 * g * t.time(late)) * 1.01);
}

TEST_CASE("resonant AC drive reaches F / (m omega0 Gamma)", "[langevin]") {
  auto c = base_config(1e-3);
  c.environment.feedback_damping = 1e3;
  c.drive = {DriveMode::ac, 100.0, c.trap.omega_z};
  const double g = c.gamma_total();
  const auto t = simulate(quiet_plan(c, 30.0 / g, 0.05 / c.trap.omega_z));
  const auto ss = steady_state_amplitude(t, c.trap.omega_z, 0.5);
  const double force = coulomb_force_z(c.particle.charge(), 100.0, c.needle);
  CHECK_THAT(ss.amplitude, WithinRel(force / (c.mass() * c.trap.omega_z * g), 0.01));
  // On resonance the response lags the drive by a quarter period.
  CHECK_THAT(ss.phase, WithinAbs(-pi / 2, 0.02));
}

TEST_CASE("steady-state demodulation", "[langevin]") {
  Trajectory t;
  t.dt = 1e-6;
  const double w = 2 * pi * 10e3, amp = 3.7e-9;
  for (std::size_t i = 0; i < 50000; ++i) t.positions.push_back(amp * std::cos(w * t.time(i) + 0.4) + 2e-9);
  const auto ss = steady_state_amplitude(t, w, 0.2);
  CHECK_THAT(ss.amplitude, WithinRel(amp, 1e-6));
  CHECK_THAT(ss.phase, WithinAbs(0.4, 1e-6));
  CHECK_THAT(ss.offset, WithinRel(2e-9, 1e-6));

  Trajectory short_t = t;
  short_t.positions.resize(1000);  // 8 periods after settling
  CHECK(throws_kind(ErrorKind::insufficient_data, [&] { steady_state_amplitude(short_t, w, 0.2); }));
  CHECK(throws_kind(ErrorKind::domain, [&] { steady_state_amplitude(t, 4e6, 0.2); }));

  // White noise: amplitude shrinks like 1 / sqrt(window).
  double short_sum = 0.0, long_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    NormalSource rng(seed);
    Trajectory n;
    n.dt = 1e-6;
    for (std::size_t i = 0; i < 160000; ++i) n.positions.push_back(rng.normal());
    long_sum += steady_state_amplitude(n, w, 0.0).amplitude;
    n.positions.resize(10000);
    short_sum += steady_state_amplitude(n, w, 0.0).amplitude;
  }
  CHECK_THAT(short_sum / long_sum, WithinRel(4.0, 0.2));
}

TEST_CASE("effective temperature under feedback", "[langevin]") {
  // Undamped-feedback equipartition is an acceptance criterion; this is the
  // cooled counterpart at a quarter of the gas temperature.
  auto c = base_config(10.0);
  c.environment.feedback_damping = 3.0 * c.gamma0();
  auto plan = SimulationPlan::from_config(c);
  plan.dt = 0.1 / c.trap.omega_z;
  plan.duration = 4e5 / c.gamma_total();
  double sum = 0.0;
  std::size_t n = 0;
  integrate(plan, [&](std::size_t, double z, double) {
    sum += z * z;
    ++n;
  });
  const double t_fit = (sum / n) * c.mass() * c.trap.omega_z * c.trap.omega_z / kB;
  CHECK_THAT(t_fit, WithinRel(cm_temperature(300.0, c.gamma0(), c.environment.feedback_damping), 0.05));
}

TEST_CASE("DC displacement is linear in voltage", "[langevin]") {
  auto c = base_config(1e-2, 99.0);
  c.simulation.dt = 0.1 / c.trap.omega_z;
  c.simulation.duration = 0.3;
  c.sweep = SweepSettings{};
  c.sweep->dc_voltages = {5e3, 1e4};
  const auto r = run_dc_campaign(c, {11, 1, 32});
  const auto& lo = r.points[0];
  const auto& hi = r.points[1];
  CHECK(std::abs(hi.mean_z - 2.0 * lo.mean_z) < 4.0 * std::hypot(hi.stderr_z, 2.0 * lo.stderr_z));
}

TEST_CASE("sweeps do not depend on the worker count", "[langevin]") {
  auto c = base_config(1e-2, 99.0);
  c.simulation.duration = 0.01;
  c.sweep = SweepSettings{};
  c.sweep->dc_voltages = {0.0, 1e3, 2e3, 3e3};
  const auto one = run_dc_campaign(c, {5, 1, 32});
  const auto three = run_dc_campaign(c, {5, 3, 32});
  for (std::size_t i = 0; i < one.points.size(); ++i) {
    CHECK(one.points[i].mean_z == three.points[i].mean_z);
    CHECK(one.points[i].stderr_z == three.points[i].stderr_z);
  }
  CHECK(derive_seed(5, 0) != derive_seed(5, 1));
  CHECK(derive_seed(5, 0) != derive_seed(6, 0));
}

TEST_CASE("second-order convergence without noise", "[langevin]") {
  auto c = base_config(1.0);
  c.environment.feedback_damping = 2e4;
  c.drive = {DriveMode::ac, 500.0, 0.8 * c.trap.omega_z};
  const double w = c.trap.omega_z;
  const double accel = coulomb_force_z(c.particle.charge(), 500.0, c.needle) / c.mass();
  const DrivenOscillator exact{w, c.gamma_total(), accel, 0.8 * w, 0.0, 0.0};
  const double duration = 2e-4;
  auto error = [&](double dt) {
    const auto t = simulate(quiet_plan(c, duration, dt));
    double worst = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(t.positions[i] - exact(t.time(i))));
    return worst;
  };
  const double e1 = error(0.08 / w);
  const double e2 = error(0.04 / w);
  const double e3 = error(0.02 / w);
  INFO("errors " << e1 << " " << e2 << " " << e3);
  CHECK(e1 / e2 >= 4.0);
  CHECK(e2 / e3 >= 4.0);
}
