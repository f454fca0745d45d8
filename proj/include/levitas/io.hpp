#pragma once

// Plain-text artifacts: CSV series with fixed headers and JSON documents.
// Floats are written with 17 significant digits so every value reads back
// bit-exactly.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "levitas/config.hpp"
#include "levitas/error.hpp"
#include "levitas/force_pipeline.hpp"
#include "levitas/langevin.hpp"
#include "levitas/lorentz_fit.hpp"
#include "levitas/spectral.hpp"

namespace levitas {

using ojson = nlohmann::ordered_json;

inline constexpr std::string_view trajectory_header = "t_s,z_m";
inline constexpr std::string_view trajectory_header_v = "t_s,z_m,v_ms";
inline constexpr std::string_view psd_header = "omega_rad_s,S_m2_s";
inline constexpr std::string_view dc_header = "voltage_V,mean_z_m,stderr_m";
inline constexpr std::string_view ac_header = "detuning_rad_s,peak_height,stderr";

inline std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void append_row(std::string& out, std::initializer_list<double> values) {
  bool first = true;
  for (double v : values) {
    if (!first) out += ',';
    out += format17(v);
    first = false;
  }
  out += '\n';
}

inline std::vector<std::vector<double>> parse_csv_rows(std::string_view text, std::string_view header,
                                                       std::size_t columns) {
  std::istringstream in{std::string(text)};
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse, "csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == header, ErrorKind::parse, "csv: expected header '" + std::string(header) + "', got '" + line + "'");
  std::vector<std::vector<double>> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      require(!cell.empty() && end == cell.c_str() + cell.size(), ErrorKind::parse,
              "csv: line " + std::to_string(number) + ": '" + cell + "' is not a number");
      row.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    require(row.size() == columns, ErrorKind::parse,
            "csv: line " + std::to_string(number) + " has " + std::to_string(row.size()) + " columns, expected " +
                std::to_string(columns));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

/// First line of a CSV document, for format detection.
inline std::string csv_header(std::string_view text) {
  auto line = text.substr(0, text.find('\n'));
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return std::string(line);
}

// ---------------------------------------------------------------------------
// Trajectory

inline std::string trajectory_csv(const Trajectory& t) {
  std::string out(t.velocities ? trajectory_header_v : trajectory_header);
  out += '\n';
  out.reserve(out.size() + t.size() * 52);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.velocities) {
      detail::append_row(out, {t.time(i), t.positions[i], (*t.velocities)[i]});
    } else {
      detail::append_row(out, {t.time(i), t.positions[i]});
    }
  }
  return out;
}

inline ojson trajectory_sidecar(const Trajectory& t) {
  ojson j;
  j["kind"] = "trajectory";
  j["dt_s"] = t.dt;
  j["samples"] = t.size();
  j["seed"] = t.seed;
  j["columns"] = t.velocities ? "t_s,z_m,v_ms" : "t_s,z_m";
  j["config"] = config_to_json(t.experiment);
  return j;
}

inline Trajectory read_trajectory_csv(std::string_view text) {
  const bool with_v = csv_header(text) == trajectory_header_v;
  const auto rows = detail::parse_csv_rows(text, with_v ? trajectory_header_v : trajectory_header, with_v ? 3 : 2);
  require(rows.size() >= 2, ErrorKind::insufficient_data, "trajectory csv: need at least two samples");
  Trajectory t;
  t.dt = (rows.back()[0] - rows.front()[0]) / static_cast<double>(rows.size() - 1);
  require(t.dt > 0.0, ErrorKind::parse, "trajectory csv: time column must increase");
  for (const auto& r : rows) t.positions.push_back(r[1]);
  if (with_v) {
    t.velocities.emplace();
    for (const auto& r : rows) t.velocities->push_back(r[2]);
  }
  return t;
}

// ---------------------------------------------------------------------------
// PSD

inline std::string psd_csv(const PsdEstimate& psd) {
  std::string out(psd_header);
  out += '\n';
  for (std::size_t i = 0; i < psd.size(); ++i) detail::append_row(out, {psd.omega[i], psd.density[i]});
  return out;
}

inline ojson psd_sidecar(const PsdEstimate& psd) {
  ojson j;
  j["kind"] = "psd";
  j["convention"] = std::string(psd_convention);
  j["one_sided_hz_factor"] = 4.0 * constants::pi;
  j["segments"] = psd.segments;
  j["window"] = std::string(to_string(psd.window));
  j["resolution_bandwidth_rad_s"] = psd.resolution_bandwidth;
  j["windowed_variance"] = psd.windowed_variance;
  j["sample_variance"] = psd.sample_variance;
  j["parseval_consistent"] = psd.parseval_consistent;
  return j;
}

/// Reads a PSD CSV; `sidecar` restores segment count and bandwidth.
inline PsdEstimate read_psd_csv(std::string_view text, const ojson* sidecar = nullptr) {
  const auto rows = detail::parse_csv_rows(text, psd_header, 2);
  require(rows.size() >= 2, ErrorKind::insufficient_data, "psd csv: need at least two rows");
  PsdEstimate psd;
  for (const auto& r : rows) {
    psd.omega.push_back(r[0]);
    psd.density.push_back(r[1]);
  }
  psd.resolution_bandwidth = psd.spacing();
  if (sidecar) {
    psd.segments = sidecar->value("segments", std::size_t{0});
    psd.window = sidecar->value("window", std::string("hann")) == "hann" ? WindowKind::hann : WindowKind::rectangular;
    psd.resolution_bandwidth = sidecar->value("resolution_bandwidth_rad_s", psd.spacing());
    psd.windowed_variance = sidecar->value("windowed_variance", 0.0);
    psd.sample_variance = sidecar->value("sample_variance", 0.0);
    psd.parseval_consistent = sidecar->value("parseval_consistent", false);
  }
  return psd;
}

// ---------------------------------------------------------------------------
// Fits and estimates

inline ojson fit_json(const FitResult& fit) {
  ojson j;
  j["convention"] = std::string(psd_convention);
  j["omega0_rad_s"] = fit.omega0_hat;
  j["gamma_total_rad_s"] = fit.gamma_total_hat;
  j["amplitude"] = fit.amplitude_hat;
  j["sigma"] = {{"omega0_rad_s", fit.sigma(0)}, {"gamma_total_rad_s", fit.sigma(1)}, {"amplitude", fit.sigma(2)}};
  j["covariance"] = fit.covariance;
  j["residual_norm"] = fit.residual_norm;
  j["points"] = fit.points;
  j["iterations"] = fit.iterations;
  j["band_rad_s"] = {fit.band_low, fit.band_high};
  if (fit.derived) {
    const auto& d = *fit.derived;
    j["derived"] = {{"t_cm_k", d.t_cm},
                    {"gamma0_rad_s", d.gamma0},
                    {"radius_m", d.radius},
                    {"mass_kg", d.mass},
                    {"calibration_gamma_per_m", d.calibration_gamma}};
  }
  return j;
}

inline ojson charge_json(const ChargeEstimate& q) {
  return {{"charge_c", q.charge},     {"charge_e", q.count()},   {"nearest_e", q.nearest},
          {"residual", q.residual},   {"sigma_e", q.sigma_e},    {"quality_warning", q.quality_warning}};
}

// ---------------------------------------------------------------------------
// Sweep records

inline std::string dc_csv(const DcSweepRecord& record) {
  std::string out(dc_header);
  out += '\n';
  for (const auto& p : record.points) detail::append_row(out, {p.voltage, p.mean_z, p.stderr_z});
  return out;
}

inline std::vector<DcSweepPoint> read_dc_csv(std::string_view text) {
  std::vector<DcSweepPoint> out;
  for (const auto& r : detail::parse_csv_rows(text, dc_header, 3)) out.push_back({r[0], r[1], r[2]});
  return out;
}

inline std::string ac_csv(const AcSweepRecord& record) {
  std::string out(ac_header);
  out += '\n';
  for (const auto& p : record.points) detail::append_row(out, {p.detuning, p.peak_height, p.stderr_peak});
  return out;
}

inline std::vector<AcSweepPoint> read_ac_csv(std::string_view text) {
  std::vector<AcSweepPoint> out;
  for (const auto& r : detail::parse_csv_rows(text, ac_header, 3)) out.push_back({r[0], r[1], r[2]});
  return out;
}

// ---------------------------------------------------------------------------
// Files

/// Writes `content` to `path` once. An existing file with identical bytes is
/// left alone, so re-running a deterministic command is harmless; anything
/// else is refused.
inline void write_once(const std::filesystem::path& path, std::string_view content) {
  std::error_code ec;
  if (std::filesystem::exists(path, ec)) {
    const auto existing = read_text_file(path.string());
    require(existing == content, ErrorKind::io,
            "refusing to overwrite '" + path.string() + "' with different content");
    return;
  }
  std::filesystem::create_directories(path.parent_path(), ec);
  require(!ec, ErrorKind::io, "cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  const auto tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::io, "cannot write '" + tmp + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    require(out.good(), ErrorKind::io, "write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorKind::io, "cannot move '" + tmp + "' into place: " + ec.message());
}

inline std::string json_text(const ojson& j) { return j.dump(2) + "\n"; }

}  // namespace levitas
