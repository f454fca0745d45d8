#include <catch_amalgamated.hpp>

#include <algorithm>
#include <string>

#include "levitas/config.hpp"
#include "support.hpp"

using namespace levitas;
using levitas::testing::throws_kind;
using Catch::Matchers::WithinRel;
using Catch::Matchers::ContainsSubstring;
using ojson = nlohmann::ordered_json;

namespace {

const std::string preset_dir = LEVITAS_PRESET_DIR;

std::string preset(const std::string& name) { return read_text_file(preset_dir + "/" + name); }

ojson dc_doc() { return ojson::parse(preset("paper_dc.json")); }

std::vector<ConfigIssue> issues_of(const ojson& doc) {
  try {
    parse_config_json(doc);
  } catch (const ParseError& e) {
    return e.issues();
  }
  return {};
}

bool has_issue(const std::vector<ConfigIssue>& issues, const std::string& pointer, const std::string& fragment = "") {
  return std::any_of(issues.begin(), issues.end(), [&](const ConfigIssue& i) {
    return i.pointer == pointer && i.message.find(fragment) != std::string::npos;
  });
}

}  // namespace

TEST_CASE("presets round-trip byte for byte", "[config]") {
  for (const auto* name : {"paper_dc.json", "paper_ac.json", "paper_cooling.json"}) {
    INFO(name);
    const auto text = preset(name);
    const auto cfg = parse_config_text(text);
    CHECK(serialize_config(cfg) == text);
    const auto again = parse_config_text(serialize_config(cfg));
    CHECK(serialize_config(again) == text);
    CHECK(again.feedback_over_gamma0 == cfg.feedback_over_gamma0);
    CHECK(again.environment.feedback_damping == cfg.environment.feedback_damping);
  }
}

TEST_CASE("DC preset values", "[config]") {
  const auto c = parse_config_text(preset("paper_dc.json"));
  CHECK_THAT(c.particle.radius, WithinRel(41e-9, 1e-12));
  CHECK(c.particle.density == 2650.0);
  CHECK(c.particle.charge_count == 9);
  CHECK_THAT(c.environment.pressure, WithinRel(1.6e-3, 1e-12));
  CHECK_THAT(c.needle.tip_radius, WithinRel(100e-6, 1e-12));
  CHECK_THAT(c.needle.distance, WithinRel(39.6e-3, 1e-12));
  CHECK_THAT(c.needle.theta, WithinRel(constants::pi / 4.0, 1e-12));
  CHECK(c.drive.mode == DriveMode::dc);
  CHECK(c.drive.voltage == 1e4);
  CHECK_THAT(c.environment.feedback_damping, WithinRel(99.0 * c.gamma0(), 1e-12));
  REQUIRE(c.sweep);
  CHECK(c.sweep->dc_voltages.size() == 6);
}

TEST_CASE("value-level round trip", "[config]") {
  auto doc = dc_doc();
  doc["simulation"]["seed"] = 18446744073709551615ULL;
  doc["environment"].erase("feedback_damping_over_gamma0");
  doc["environment"]["feedback_damping_rad_s"] = 12.345678901234567;
  doc["particle"]["radius_nm"] = 41.000000000000007;
  const auto a = parse_config_json(doc);
  const auto b = parse_config_text(serialize_config(a));
  CHECK(a.simulation.seed == 18446744073709551615ULL);
  CHECK(b.simulation.seed == a.simulation.seed);
  CHECK_THAT(b.environment.feedback_damping, WithinRel(a.environment.feedback_damping, 1e-14));
  CHECK_THAT(b.particle.radius, WithinRel(a.particle.radius, 1e-14));
  CHECK(serialize_config(b) == serialize_config(a));
}

TEST_CASE("empty document lists every missing section", "[config]") {
  const auto issues = issues_of(ojson::object());
  for (const auto* p : {"/particle", "/trap", "/environment", "/needle", "/drive", "/simulation"}) {
    INFO(p);
    CHECK(has_issue(issues, p, "missing"));
  }
  CHECK_FALSE(has_issue(issues, "/sweep"));
  CHECK_FALSE(has_issue(issues, "/analysis"));
}

TEST_CASE("missing fields are collected together", "[config]") {
  auto doc = dc_doc();
  doc["particle"].erase("radius_nm");
  doc["needle"].erase("angle_deg");
  doc["simulation"].erase("seed");
  const auto issues = issues_of(doc);
  CHECK(issues.size() == 3);
  CHECK(has_issue(issues, "/particle/radius_nm", "missing"));
  CHECK(has_issue(issues, "/needle/angle_deg", "missing"));
  CHECK(has_issue(issues, "/simulation/seed", "missing"));
}

TEST_CASE("invariant violations name the field", "[config]") {
  auto doc = dc_doc();
  doc["environment"]["pressure_mbar"] = -1.0;
  const auto issues = issues_of(doc);
  CHECK(has_issue(issues, "/environment/pressure_mbar", "Environment.pressure"));

  auto bad = dc_doc();
  bad["particle"]["radius_nm"] = 0.0;
  bad["needle"]["angle_deg"] = 90.0;
  bad["simulation"]["dt_ns"] = 1000.0;
  const auto more = issues_of(bad);
  CHECK(has_issue(more, "/particle/radius_nm", "ParticleSpec.radius"));
  CHECK(has_issue(more, "/needle/angle_deg", "NeedleSpec.theta"));
  CHECK(has_issue(more, "/simulation/dt_ns", "stability guard"));
}

TEST_CASE("unit suffixes are mandatory", "[config]") {
  auto doc = dc_doc();
  doc["particle"]["radius"] = doc["particle"]["radius_nm"];
  doc["particle"].erase("radius_nm");
  doc["environment"]["pressure"] = 1e-5;
  doc["trap"]["colour"] = "red";
  const auto issues = issues_of(doc);
  CHECK(has_issue(issues, "/particle/radius", "unit suffix, expected 'radius_nm'"));
  CHECK(has_issue(issues, "/environment/pressure", "expected 'pressure_mbar'"));
  CHECK(has_issue(issues, "/trap/colour", "unknown key"));
  CHECK(has_issue(issues, "/particle/radius_nm", "missing"));
}

TEST_CASE("types are checked", "[config]") {
  auto doc = dc_doc();
  doc["particle"]["charge_e"] = 2.5;
  doc["simulation"]["seed"] = -3;
  doc["trap"]["frequency_khz"] = "57";
  doc["sweep"]["dc_voltages_v"] = {0.0, "x"};
  const auto issues = issues_of(doc);
  CHECK(has_issue(issues, "/particle/charge_e"));
  CHECK(has_issue(issues, "/simulation/seed"));
  CHECK(has_issue(issues, "/trap/frequency_khz"));
  CHECK(has_issue(issues, "/sweep/dc_voltages_v/1"));
}

TEST_CASE("drive section rules", "[config]") {
  auto ac = dc_doc();
  ac["drive"]["mode"] = "ac";
  CHECK(has_issue(issues_of(ac), "/drive/frequency_khz", "missing"));

  auto dc = dc_doc();
  dc["drive"]["frequency_khz"] = 57.0;
  CHECK(has_issue(issues_of(dc), "/drive/frequency_khz", "only allowed for ac"));

  auto none = dc_doc();
  none["drive"] = {{"mode", "none"}};
  CHECK(issues_of(none).empty());

  auto odd = dc_doc();
  odd["drive"]["mode"] = "pulsed";
  CHECK(has_issue(issues_of(odd), "/drive/mode"));
}

TEST_CASE("feedback is given one way", "[config]") {
  auto both = dc_doc();
  both["environment"]["feedback_damping_rad_s"] = 10.0;
  CHECK(has_issue(issues_of(both), "/environment/feedback_damping_over_gamma0", "not both"));

  auto absolute = dc_doc();
  absolute["environment"].erase("feedback_damping_over_gamma0");
  absolute["environment"]["feedback_damping_rad_s"] = 10.0;
  const auto c = parse_config_json(absolute);
  CHECK(c.environment.feedback_damping == 10.0);
  CHECK_FALSE(c.feedback_over_gamma0);
  CHECK_THAT(serialize_config(c), ContainsSubstring("\"feedback_damping_rad_s\": 10.0"));
}

TEST_CASE("malformed input", "[config]") {
  CHECK(throws_kind(ErrorKind::parse, [] { parse_config_text("{\"particle\": "); }));
  CHECK(throws_kind(ErrorKind::parse, [] { parse_config_text("[1, 2]"); }));
  CHECK(throws_kind(ErrorKind::io, [] { parse_config_file("/nonexistent/levitas.json"); }));
  try {
    parse_config_text("{}");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK_THAT(std::string(e.what()), ContainsSubstring("/particle"));
  }
}

TEST_CASE("optional sections take defaults", "[config]") {
  auto doc = dc_doc();
  doc.erase("sweep");
  doc.erase("analysis");
  doc.erase("notes");
  doc["environment"].erase("gas_temperature_k");
  const auto c = parse_config_json(doc);
  CHECK_FALSE(c.sweep);
  CHECK(c.analysis.window == WindowKind::hann);
  CHECK(c.analysis.pressure_rel_uncertainty == 0.15);
  CHECK(c.environment.gas_temperature == 300.0);
  // Serialising writes the defaults out explicitly.
  const auto text = serialize_config(c);
  CHECK_THAT(text, ContainsSubstring("\"analysis\""));
  CHECK(serialize_config(parse_config_text(text)) == text);
}
