#pragma once

// Text formats shared by the CLI, the location server and the tests.
//
// Line records (one per line, space-separated, `#` starts a comment line):
//   OBS <anchor|target> <receiverId> src <anchorId> seq <n> ts <seconds>
//   FIX target <id> window <start> x <m> y <m> [z <m>] anchors <id,id,...> rms <m>
//   NOFIX target <id> [window <start>]
//   TRUTH target <id> label <label> x <m> y <m> [z <m>]
//
// Decimal values carry at least 9 fractional digits and as many more as needed to read back the
// exact double. Testbed and scenario files are JSON.

#include "beaconloc/model.hpp"
#include "beaconloc/simulator.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

namespace beaconloc {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : std::runtime_error(describe(line, field, what)), line_(line), field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string describe(std::size_t line, const std::string& field, const std::string& what) {
    std::string s = line > 0 ? "line " + std::to_string(line) + ": " : std::string{};
    if (!field.empty()) s += "field '" + field + "': ";
    return s + what;
  }

  std::size_t line_;
  std::string field_;
};

inline constexpr int kMinFractionDigits = 9;

inline std::string format_decimal(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("format_decimal: non-finite value");
  char buf[512];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  if (ec != std::errc{}) throw std::runtime_error("format_decimal: buffer too small");
  std::string s(buf, end);
  const auto dot = s.find('.');
  const std::size_t have = dot == std::string::npos ? 0 : s.size() - dot - 1;
  if (dot == std::string::npos) s += '.';
  if (have < kMinFractionDigits) s.append(kMinFractionDigits - have, '0');
  return s;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline bool is_blank_or_comment(std::string_view line) {
  for (char ch : line) {
    if (ch == '#') return true;
    if (ch != ' ' && ch != '\t' && ch != '\r') return false;
  }
  return true;
}

template <typename T>
T parse_number(std::string_view token, std::size_t line, const char* field) {
  T value{};
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if constexpr (std::is_floating_point_v<T>) {
    if (!token.empty() && token.front() == '+') ++first;
  }
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || token.empty()) {
    throw ParseError(line, field, "expected a number, got '" + std::string(token) + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) throw ParseError(line, field, "value must be finite");
  }
  return value;
}

inline void expect_keyword(std::string_view token, std::string_view keyword, std::size_t line) {
  if (token != keyword) {
    throw ParseError(line, std::string(keyword), "expected '" + std::string(keyword) + "', got '" + std::string(token) + "'");
  }
}

inline ReceiverKind parse_kind(std::string_view token, std::size_t line) {
  if (token == "anchor") return ReceiverKind::anchor;
  if (token == "target") return ReceiverKind::target;
  throw ParseError(line, "kind", "expected 'anchor' or 'target', got '" + std::string(token) + "'");
}

inline std::vector<int> parse_id_list(std::string_view token, std::size_t line) {
  std::vector<int> ids;
  std::size_t start = 0;
  while (start <= token.size()) {
    auto comma = token.find(',', start);
    if (comma == std::string_view::npos) comma = token.size();
    ids.push_back(parse_number<int>(token.substr(start, comma - start), line, "anchors"));
    start = comma + 1;
  }
  return ids;
}

}  // namespace detail

// ---- observations ----------------------------------------------------------------------------

inline std::string format_observation(const BeaconObservation& obs) {
  return "OBS " + std::string(to_string(obs.receiver_kind)) + " " + std::to_string(obs.receiver_id) + " src " +
         std::to_string(obs.source_anchor_id) + " seq " + std::to_string(obs.seqno) + " ts " +
         format_decimal(obs.timestamp);
}

inline BeaconObservation parse_observation_line(std::string_view text, std::size_t line = 0) {
  const auto tok = detail::split_ws(text);
  if (tok.empty() || tok[0] != "OBS") throw ParseError(line, "kind", "expected an OBS record");
  if (tok.size() != 9) throw ParseError(line, "", "OBS record needs 9 fields, got " + std::to_string(tok.size()));
  BeaconObservation obs;
  obs.receiver_kind = detail::parse_kind(tok[1], line);
  obs.receiver_id = detail::parse_number<int>(tok[2], line, "receiverId");
  detail::expect_keyword(tok[3], "src", line);
  obs.source_anchor_id = detail::parse_number<int>(tok[4], line, "src");
  detail::expect_keyword(tok[5], "seq", line);
  obs.seqno = detail::parse_number<std::uint64_t>(tok[6], line, "seq");
  detail::expect_keyword(tok[7], "ts", line);
  obs.timestamp = detail::parse_number<double>(tok[8], line, "ts");
  return obs;
}

inline std::vector<BeaconObservation> parse_observations(std::istream& in) {
  std::vector<BeaconObservation> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (detail::is_blank_or_comment(text)) continue;
    out.push_back(parse_observation_line(text, line));
  }
  return out;
}

inline std::vector<BeaconObservation> parse_observations(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_observations(in);
}

inline void write_observations(std::ostream& out, std::span<const BeaconObservation> obs) {
  for (const auto& o : obs) out << format_observation(o) << '\n';
}

// ---- fixes -------------------------------------------------------------------------------------

inline std::string format_fix(const LocationFix& fix) {
  std::string s = "FIX target " + std::to_string(fix.target_id) + " window " + format_decimal(fix.window_start);
  static constexpr const char* axes[] = {"x", "y", "z"};
  for (Eigen::Index k = 0; k < fix.position.size() && k < 3; ++k) {
    s += std::string(" ") + axes[k] + " " + format_decimal(fix.position(k));
  }
  s += " anchors ";
  for (std::size_t k = 0; k < fix.used_anchor_ids.size(); ++k) {
    if (k > 0) s += ',';
    s += std::to_string(fix.used_anchor_ids[k]);
  }
  s += " rms " + format_decimal(fix.residual_rms);
  return s;
}

struct NoFix {
  int target_id = 0;
  std::optional<double> window_start;

  bool operator==(const NoFix&) const = default;
};

inline std::string format_nofix(const NoFix& nf) {
  std::string s = "NOFIX target " + std::to_string(nf.target_id);
  if (nf.window_start) s += " window " + format_decimal(*nf.window_start);
  return s;
}

inline LocationFix parse_fix_line(std::string_view text, std::size_t line = 0) {
  const auto tok = detail::split_ws(text);
  if (tok.empty() || tok[0] != "FIX") throw ParseError(line, "kind", "expected a FIX record");
  if (tok.size() != 13 && tok.size() != 15) {
    throw ParseError(line, "", "FIX record needs 13 or 15 fields, got " + std::to_string(tok.size()));
  }
  const bool has_z = tok.size() == 15;
  LocationFix fix;
  detail::expect_keyword(tok[1], "target", line);
  fix.target_id = detail::parse_number<int>(tok[2], line, "target");
  detail::expect_keyword(tok[3], "window", line);
  fix.window_start = detail::parse_number<double>(tok[4], line, "window");
  fix.position = Vector(has_z ? 3 : 2);
  detail::expect_keyword(tok[5], "x", line);
  fix.position(0) = detail::parse_number<double>(tok[6], line, "x");
  detail::expect_keyword(tok[7], "y", line);
  fix.position(1) = detail::parse_number<double>(tok[8], line, "y");
  std::size_t k = 9;
  if (has_z) {
    detail::expect_keyword(tok[9], "z", line);
    fix.position(2) = detail::parse_number<double>(tok[10], line, "z");
    k = 11;
  }
  detail::expect_keyword(tok[k], "anchors", line);
  fix.used_anchor_ids = detail::parse_id_list(tok[k + 1], line);
  detail::expect_keyword(tok[k + 2], "rms", line);
  fix.residual_rms = detail::parse_number<double>(tok[k + 3], line, "rms");
  return fix;
}

inline NoFix parse_nofix_line(std::string_view text, std::size_t line = 0) {
  const auto tok = detail::split_ws(text);
  if (tok.empty() || tok[0] != "NOFIX") throw ParseError(line, "kind", "expected a NOFIX record");
  if (tok.size() != 3 && tok.size() != 5) throw ParseError(line, "", "NOFIX record needs 3 or 5 fields");
  NoFix nf;
  detail::expect_keyword(tok[1], "target", line);
  nf.target_id = detail::parse_number<int>(tok[2], line, "target");
  if (tok.size() == 5) {
    detail::expect_keyword(tok[3], "window", line);
    nf.window_start = detail::parse_number<double>(tok[4], line, "window");
  }
  return nf;
}

using FixRecord = std::variant<LocationFix, NoFix>;

inline std::vector<FixRecord> parse_fixes(std::istream& in) {
  std::vector<FixRecord> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (detail::is_blank_or_comment(text)) continue;
    const auto tok = detail::split_ws(text);
    if (tok[0] == "FIX") {
      out.emplace_back(parse_fix_line(text, line));
    } else if (tok[0] == "NOFIX") {
      out.emplace_back(parse_nofix_line(text, line));
    } else {
      throw ParseError(line, "kind", "expected FIX or NOFIX, got '" + std::string(tok[0]) + "'");
    }
  }
  return out;
}

// ---- ground truth ------------------------------------------------------------------------------

inline std::string format_truth(const TargetPoint& t) {
  std::string s = "TRUTH target " + std::to_string(t.id) + " label " + t.label;
  static constexpr const char* axes[] = {"x", "y", "z"};
  for (Eigen::Index k = 0; k < t.position.size() && k < 3; ++k) {
    s += std::string(" ") + axes[k] + " " + format_decimal(t.position(k));
  }
  return s;
}

inline std::vector<TargetPoint> parse_truth(std::istream& in) {
  std::vector<TargetPoint> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (detail::is_blank_or_comment(text)) continue;
    const auto tok = detail::split_ws(text);
    if (tok[0] != "TRUTH") throw ParseError(line, "kind", "expected a TRUTH record");
    if (tok.size() != 9 && tok.size() != 11) throw ParseError(line, "", "TRUTH record needs 9 or 11 fields");
    TargetPoint t;
    detail::expect_keyword(tok[1], "target", line);
    t.id = detail::parse_number<int>(tok[2], line, "target");
    detail::expect_keyword(tok[3], "label", line);
    t.label = std::string(tok[4]);
    t.position = Vector(tok.size() == 11 ? 3 : 2);
    detail::expect_keyword(tok[5], "x", line);
    t.position(0) = detail::parse_number<double>(tok[6], line, "x");
    detail::expect_keyword(tok[7], "y", line);
    t.position(1) = detail::parse_number<double>(tok[8], line, "y");
    if (tok.size() == 11) {
      detail::expect_keyword(tok[9], "z", line);
      t.position(2) = detail::parse_number<double>(tok[10], line, "z");
    }
    out.push_back(std::move(t));
  }
  return out;
}

// ---- JSON: testbed and scenario ----------------------------------------------------------------

namespace detail {

inline Vector vector_from_json(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v(static_cast<Eigen::Index>(k)) = j.at(k).get<double>();
  return v;
}

inline nlohmann::json vector_to_json(const Vector& v) {
  auto j = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) j.push_back(v(k));
  return j;
}

inline Vector point_from_json(const nlohmann::json& j) {
  if (j.contains("z")) return make_vector(j.at("x").get<double>(), j.at("y").get<double>(), j.at("z").get<double>());
  return make_vector(j.at("x").get<double>(), j.at("y").get<double>());
}

inline void point_to_json(nlohmann::json& j, const Vector& p) {
  j["x"] = p(0);
  j["y"] = p(1);
  if (p.size() > 2) j["z"] = p(2);
}

template <typename F>
auto with_json_context(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, what, e.what());
  }
}

}  // namespace detail

inline TestbedConfig testbed_from_json(const nlohmann::json& j) {
  return detail::with_json_context("testbed", [&] {
    TestbedConfig cfg;
    cfg.dimension = j.value("dimension", 2);
    cfg.speed_of_sound = j.value("speed_of_sound", kDefaultSpeedOfSound);
    cfg.bounds.min = detail::vector_from_json(j.at("bounds").at("min"));
    cfg.bounds.max = detail::vector_from_json(j.at("bounds").at("max"));
    for (const auto& a : j.at("anchors")) {
      cfg.anchors.push_back({a.at("id").get<int>(), detail::point_from_json(a), a.value("sep", 0.0)});
    }
    cfg.validate();
    return cfg;
  });
}

inline nlohmann::json testbed_to_json(const TestbedConfig& cfg) {
  nlohmann::json j;
  j["dimension"] = cfg.dimension;
  j["speed_of_sound"] = cfg.speed_of_sound;
  j["bounds"] = {{"min", detail::vector_to_json(cfg.bounds.min)}, {"max", detail::vector_to_json(cfg.bounds.max)}};
  j["anchors"] = nlohmann::json::array();
  for (const auto& a : cfg.anchors) {
    nlohmann::json ja;
    ja["id"] = a.id;
    detail::point_to_json(ja, a.position);
    ja["sep"] = a.mic_speaker_separation;
    j["anchors"].push_back(ja);
  }
  return j;
}

inline SimScenario scenario_from_json(const nlohmann::json& j) {
  return detail::with_json_context("scenario", [&] {
    SimScenario sc;
    sc.testbed = testbed_from_json(j.at("testbed"));
    int next_id = 1;
    for (const auto& t : j.at("targets")) {
      TargetPoint tp;
      tp.id = t.value("id", next_id);
      tp.label = t.value("label", "T" + std::to_string(tp.id));
      if (tp.label.empty() || tp.label.find_first_of(" \t") != std::string::npos) {
        throw ParseError(0, "label", "target labels must be non-empty and contain no whitespace");
      }
      tp.position = detail::point_from_json(t);
      next_id = tp.id + 1;
      sc.targets.push_back(std::move(tp));
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      sc.schedule.slot_length = s.value("slot_length", sc.schedule.slot_length);
      sc.schedule.beacon_duration = s.value("beacon_duration", sc.schedule.beacon_duration);
      const auto mode = s.value("mode", std::string("tdma"));
      if (mode == "tdma") {
        sc.schedule.mode = ScheduleMode::tdma;
      } else if (mode == "random-backoff") {
        sc.schedule.mode = ScheduleMode::random_backoff;
      } else {
        throw ParseError(0, "schedule.mode", "expected 'tdma' or 'random-backoff'");
      }
      sc.schedule.backoff_max = s.value("backoff_max", 0.0);
      sc.schedule.cycle_slots = s.value("cycle_slots", 0);
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      sc.noise.timestamp_jitter_sigma = n.value("jitter_sigma", kDefaultJitterSigma);
      sc.noise.miss_detect_prob = n.value("miss_detect_prob", 0.0);
      for (const auto& b : n.value("nlos", nlohmann::json::array())) {
        const NodeId rx{detail::parse_kind(b.at("receiver_kind").get<std::string>(), 0), b.at("receiver").get<int>()};
        sc.noise.nlos_bias[{b.at("source").get<int>(), rx}] = b.at("bias").get<double>();
      }
      for (const auto& o : n.value("clock_offsets", nlohmann::json::array())) {
        const NodeId node{detail::parse_kind(o.at("kind").get<std::string>(), 0), o.at("id").get<int>()};
        sc.noise.clock_offset[node] = o.at("offset").get<double>();
      }
    }
    sc.seed = j.value("seed", std::uint64_t{1});
    sc.duration = j.value("duration", kDefaultWindowSeconds);
    sc.validate();
    return sc;
  });
}

inline nlohmann::json scenario_to_json(const SimScenario& sc) {
  nlohmann::json j;
  j["testbed"] = testbed_to_json(sc.testbed);
  j["targets"] = nlohmann::json::array();
  for (const auto& t : sc.targets) {
    nlohmann::json jt;
    jt["id"] = t.id;
    jt["label"] = t.label;
    detail::point_to_json(jt, t.position);
    j["targets"].push_back(jt);
  }
  j["schedule"] = {{"slot_length", sc.schedule.slot_length},
                   {"beacon_duration", sc.schedule.beacon_duration},
                   {"mode", sc.schedule.mode == ScheduleMode::tdma ? "tdma" : "random-backoff"},
                   {"backoff_max", sc.schedule.backoff_max},
                   {"cycle_slots", sc.schedule.cycle_slots}};
  nlohmann::json n;
  n["jitter_sigma"] = sc.noise.timestamp_jitter_sigma;
  n["miss_detect_prob"] = sc.noise.miss_detect_prob;
  n["nlos"] = nlohmann::json::array();
  for (const auto& [link, bias] : sc.noise.nlos_bias) {
    n["nlos"].push_back(
        {{"source", link.first}, {"receiver_kind", to_string(link.second.kind)}, {"receiver", link.second.id}, {"bias", bias}});
  }
  n["clock_offsets"] = nlohmann::json::array();
  for (const auto& [node, offset] : sc.noise.clock_offset) {
    n["clock_offsets"].push_back({{"kind", to_string(node.kind)}, {"id", node.id}, {"offset", offset}});
  }
  j["noise"] = n;
  j["seed"] = sc.seed;
  j["duration"] = sc.duration;
  return j;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(0, "", path + ": " + e.what());
  }
}

inline TestbedConfig load_testbed(const std::string& path) { return testbed_from_json(read_json_file(path)); }
inline SimScenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

}  // namespace beaconloc
