#pragma once

// Event-level simulator of a beacon deployment: TDMA (or backoff) emissions, straight-line acoustic
// propagation to every anchor microphone and every target, constant per-node clock offsets, Gaussian
// timestamp jitter, per-link NLOS delay and random miss-detection. Output is the same observation
// stream the location server ingests, plus the ground truth needed to check it.

#include "beaconloc/model.hpp"
#include "beaconloc/rng.hpp"
#include "beaconloc/trilateration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace beaconloc {

inline constexpr double kDefaultJitterSigma = 20e-6;  // seconds

struct NoiseModel {
  double timestamp_jitter_sigma = kDefaultJitterSigma;
  double miss_detect_prob = 0.0;
  std::map<std::pair<int, NodeId>, double> nlos_bias;  // (source anchor, receiver) -> extra delay, s
  std::map<NodeId, double> clock_offset;               // receiver -> constant clock offset, s

  static NoiseModel noiseless() {
    NoiseModel n;
    n.timestamp_jitter_sigma = 0.0;
    return n;
  }

  double bias(int source, NodeId receiver) const {
    auto it = nlos_bias.find({source, receiver});
    return it == nlos_bias.end() ? 0.0 : it->second;
  }

  double offset(NodeId node) const {
    auto it = clock_offset.find(node);
    return it == clock_offset.end() ? 0.0 : it->second;
  }

  void validate() const {
    if (!(timestamp_jitter_sigma >= 0.0)) throw std::invalid_argument("noise: jitter sigma must be >= 0");
    if (!(miss_detect_prob >= 0.0 && miss_detect_prob <= 1.0)) {
      throw std::invalid_argument("noise: miss-detect probability must lie in [0, 1]");
    }
    for (const auto& [link, b] : nlos_bias) {
      if (!(b >= 0.0)) throw std::invalid_argument("noise: NLOS bias must be >= 0");
    }
    for (const auto& [node, o] : clock_offset) {
      if (!std::isfinite(o)) throw std::invalid_argument("noise: clock offset must be finite");
    }
  }
};

enum class ScheduleMode { tdma, random_backoff };

struct ScheduleConfig {
  double slot_length = 1.0;       // seconds
  double beacon_duration = 0.44;  // seconds
  ScheduleMode mode = ScheduleMode::tdma;
  double backoff_max = 0.0;  // seconds, random_backoff only
  int cycle_slots = 0;       // slots per round; 0 means one per anchor

  int slots_per_round(std::size_t anchors) const {
    return cycle_slots > 0 ? cycle_slots : static_cast<int>(anchors);
  }

  void validate(std::size_t anchors) const {
    if (!(slot_length > 0.0)) throw std::invalid_argument("schedule: slot length must be > 0");
    if (!(beacon_duration >= 0.0)) throw std::invalid_argument("schedule: beacon duration must be >= 0");
    if (mode == ScheduleMode::tdma && !(beacon_duration < slot_length)) {
      throw std::invalid_argument("schedule: beacon duration must be shorter than the slot");
    }
    if (!(backoff_max >= 0.0)) throw std::invalid_argument("schedule: backoff must be >= 0");
    if (cycle_slots != 0 && cycle_slots < static_cast<int>(anchors)) {
      throw std::invalid_argument("schedule: cycle has fewer slots than anchors");
    }
  }
};

struct TargetPoint {
  int id = 1;
  std::string label;
  Vector position;
};

struct SimScenario {
  TestbedConfig testbed;
  std::vector<TargetPoint> targets;
  ScheduleConfig schedule;
  NoiseModel noise;
  std::uint64_t seed = 1;
  double duration = kDefaultWindowSeconds;  // seconds

  void validate() const {
    testbed.validate_layout();
    if (testbed.anchors.empty()) throw std::invalid_argument("scenario: no anchors");
    schedule.validate(testbed.anchors.size());
    noise.validate();
    if (!(duration > 0.0)) throw std::invalid_argument("scenario: duration must be > 0");
    const auto box = testbed.solver_bounds();
    std::set<int> ids;
    for (const auto& t : targets) {
      if (!ids.insert(t.id).second) throw std::invalid_argument("scenario: duplicate target id " + std::to_string(t.id));
      if (!box.contains(project(t.position, testbed.dimension))) {
        throw std::invalid_argument("scenario: target '" + t.label + "' lies outside bounds");
      }
    }
  }
};

struct Emission {
  int anchor_id = 0;
  std::uint64_t seqno = 0;
  double time = 0.0;  // true emission time, seconds

  bool operator==(const Emission&) const = default;
};

struct GroundTruth {
  std::vector<Emission> emissions;
  AnchorPositions anchors;
  std::vector<TargetPoint> targets;
  double speed_of_sound = kDefaultSpeedOfSound;

  const TargetPoint& target(int id) const {
    for (const auto& t : targets) {
      if (t.id == id) return t;
    }
    throw std::out_of_range("unknown target id " + std::to_string(id));
  }
};

struct SimulationResult {
  std::vector<BeaconObservation> observations;
  GroundTruth truth;
};

/// Emission plan: anchor k (by position in `anchor_ids`) transmits at
/// (round * slots_per_round + k) * slot_length, with seqno = round. Only complete rounds that fit
/// inside `duration` are scheduled. In random_backoff mode each emission is delayed by U[0, backoff_max).
inline std::vector<Emission> generate_schedule(const ScheduleConfig& cfg, const std::vector<int>& anchor_ids,
                                               double duration, std::uint64_t seed) {
  cfg.validate(anchor_ids.size());
  std::vector<Emission> out;
  if (anchor_ids.empty()) return out;
  const int slots = cfg.slots_per_round(anchor_ids.size());
  const double round_length = slots * cfg.slot_length;
  for (std::uint64_t round = 0; static_cast<double>(round + 1) * round_length <= duration; ++round) {
    for (std::size_t k = 0; k < anchor_ids.size(); ++k) {
      double t = (static_cast<double>(round) * slots + static_cast<double>(k)) * cfg.slot_length;
      if (cfg.mode == ScheduleMode::random_backoff) {
        auto rng = make_stream(seed, StreamTag::backoff, {static_cast<std::uint64_t>(anchor_ids[k]), round});
        t += rng.uniform() * cfg.backoff_max;
      }
      out.push_back({anchor_ids[k], round, t});
    }
  }
  return out;
}

/// Runs the scenario. Every emission reaches every anchor microphone (the source's own included,
/// across its mic-speaker separation) and every target at T + dist/c + NLOS bias + clock offset + jitter. Self-receptions are never
/// missed and never NLOS-delayed. The result depends only on the scenario and its seed.
inline SimulationResult simulate(const SimScenario& scenario) {
  scenario.validate();
  const auto& tb = scenario.testbed;
  const auto& noise = scenario.noise;
  const double c = tb.speed_of_sound;

  SimulationResult result;
  result.truth.speed_of_sound = c;
  for (const auto& a : tb.anchors) result.truth.anchors[a.id] = tb.position(a.id);
  for (auto t : scenario.targets) {
    t.position = project(t.position, tb.dimension);
    result.truth.targets.push_back(std::move(t));
  }
  result.truth.emissions = generate_schedule(scenario.schedule, tb.anchor_ids(), scenario.duration, scenario.seed);

  auto receive = [&](const Emission& e, NodeId rx, const Vector& rx_pos) {
    const bool self = rx.kind == ReceiverKind::anchor && rx.id == e.anchor_id;
    const auto ids = {static_cast<std::uint64_t>(e.anchor_id), e.seqno, static_cast<std::uint64_t>(rx.kind),
                      static_cast<std::uint64_t>(static_cast<std::int64_t>(rx.id))};
    if (!self && noise.miss_detect_prob > 0.0) {
      auto miss = make_stream(scenario.seed, StreamTag::miss_detect, ids);
      if (miss.uniform() < noise.miss_detect_prob) return;
    }
    // An anchor hears itself across its own speaker-to-microphone gap.
    const double path = self ? tb.anchor(e.anchor_id).mic_speaker_separation
                             : distance(result.truth.anchors.at(e.anchor_id), rx_pos);
    double t = e.time + path / c;
    if (!self) t += noise.bias(e.anchor_id, rx);
    t += noise.offset(rx);
    if (noise.timestamp_jitter_sigma > 0.0) {
      auto jitter = make_stream(scenario.seed, StreamTag::jitter, ids);
      t += noise.timestamp_jitter_sigma * jitter.normal();
    }
    result.observations.push_back({rx.id, rx.kind, e.anchor_id, e.seqno, t});
  };

  for (const auto& e : result.truth.emissions) {
    for (const auto& [id, pos] : result.truth.anchors) receive(e, {ReceiverKind::anchor, id}, pos);
    for (const auto& t : result.truth.targets) receive(e, {ReceiverKind::target, t.id}, t.position);
  }
  std::stable_sort(result.observations.begin(), result.observations.end(),
                   [](const BeaconObservation& a, const BeaconObservation& b) {
                     return std::tuple(a.timestamp, a.receiver_kind, a.receiver_id) <
                            std::tuple(b.timestamp, b.receiver_kind, b.receiver_id);
                   });
  return result;
}

// Exact TDoA of anchors (i, j) at position x: (dist(j, x) - dist(i, x)) / c.
inline double oracle_tdoa(const GroundTruth& truth, int i, int j, const Vector& x) {
  return (distance(truth.anchors.at(j), x) - distance(truth.anchors.at(i), x)) / truth.speed_of_sound;
}

}  // namespace beaconloc
