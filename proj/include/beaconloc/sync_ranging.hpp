#pragma once

// Time-offset estimation and ranging between asynchronous full-duplex anchors.
//
// For a pair (A, B) where A's beacon is followed by B's beacon, each anchor measures the interval
// between the two receptions on its own clock:
//
//   interval_a = t_A(beacon B) - t_A(beacon A)
//   interval_b = t_B(beacon B) - t_B(beacon A)
//
// Both formulas below use only same-node differences, so per-node clock offsets cancel. They stay
// valid when B actually transmitted first: the offset simply comes out negative.

#include "beaconloc/model.hpp"
#include "beaconloc/windowing.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace beaconloc {

struct PairIntervals {
  int anchor_a = 0;
  int anchor_b = 0;
  double interval_a = 0.0;  // seconds
  double interval_b = 0.0;  // seconds
  double sep_a = 0.0;       // mic-speaker separation of A, meters
  double sep_b = 0.0;
};

namespace detail {
inline void require_positive_speed(double c) {
  if (!(c > 0.0) || !std::isfinite(c)) throw std::invalid_argument("speed of sound must be positive");
}
}  // namespace detail

// Emission time of B's beacon minus emission time of A's beacon, assuming d_AB == d_BA.
inline double estimate_time_offset(const PairIntervals& p, double c) {
  detail::require_positive_speed(c);
  return (p.interval_b + p.interval_a) / 2.0 + (p.sep_a - p.sep_b) / (2.0 * c);
}

// Speaker-to-microphone distance between A and B, assuming d_AB == d_BA.
inline double estimate_anchor_distance(const PairIntervals& p, double c) {
  detail::require_positive_speed(c);
  return c / 2.0 * (p.interval_a - p.interval_b) + (p.sep_a + p.sep_b) / 2.0;
}

// Builds the intervals for (a, b) from two selected beacons; empty when a cross reception is missing.
inline std::optional<PairIntervals> pair_intervals(const SelectedBeacon& a, const SelectedBeacon& b, double sep_a,
                                                   double sep_b) {
  const auto a_hears_b = b.timestamp_at(a.anchor_id);
  const auto b_hears_a = a.timestamp_at(b.anchor_id);
  if (!a_hears_b || !b_hears_a) return std::nullopt;
  return PairIntervals{a.anchor_id, b.anchor_id, *a_hears_b - a.self_timestamp(), b.self_timestamp() - *b_hears_a,
                       sep_a, sep_b};
}

// Symmetric table of known inter-anchor distances, keyed by ordered id pairs.
using DistanceTable = std::map<std::pair<int, int>, double>;

inline DistanceTable ground_truth_distances(const TestbedConfig& config) {
  DistanceTable table;
  for (const auto& a : config.anchors) {
    for (const auto& b : config.anchors) {
      if (a.id == b.id) continue;
      table[{a.id, b.id}] = distance(config.position(a.id), config.position(b.id));
    }
  }
  return table;
}

struct PairRanging {
  int peer = 0;
  bool available = false;  // both cross receptions present
  bool valid = false;      // available and ranging error within threshold
  double distance_estimate = std::numeric_limits<double>::quiet_NaN();
  double time_offset = std::numeric_limits<double>::quiet_NaN();
  double ranging_error = std::numeric_limits<double>::quiet_NaN();
};

// Everything computed for one candidate time reference.
struct ReferenceEvaluation {
  int reference = 0;
  std::map<int, PairRanging> peers;
  int valid_count = 1;  // valid peers plus the reference itself
  double average_error = std::numeric_limits<double>::infinity();
  bool qualifies = false;
};

struct OffsetSet {
  int reference_anchor_id = 0;
  std::map<int, double> offsets;  // anchor id -> emission offset relative to the reference, seconds
  std::vector<int> valid_anchor_ids;  // ascending, includes the reference
  double avg_ranging_error = 0.0;     // meters
};

// Averages closer than this are treated as ties and resolved toward the lower anchor id.
inline constexpr double kReferenceTieTolerance = 1e-9;  // meters

struct AnchorSeparations : std::map<int, double> {
  double of(int id) const {
    auto it = find(id);
    return it == end() ? 0.0 : it->second;
  }
};

inline AnchorSeparations separations(const TestbedConfig& config) {
  AnchorSeparations s;
  for (const auto& a : config.anchors) s[a.id] = a.mic_speaker_separation;
  return s;
}

/// Ranges every selected anchor against every other one, once per candidate reference.
inline std::vector<ReferenceEvaluation> evaluate_references(const BeaconSelection& selection,
                                                            const DistanceTable& truth,
                                                            const AnchorSeparations& seps,
                                                            const SolverParams& params, double c) {
  std::vector<ReferenceEvaluation> out;
  out.reserve(selection.size());
  for (const auto& [ref_id, ref_beacon] : selection) {
    ReferenceEvaluation eval;
    eval.reference = ref_id;
    double error_sum = 0.0;
    int valid_peers = 0;
    for (const auto& [peer_id, peer_beacon] : selection) {
      if (peer_id == ref_id) continue;
      PairRanging pr;
      pr.peer = peer_id;
      const auto intervals = pair_intervals(ref_beacon, peer_beacon, seps.of(ref_id), seps.of(peer_id));
      const auto known = truth.find({ref_id, peer_id});
      if (intervals && known != truth.end()) {
        pr.available = true;
        pr.distance_estimate = estimate_anchor_distance(*intervals, c);
        pr.time_offset = estimate_time_offset(*intervals, c);
        pr.ranging_error = std::abs(pr.distance_estimate - known->second);
        pr.valid = pr.ranging_error <= params.ranging_err_thr;
        if (pr.valid) {
          error_sum += pr.ranging_error;
          ++valid_peers;
        }
      }
      eval.peers.emplace(peer_id, pr);
    }
    eval.valid_count = valid_peers + 1;
    if (valid_peers > 0) eval.average_error = error_sum / valid_peers;
    eval.qualifies = valid_peers > 0 && eval.valid_count >= params.num_anchors_req;
    out.push_back(std::move(eval));
  }
  return out;
}

/// Picks the time reference whose valid pairwise ranging errors have the smallest average, after
/// discarding every pair whose ranging error exceeds `params.ranging_err_thr`. Returns the offsets
/// of all anchors validly paired with that reference, or nothing when no reference keeps
/// `params.num_anchors_req` anchors (itself included).
inline std::optional<OffsetSet> detect_outlier_offsets(const BeaconSelection& selection, const DistanceTable& truth,
                                                       const AnchorSeparations& seps, const SolverParams& params,
                                                       double c) {
  detail::require_positive_speed(c);
  const auto evaluations = evaluate_references(selection, truth, seps, params, c);

  const ReferenceEvaluation* best = nullptr;
  for (const auto& eval : evaluations) {  // ascending reference id
    if (!eval.qualifies) continue;
    if (best == nullptr || eval.average_error < best->average_error - kReferenceTieTolerance) best = &eval;
  }
  if (best == nullptr) return std::nullopt;

  OffsetSet set;
  set.reference_anchor_id = best->reference;
  set.avg_ranging_error = best->average_error;
  set.offsets[best->reference] = 0.0;
  for (const auto& [peer, pr] : best->peers) {
    if (pr.valid) set.offsets[peer] = pr.time_offset;
  }
  for (const auto& [id, offset] : set.offsets) set.valid_anchor_ids.push_back(id);
  return set;
}

inline std::optional<OffsetSet> detect_outlier_offsets(const BeaconSelection& selection, const TestbedConfig& config,
                                                       const SolverParams& params) {
  return detect_outlier_offsets(selection, ground_truth_distances(config), separations(config), params,
                                config.speed_of_sound);
}

}  // namespace beaconloc
