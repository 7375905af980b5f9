#pragma once

#include "beaconloc/model.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace beaconloc {

// Splits a multi-target stream into one stream per target. Anchor-side observations are shared,
// so each per-target stream carries all of them in original order.
inline std::map<int, std::vector<BeaconObservation>> split_by_target(std::span<const BeaconObservation> stream) {
  std::map<int, std::vector<BeaconObservation>> out;
  for (const auto& obs : stream) {
    if (obs.receiver_kind == ReceiverKind::target) out[obs.receiver_id];
  }
  for (const auto& obs : stream) {
    if (obs.receiver_kind == ReceiverKind::target) {
      out[obs.receiver_id].push_back(obs);
    } else {
      for (auto& [id, s] : out) s.push_back(obs);
    }
  }
  return out;
}

/// Partitions a single-target stream into tumbling windows of `length` seconds on the target clock.
///
/// Window k covers [origin + k*length, origin + (k+1)*length). When `origin` is not given it is the
/// earliest target timestamp. Target observations are placed by their own timestamp; anchor-side
/// observations follow the target observation of the same (source, seqno) beacon. Anchor-side
/// observations of beacons the target never heard go with the nearest-seqno heard beacon of the same
/// source (or the first window), so every observation lands in exactly one window. Only non-empty
/// windows are returned, ordered by start time; within a window the stream order is preserved.
inline std::vector<ObservationWindow> window_observations(std::span<const BeaconObservation> stream, double length,
                                                          std::optional<double> origin = std::nullopt) {
  if (!(length > 0.0) || !std::isfinite(length)) throw std::invalid_argument("window length must be positive");

  std::optional<int> target_id;
  double first_target = std::numeric_limits<double>::infinity();
  for (const auto& obs : stream) {
    if (obs.receiver_kind != ReceiverKind::target) continue;
    if (target_id && *target_id != obs.receiver_id) {
      throw std::invalid_argument("window_observations: stream contains more than one target");
    }
    target_id = obs.receiver_id;
    first_target = std::min(first_target, obs.timestamp);
  }
  if (!target_id) return {};
  const double base = origin.value_or(first_target);

  auto index_of = [&](double t) { return static_cast<std::int64_t>(std::floor((t - base) / length)); };

  // (source, seqno) -> window index, from the target's receptions
  std::map<std::pair<int, std::uint64_t>, std::int64_t> beacon_window;
  for (const auto& obs : stream) {
    if (obs.receiver_kind == ReceiverKind::target) {
      beacon_window.emplace(std::pair(obs.source_anchor_id, obs.seqno), index_of(obs.timestamp));
    }
  }
  const std::int64_t first_index = std::min_element(beacon_window.begin(), beacon_window.end(), [](auto& a, auto& b) {
                                     return a.second < b.second;
                                   })->second;

  auto orphan_index = [&](int source, std::uint64_t seqno) {
    auto lo = beacon_window.lower_bound({source, 0});
    auto hi = beacon_window.upper_bound({source, std::numeric_limits<std::uint64_t>::max()});
    if (lo == hi) return first_index;
    auto at = beacon_window.upper_bound({source, seqno});
    if (at != lo) return std::prev(at)->second;  // largest heard seqno <= orphan seqno
    return at->second;
  };

  std::map<std::int64_t, ObservationWindow> windows;
  for (const auto& obs : stream) {
    std::int64_t k = 0;
    if (obs.receiver_kind == ReceiverKind::target) {
      k = index_of(obs.timestamp);
    } else if (auto it = beacon_window.find({obs.source_anchor_id, obs.seqno}); it != beacon_window.end()) {
      k = it->second;
    } else {
      k = orphan_index(obs.source_anchor_id, obs.seqno);
    }
    auto& w = windows[k];
    w.start_time = base + static_cast<double>(k) * length;
    w.length = length;
    w.observations.push_back(obs);
  }

  std::vector<ObservationWindow> out;
  out.reserve(windows.size());
  for (auto& [k, w] : windows) out.push_back(std::move(w));
  return out;
}

// The beacon chosen to represent one anchor inside a window.
struct SelectedBeacon {
  int anchor_id = 0;
  std::uint64_t seqno = 0;
  double target_timestamp = 0.0;
  std::map<int, double> heard_by;  // receiving anchor id (including the source) -> local timestamp

  double self_timestamp() const { return heard_by.at(anchor_id); }

  std::optional<double> timestamp_at(int anchor) const {
    auto it = heard_by.find(anchor);
    if (it == heard_by.end()) return std::nullopt;
    return it->second;
  }
};

using BeaconSelection = std::map<int, SelectedBeacon>;

/// Keeps, for every anchor, its latest beacon (by seqno) that was decoded both by the anchor itself
/// and by the target. Peer receptions travel with the beacon; a missing peer reception only
/// disables that anchor pair during offset detection. Duplicate decode records keep the earliest
/// timestamp so the result does not depend on observation order.
inline BeaconSelection select_per_anchor(const ObservationWindow& window) {
  struct Collected {
    std::optional<double> target;
    std::map<int, double> anchors;
  };
  std::optional<int> target_id;
  std::map<std::pair<int, std::uint64_t>, Collected> beacons;
  auto keep_min = [](std::optional<double>& slot, double t) {
    if (!slot || t < *slot) slot = t;
  };
  for (const auto& obs : window.observations) {
    auto& b = beacons[{obs.source_anchor_id, obs.seqno}];
    if (obs.receiver_kind == ReceiverKind::target) {
      if (target_id && *target_id != obs.receiver_id) {
        throw std::invalid_argument("select_per_anchor: window contains more than one target");
      }
      target_id = obs.receiver_id;
      keep_min(b.target, obs.timestamp);
    } else {
      auto [it, inserted] = b.anchors.emplace(obs.receiver_id, obs.timestamp);
      if (!inserted) it->second = std::min(it->second, obs.timestamp);
    }
  }

  BeaconSelection out;
  // map iteration is ascending in seqno per source, so later complete beacons overwrite earlier ones
  for (auto& [key, b] : beacons) {
    const auto [source, seqno] = key;
    if (!b.target || !b.anchors.contains(source)) continue;
    out[source] = SelectedBeacon{source, seqno, *b.target, b.anchors};
  }
  return out;
}

// Drops every observation emitted by, or received at, an anchor outside `keep`.
inline std::vector<BeaconObservation> filter_anchors(std::span<const BeaconObservation> stream,
                                                     const std::set<int>& keep) {
  std::vector<BeaconObservation> out;
  out.reserve(stream.size());
  for (const auto& obs : stream) {
    if (!keep.contains(obs.source_anchor_id)) continue;
    if (obs.receiver_kind == ReceiverKind::anchor && !keep.contains(obs.receiver_id)) continue;
    out.push_back(obs);
  }
  return out;
}

}  // namespace beaconloc
