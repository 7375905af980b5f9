#pragma once

#include "beaconloc/formats.hpp"
#include "beaconloc/trilateration.hpp"
#include "beaconloc/windowing.hpp"

#include <optional>
#include <span>
#include <vector>

namespace beaconloc {

struct WindowingOptions {
  double length = kDefaultWindowSeconds;
  std::optional<double> origin;  // defaults to each target's first timestamp
};

/// Windows a (possibly multi-target) stream per target and locates every window.
/// Records come out ordered by target id, then window start.
inline std::vector<FixRecord> locate_stream(std::span<const BeaconObservation> stream, const TestbedConfig& config,
                                            const SolverParams& params, const WindowingOptions& windowing = {}) {
  std::vector<FixRecord> out;
  for (const auto& [target, target_stream] : split_by_target(stream)) {
    for (const auto& window : window_observations(target_stream, windowing.length, windowing.origin)) {
      if (auto fix = locate(window, config, params)) {
        out.emplace_back(std::move(*fix));
      } else {
        out.emplace_back(NoFix{target, window.start_time});
      }
    }
  }
  return out;
}

inline std::vector<LocationFix> fixes_only(std::span<const FixRecord> records) {
  std::vector<LocationFix> out;
  for (const auto& r : records) {
    if (const auto* fix = std::get_if<LocationFix>(&r)) out.push_back(*fix);
  }
  return out;
}

inline std::string format_record(const FixRecord& r) {
  if (const auto* fix = std::get_if<LocationFix>(&r)) return format_fix(*fix);
  return format_nofix(std::get<NoFix>(r));
}

}  // namespace beaconloc
