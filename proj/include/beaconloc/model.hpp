#pragma once

#include "beaconloc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace beaconloc {

inline constexpr double kDefaultSpeedOfSound = 343.0;  // m/s, dry air at 20 C
inline constexpr double kDefaultWindowSeconds = 18.0;

enum class ReceiverKind { anchor, target };

inline const char* to_string(ReceiverKind kind) { return kind == ReceiverKind::anchor ? "anchor" : "target"; }

// Identifies a receiving node. Anchor ids and target ids live in separate namespaces.
struct NodeId {
  ReceiverKind kind = ReceiverKind::anchor;
  int id = 0;

  auto operator<=>(const NodeId&) const = default;
  bool operator==(const NodeId&) const = default;
};

struct AnchorConfig {
  int id = 0;
  Vector position;                     // meters; z may be present even in 2D mode
  double mic_speaker_separation = 0.0; // meters
};

struct TestbedConfig {
  std::vector<AnchorConfig> anchors;
  Bounds bounds;
  double speed_of_sound = kDefaultSpeedOfSound;
  int dimension = 2;

  int num_anchors_req() const { return dimension == 3 ? 4 : 3; }

  const AnchorConfig* find(int id) const {
    auto it = std::find_if(anchors.begin(), anchors.end(), [id](const AnchorConfig& a) { return a.id == id; });
    return it == anchors.end() ? nullptr : &*it;
  }

  const AnchorConfig& anchor(int id) const {
    const auto* a = find(id);
    if (a == nullptr) throw std::out_of_range("unknown anchor id " + std::to_string(id));
    return *a;
  }

  // Anchor position in the solver's dimension (2D mode drops z).
  Vector position(int id) const { return project(anchor(id).position, dimension); }

  Bounds solver_bounds() const { return bounds.projected(dimension); }

  std::vector<int> anchor_ids() const {
    std::vector<int> ids;
    ids.reserve(anchors.size());
    for (const auto& a : anchors) ids.push_back(a.id);
    std::sort(ids.begin(), ids.end());
    return ids;
  }

  // Everything except the solver's minimum anchor count; enough for simulation.
  void validate_layout() const {
    if (dimension != 2 && dimension != 3) throw std::invalid_argument("testbed: dimension must be 2 or 3");
    if (!(speed_of_sound > 0.0) || !std::isfinite(speed_of_sound)) {
      throw std::invalid_argument("testbed: speed_of_sound must be positive");
    }
    bounds.validate();
    if (bounds.dimension() < dimension) throw std::invalid_argument("testbed: bounds dimension below solver dimension");
    std::set<int> seen;
    const auto box = solver_bounds();
    for (const auto& a : anchors) {
      if (!seen.insert(a.id).second) throw std::invalid_argument("testbed: duplicate anchor id " + std::to_string(a.id));
      if (a.position.size() < dimension || !all_finite(a.position)) {
        throw std::invalid_argument("testbed: anchor " + std::to_string(a.id) + " has an invalid position");
      }
      if (!(a.mic_speaker_separation >= 0.0)) {
        throw std::invalid_argument("testbed: anchor " + std::to_string(a.id) + " has negative separation");
      }
      if (!box.contains(project(a.position, dimension))) {
        throw std::invalid_argument("testbed: anchor " + std::to_string(a.id) + " lies outside bounds");
      }
    }
  }

  void validate() const {
    validate_layout();
    if (static_cast<int>(anchors.size()) < num_anchors_req()) {
      throw std::invalid_argument("testbed: need at least " + std::to_string(num_anchors_req()) + " anchors");
    }
  }
};

// One decoded beacon: `receiver` heard anchor `source_anchor_id`'s beacon `seqno` at local time `timestamp`.
struct BeaconObservation {
  int receiver_id = 0;
  ReceiverKind receiver_kind = ReceiverKind::anchor;
  int source_anchor_id = 0;
  std::uint64_t seqno = 0;
  double timestamp = 0.0;  // seconds, receiver's local clock

  NodeId receiver() const { return {receiver_kind, receiver_id}; }

  // Deduplication key; two observations with equal keys describe the same decode event.
  auto key() const { return std::tuple(receiver_kind, receiver_id, source_anchor_id, seqno); }

  bool operator==(const BeaconObservation&) const = default;
};

struct ObservationWindow {
  double start_time = 0.0;
  double length = kDefaultWindowSeconds;
  std::vector<BeaconObservation> observations;
};

enum class PairingMode { all_pairs, consecutive };

struct SolverParams {
  double ranging_err_thr = 0.5;  // meters
  double ddoa_err_thr = 0.3;     // meters
  int num_anchors_req = 3;
  PairingMode pairing_mode = PairingMode::all_pairs;
  bool outlier_removal = true;
  int gn_max_iters = 100;
  double gn_tolerance = 1e-6;  // meters

  static SolverParams variant(PairingMode mode, bool robust, int dimension = 2) {
    SolverParams p;
    p.pairing_mode = mode;
    p.outlier_removal = robust;
    p.num_anchors_req = dimension == 3 ? 4 : 3;
    return p;
  }

  void validate() const {
    if (!(ranging_err_thr > 0.0) || !(ddoa_err_thr > 0.0)) throw std::invalid_argument("params: thresholds must be > 0");
    if (num_anchors_req != 3 && num_anchors_req != 4) throw std::invalid_argument("params: numAnchorsReq must be 3 or 4");
    if (gn_max_iters < 1) throw std::invalid_argument("params: gn_max_iters must be >= 1");
    if (!(gn_tolerance > 0.0)) throw std::invalid_argument("params: gn_tolerance must be > 0");
  }
};

// The four evaluated algorithm variants, in their conventional order.
struct Variant {
  const char* name;
  PairingMode mode;
  bool robust;
};

inline constexpr Variant kVariants[] = {
    {"all-raw", PairingMode::all_pairs, false},
    {"consec-raw", PairingMode::consecutive, false},
    {"all-robust", PairingMode::all_pairs, true},
    {"consec-robust", PairingMode::consecutive, true},
};

inline std::optional<Variant> parse_variant(const std::string& name) {
  for (const auto& v : kVariants) {
    if (name == v.name) return v;
  }
  return std::nullopt;
}

// One round of Gauss-Newton + bad-pair counting inside the robust loop.
struct RemovalRound {
  Vector position;
  std::vector<int> anchors;           // participating anchors this round, ascending
  std::map<int, int> bad_pair_counts; // anchor id -> number of pairs over ddoaErrThr
};

struct SolveDiagnostics {
  int iterations = 0;            // Gauss-Newton iterations of the final solve
  double final_objective = 0.0;  // m^2
  std::vector<int> removed_anchors;
  std::map<int, int> bad_pair_counts;  // last round
  std::vector<RemovalRound> rounds;
};

struct LocationFix {
  int target_id = 0;
  Vector position;
  std::vector<int> used_anchor_ids;  // ascending
  int reference_anchor_id = 0;
  double residual_rms = 0.0;  // meters
  std::vector<int> removed_anchor_ids;  // in removal order
  double window_start = 0.0;
  SolveDiagnostics diagnostics;
};

}  // namespace beaconloc
