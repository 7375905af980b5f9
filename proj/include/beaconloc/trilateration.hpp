#pragma once

#include "beaconloc/model.hpp"
#include "beaconloc/sync_ranging.hpp"
#include "beaconloc/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <vector>

namespace beaconloc {

// Pairwise measurement. Sign convention: at the true target position x,
//   ddoa == dist(anchor_j, x) - dist(anchor_i, x)
struct TdoaPair {
  int anchor_i = 0;
  int anchor_j = 0;
  double tdoa = 0.0;  // seconds
  double ddoa = 0.0;  // meters, c * tdoa
};

using AnchorPositions = std::map<int, Vector>;

// Arrival-time difference at the target between anchor k's and the reference r's beacons, with the
// emission offset removed. c times the result is dist(k, x) - dist(r, x).
inline double compute_tdoa(double t_target_k, double t_target_r, double offset_rk) {
  return t_target_k - t_target_r - offset_rk;
}

// Expands reference-relative TDoAs into every ordered pair (i, j), i != j:
//   tdoa_ij = tdoa_rj - tdoa_ri
inline std::vector<TdoaPair> permute_tdoas(int reference, const std::map<int, double>& tdoas_from_ref, double c) {
  auto ref = tdoas_from_ref.find(reference);
  if (ref == tdoas_from_ref.end() || ref->second != 0.0) {
    throw std::invalid_argument("permute_tdoas: reference must be present with zero TDoA");
  }
  std::vector<TdoaPair> out;
  out.reserve(tdoas_from_ref.size() * (tdoas_from_ref.size() - 1));
  for (const auto& [i, ti] : tdoas_from_ref) {
    for (const auto& [j, tj] : tdoas_from_ref) {
      if (i == j) continue;
      const double tdoa = tj - ti;
      out.push_back({i, j, tdoa, c * tdoa});
    }
  }
  return out;
}

/// Chooses which pairs enter the solve. `arrival_order` lists anchors by ascending target arrival.
/// all_pairs: every unordered pair once, oriented earlier-arrival first.
/// consecutive: neighbours in arrival order plus the wraparound pair (last, first).
inline std::vector<TdoaPair> select_pairs(std::span<const TdoaPair> pairs, PairingMode mode,
                                          std::span<const int> arrival_order) {
  std::map<int, std::size_t> rank;
  for (std::size_t k = 0; k < arrival_order.size(); ++k) rank[arrival_order[k]] = k;
  std::map<std::pair<int, int>, const TdoaPair*> by_key;
  for (const auto& p : pairs) {
    if (!rank.contains(p.anchor_i) || !rank.contains(p.anchor_j)) {
      throw std::invalid_argument("select_pairs: arrival order does not cover every anchor");
    }
    by_key[{p.anchor_i, p.anchor_j}] = &p;
  }

  std::vector<TdoaPair> out;
  if (mode == PairingMode::all_pairs) {
    for (const auto& p : pairs) {
      if (rank[p.anchor_i] < rank[p.anchor_j]) out.push_back(p);
    }
    std::sort(out.begin(), out.end(), [&](const TdoaPair& a, const TdoaPair& b) {
      return std::pair(rank[a.anchor_i], rank[a.anchor_j]) < std::pair(rank[b.anchor_i], rank[b.anchor_j]);
    });
    return out;
  }

  std::vector<int> present;
  for (int id : arrival_order) {
    if (std::any_of(pairs.begin(), pairs.end(), [id](const TdoaPair& p) { return p.anchor_i == id || p.anchor_j == id; })) {
      present.push_back(id);
    }
  }
  if (present.size() < 2) return out;
  for (std::size_t k = 0; k < present.size(); ++k) {
    const int i = present[k];
    const int j = present[(k + 1) % present.size()];
    if (present.size() == 2 && k == 1) break;  // a two-anchor ring is a single pair
    if (auto it = by_key.find({i, j}); it != by_key.end()) out.push_back(*it->second);
  }
  return out;
}

// Sum of squared distance-difference residuals.
inline double tdoa_objective(std::span<const TdoaPair> pairs, const AnchorPositions& anchors, const Vector& x) {
  double sum = 0.0;
  for (const auto& p : pairs) {
    const double r = p.ddoa - (distance(anchors.at(p.anchor_j), x) - distance(anchors.at(p.anchor_i), x));
    sum += r * r;
  }
  return sum;
}

struct SolveResult {
  Vector position;
  int iterations = 0;
  double objective = 0.0;
  std::vector<double> objective_history;  // initial value, then one entry per accepted iteration
};

namespace detail {

inline Vector unit_from(const Vector& anchor, const Vector& x) {
  Vector d = x - anchor;
  const double n = d.norm();
  if (n < 1e-12) return Vector::Zero(x.size());
  return d / n;
}

inline std::set<int> anchors_in(std::span<const TdoaPair> pairs) {
  std::set<int> ids;
  for (const auto& p : pairs) {
    ids.insert(p.anchor_i);
    ids.insert(p.anchor_j);
  }
  return ids;
}

inline constexpr int kMaxStepHalvings = 20;

}  // namespace detail

/// Damped Gauss-Newton on the distance-difference least-squares problem. Each candidate iterate is
/// projected onto `bounds`; a step that would increase the objective is halved up to 20 times, and
/// the solve stops once no halving helps or `params.gn_max_iters` iterations have run.
/// Steps shorter than `params.gn_tolerance` are taken whole while they keep shrinking, because that
/// close to the minimum the objective is too flat to rank candidates in floating point.
inline SolveResult solve_position_detailed(std::span<const TdoaPair> pairs, const AnchorPositions& anchors,
                                           const Bounds& bounds, const Vector& init, const SolverParams& params) {
  const auto dim = init.size();
  const auto used = detail::anchors_in(pairs);
  std::set<std::vector<double>> distinct;
  for (int id : used) {
    const auto& a = anchors.at(id);
    if (a.size() != dim) throw std::invalid_argument("solve_position: anchor dimension mismatch");
    distinct.insert(std::vector<double>(a.data(), a.data() + a.size()));
  }
  if (static_cast<Eigen::Index>(distinct.size()) < dim + 1) {
    throw std::invalid_argument("solve_position: need at least " + std::to_string(dim + 1) + " distinct anchors");
  }

  SolveResult res;
  Vector x = bounds.clamp(init);
  double f = tdoa_objective(pairs, anchors, x);
  if (!std::isfinite(f)) throw std::runtime_error("solve_position: non-finite objective");
  res.objective_history.push_back(f);

  const auto n = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd jac(n, dim);
  Eigen::VectorXd resid(n);
  double last_short_step = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= params.gn_max_iters; ++iter) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& p = pairs[static_cast<std::size_t>(k)];
      const auto& ai = anchors.at(p.anchor_i);
      const auto& aj = anchors.at(p.anchor_j);
      resid(k) = p.ddoa - (distance(aj, x) - distance(ai, x));
      jac.row(k) = -(detail::unit_from(aj, x) - detail::unit_from(ai, x)).transpose();
    }
    const Vector step = jac.completeOrthogonalDecomposition().solve(-resid);
    if (!step.allFinite()) break;

    const double length = step.norm();
    if (length < params.gn_tolerance) {
      if (!(length < last_short_step)) break;
      last_short_step = length;
      x = bounds.clamp(x + step);
      f = tdoa_objective(pairs, anchors, x);
      res.iterations = iter;
      res.objective_history.push_back(f);
      continue;
    }

    double scale = 1.0;
    bool accepted = false;
    Vector candidate;
    double fc = 0.0;
    for (int h = 0; h <= detail::kMaxStepHalvings; ++h, scale *= 0.5) {
      candidate = bounds.clamp(x + scale * step);
      fc = tdoa_objective(pairs, anchors, candidate);
      if (!std::isfinite(fc)) throw std::runtime_error("solve_position: non-finite objective");
      if (fc <= f) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;

    const double moved = (candidate - x).norm();
    x = candidate;
    f = fc;
    res.iterations = iter;
    res.objective_history.push_back(f);
    if (moved == 0.0) break;
  }
  res.position = x;
  res.objective = f;
  return res;
}

inline Vector solve_position(std::span<const TdoaPair> pairs, const AnchorPositions& anchors, const Bounds& bounds,
                             const Vector& init, const SolverParams& params) {
  return solve_position_detailed(pairs, anchors, bounds, init, params).position;
}

inline Vector centroid(const AnchorPositions& anchors, std::span<const int> ids) {
  Vector c = Vector::Zero(anchors.at(ids.front()).size());
  for (int id : ids) c += anchors.at(id);
  return c / static_cast<double>(ids.size());
}

// Per-anchor count of pairs whose residual magnitude at `x` exceeds the threshold.
inline std::map<int, int> count_bad_pairs(std::span<const TdoaPair> pairs, const AnchorPositions& anchors,
                                          const Vector& x, double threshold) {
  std::map<int, int> counts;
  for (const auto& p : pairs) {
    counts.try_emplace(p.anchor_i, 0);
    counts.try_emplace(p.anchor_j, 0);
    const double err = p.ddoa - (distance(anchors.at(p.anchor_j), x) - distance(anchors.at(p.anchor_i), x));
    if (std::abs(err) > threshold) {
      ++counts[p.anchor_i];
      ++counts[p.anchor_j];
    }
  }
  return counts;
}

// Refit objectives closer than this (m^2) count as equal when splitting a tie in bad-pair counts.
inline constexpr double kRefitTieTolerance = 1e-12;

/// Builds distance differences from the target's arrival times and the offsets of `offsets`, then
/// solves. With `params.outlier_removal` the anchor involved in the most over-threshold pairs is
/// dropped and the solve repeats until every pair is within `ddoa_err_thr`.
/// Returns nothing once fewer than `params.num_anchors_req` anchors remain.
inline std::optional<LocationFix> iterative_outlier_removal(const OffsetSet& offsets,
                                                            const std::map<int, double>& target_obs,
                                                            const TestbedConfig& config,
                                                            const SolverParams& params) {
  const double c = config.speed_of_sound;
  const int reference = offsets.reference_anchor_id;
  if (!target_obs.contains(reference)) return std::nullopt;
  const double t_ref = target_obs.at(reference);

  std::map<int, double> tdoas;
  AnchorPositions positions;
  for (int id : offsets.valid_anchor_ids) {
    auto heard = target_obs.find(id);
    if (heard == target_obs.end() || config.find(id) == nullptr) continue;
    tdoas[id] = id == reference ? 0.0 : compute_tdoa(heard->second, t_ref, offsets.offsets.at(id));
    positions[id] = config.position(id);
  }
  if (!tdoas.contains(reference)) return std::nullopt;
  const auto all_pairs = permute_tdoas(reference, tdoas, c);

  std::vector<int> remaining;
  for (const auto& [id, t] : tdoas) remaining.push_back(id);
  const auto min_anchors = static_cast<std::size_t>(std::max(params.num_anchors_req, config.dimension + 1));
  const auto box = config.solver_bounds();

  struct Fit {
    std::vector<TdoaPair> pairs;
    SolveResult solved;
  };
  const auto fit = [&](const std::vector<int>& ids) {
    std::vector<int> order = ids;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return target_obs.at(a) < target_obs.at(b); });
    std::vector<TdoaPair> active;
    for (const auto& p : all_pairs) {
      if (std::binary_search(ids.begin(), ids.end(), p.anchor_i) && std::binary_search(ids.begin(), ids.end(), p.anchor_j)) {
        active.push_back(p);
      }
    }
    Fit f;
    f.pairs = select_pairs(active, params.pairing_mode, order);
    f.solved = solve_position_detailed(f.pairs, positions, box, centroid(positions, ids), params);
    return f;
  };
  const auto without = [](std::vector<int> ids, int id) {
    ids.erase(std::find(ids.begin(), ids.end(), id));
    return ids;
  };

  SolveDiagnostics diag;
  if (remaining.size() < min_anchors) return std::nullopt;
  Fit current = fit(remaining);
  while (true) {
    const auto counts = count_bad_pairs(current.pairs, positions, current.solved.position, params.ddoa_err_thr);
    diag.rounds.push_back({current.solved.position, remaining, counts});
    diag.iterations = current.solved.iterations;
    diag.final_objective = current.solved.objective;
    diag.bad_pair_counts = counts;

    int top = 0;
    for (const auto& [id, count] : counts) top = std::max(top, count);
    if (!params.outlier_removal || top == 0) {
      LocationFix fix;
      fix.position = current.solved.position;
      fix.used_anchor_ids = remaining;
      fix.reference_anchor_id = reference;
      fix.residual_rms = current.pairs.empty()
                             ? 0.0
                             : std::sqrt(current.solved.objective / static_cast<double>(current.pairs.size()));
      fix.removed_anchor_ids = diag.removed_anchors;
      fix.diagnostics = std::move(diag);
      return fix;
    }
    if (remaining.size() - 1 < min_anchors) return std::nullopt;

    // Highest count wins. Equal counts are split by the refit that explains the rest best
    // (objectives within kRefitTieTolerance are equal), then by the lowest id.
    int worst = -1;
    std::optional<Fit> best;
    for (const auto& [id, count] : counts) {
      if (count != top) continue;
      Fit candidate = fit(without(remaining, id));
      if (!best || candidate.solved.objective < best->solved.objective - kRefitTieTolerance) {
        worst = id;
        best = std::move(candidate);
      }
    }
    remaining = without(remaining, worst);
    diag.removed_anchors.push_back(worst);
    current = std::move(*best);
  }
}

/// Full pipeline for one window: beacon selection, offset outlier detection, TDoA construction,
/// pairing, and the (optionally robust) solve. Returns nothing when the window does not support a fix.
inline std::optional<LocationFix> locate(const ObservationWindow& window, const TestbedConfig& config,
                                         const SolverParams& params) {
  params.validate();
  auto selection = select_per_anchor(window);
  std::erase_if(selection, [&](const auto& kv) { return config.find(kv.first) == nullptr; });
  if (static_cast<int>(selection.size()) < params.num_anchors_req) return std::nullopt;

  const auto offsets = detect_outlier_offsets(selection, config, params);
  if (!offsets) return std::nullopt;

  std::map<int, double> target_obs;
  for (const auto& [id, beacon] : selection) target_obs[id] = beacon.target_timestamp;

  auto fix = iterative_outlier_removal(*offsets, target_obs, config, params);
  if (!fix) return std::nullopt;
  fix->window_start = window.start_time;
  for (const auto& obs : window.observations) {
    if (obs.receiver_kind == ReceiverKind::target) {
      fix->target_id = obs.receiver_id;
      break;
    }
  }
  return fix;
}

}  // namespace beaconloc
