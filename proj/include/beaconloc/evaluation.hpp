#pragma once

// Accuracy summaries: per-fix 2D errors with mean, nearest-rank 95% quantile and empirical CDF;
// per-location bias; anchor-subset ablation and side-by-side variant comparison.

#include "beaconloc/pipeline.hpp"
#include "beaconloc/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace beaconloc {

struct ErrorSummary {
  std::vector<double> per_fix_errors;  // meters, in input order
  double mean = 0.0;
  double q95 = 0.0;
  std::vector<std::pair<double, double>> cdf_points;  // (error, fraction), sorted
};

// ceil(q * n)-th order statistic (1-based) of `sorted`.
inline double nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("nearest_rank: empty sample");
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline ErrorSummary summarize_errors(std::vector<double> errors) {
  if (errors.empty()) throw std::invalid_argument("error summary: no fixes");
  ErrorSummary s;
  s.per_fix_errors = errors;
  s.mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  std::sort(errors.begin(), errors.end());
  s.q95 = nearest_rank(errors, 0.95);
  const double n = static_cast<double>(errors.size());
  for (std::size_t k = 0; k < errors.size(); ++k) s.cdf_points.emplace_back(errors[k], static_cast<double>(k + 1) / n);
  return s;
}

inline std::map<int, TargetPoint> index_truth(std::span<const TargetPoint> truth) {
  std::map<int, TargetPoint> out;
  for (const auto& t : truth) out[t.id] = t;
  return out;
}

inline double horizontal_error(const Vector& estimate, const Vector& truth) {
  return (estimate.head(2) - truth.head(2)).norm();
}

inline ErrorSummary compute_error_summary(std::span<const LocationFix> fixes, std::span<const TargetPoint> truth) {
  const auto by_id = index_truth(truth);
  std::vector<double> errors;
  errors.reserve(fixes.size());
  for (const auto& f : fixes) {
    auto it = by_id.find(f.target_id);
    if (it == by_id.end()) throw std::invalid_argument("no ground truth for target " + std::to_string(f.target_id));
    errors.push_back(horizontal_error(f.position, it->second.position));
  }
  return summarize_errors(std::move(errors));
}

struct LocationBias {
  Vector vector;  // centroid minus truth, (x, y)
  double magnitude = 0.0;
  std::size_t fixes = 0;
};

struct BiasReport {
  std::map<std::string, LocationBias> per_location_bias;
  double average_bias = 0.0;
};

// Bias per test location: centroid of that location's fixes minus its ground truth.
inline BiasReport compute_bias(const std::map<std::string, std::vector<Vector>>& fixes_by_location,
                               const std::map<std::string, Vector>& truth) {
  if (fixes_by_location.empty()) throw std::invalid_argument("bias: no locations");
  BiasReport report;
  double sum = 0.0;
  for (const auto& [label, estimates] : fixes_by_location) {
    auto t = truth.find(label);
    if (t == truth.end()) throw std::invalid_argument("bias: no ground truth for location '" + label + "'");
    if (estimates.empty()) throw std::invalid_argument("bias: location '" + label + "' has no fixes");
    Vector centroid = Vector::Zero(2);
    for (const auto& e : estimates) centroid += e.head(2);
    centroid /= static_cast<double>(estimates.size());
    LocationBias b;
    b.vector = centroid - t->second.head(2);
    b.magnitude = b.vector.norm();
    b.fixes = estimates.size();
    sum += b.magnitude;
    report.per_location_bias.emplace(label, std::move(b));
  }
  report.average_bias = sum / static_cast<double>(report.per_location_bias.size());
  return report;
}

inline BiasReport compute_bias(std::span<const LocationFix> fixes, std::span<const TargetPoint> truth) {
  const auto by_id = index_truth(truth);
  std::map<std::string, std::vector<Vector>> grouped;
  std::map<std::string, Vector> labels;
  for (const auto& f : fixes) {
    auto it = by_id.find(f.target_id);
    if (it == by_id.end()) throw std::invalid_argument("bias: no ground truth for target " + std::to_string(f.target_id));
    grouped[it->second.label].push_back(f.position);
    labels[it->second.label] = it->second.position;
  }
  return compute_bias(grouped, labels);
}

struct AnchorSubset {
  std::string label;
  std::set<int> anchors;
};

// Anchor subsets of the eight-anchor ablation, 4 through 8 anchors.
inline std::vector<AnchorSubset> default_ablation_subsets() {
  return {{"4", {2, 4, 6, 8}},
          {"5", {1, 2, 4, 6, 8}},
          {"6", {1, 2, 3, 4, 6, 8}},
          {"7", {1, 2, 3, 4, 5, 6, 8}},
          {"8", {1, 2, 3, 4, 5, 6, 7, 8}}};
}

struct AblationRow {
  AnchorSubset subset;
  std::size_t windows = 0;
  std::size_t fixes = 0;
  ErrorSummary summary;
};

/// Re-runs localization with only the anchors of each subset (beacons from, and receptions at,
/// every other anchor are dropped) and summarizes the errors.
inline std::vector<AblationRow> run_ablation(std::span<const BeaconObservation> stream, const TestbedConfig& config,
                                             const SolverParams& params, std::span<const TargetPoint> truth,
                                             const std::vector<AnchorSubset>& subsets,
                                             const WindowingOptions& windowing = {}) {
  for (const auto& s : subsets) {
    for (int id : s.anchors) {
      if (config.find(id) == nullptr) {
        throw std::invalid_argument("ablation subset '" + s.label + "' names unknown anchor " + std::to_string(id));
      }
    }
    if (static_cast<int>(s.anchors.size()) < params.num_anchors_req) {
      throw std::invalid_argument("ablation subset '" + s.label + "' has fewer than " +
                                  std::to_string(params.num_anchors_req) + " anchors");
    }
  }
  std::vector<AblationRow> rows;
  for (const auto& s : subsets) {
    const auto filtered = filter_anchors(stream, s.anchors);
    const auto records = locate_stream(filtered, config, params, windowing);
    const auto fixes = fixes_only(records);
    rows.push_back({s, records.size(), fixes.size(), compute_error_summary(fixes, truth)});
  }
  return rows;
}

struct VariantResult {
  Variant variant;
  std::size_t windows = 0;
  std::vector<LocationFix> fixes;
  ErrorSummary summary;
};

// Runs all four variants over the same windows.
inline std::vector<VariantResult> compare_variants(std::span<const BeaconObservation> stream,
                                                   const TestbedConfig& config, std::span<const TargetPoint> truth,
                                                   const WindowingOptions& windowing = {},
                                                   const SolverParams& base = {}) {
  std::vector<VariantResult> out;
  for (const auto& v : kVariants) {
    SolverParams p = base;
    p.pairing_mode = v.mode;
    p.outlier_removal = v.robust;
    const auto records = locate_stream(stream, config, p, windowing);
    auto fixes = fixes_only(records);
    auto summary = compute_error_summary(fixes, truth);
    out.push_back({v, records.size(), std::move(fixes), std::move(summary)});
  }
  return out;
}

inline void write_summary(std::ostream& out, const ErrorSummary& s, const BiasReport* bias = nullptr) {
  out << "# quantiles: nearest-rank; errors: horizontal (x, y), meters\n";
  out << "count " << s.per_fix_errors.size() << '\n';
  out << "mean " << format_decimal(s.mean) << '\n';
  out << "q95 " << format_decimal(s.q95) << '\n';
  if (bias != nullptr) {
    out << "average_bias " << format_decimal(bias->average_bias) << '\n';
    for (const auto& [label, b] : bias->per_location_bias) {
      out << "bias " << label << " dx " << format_decimal(b.vector(0)) << " dy " << format_decimal(b.vector(1))
          << " magnitude " << format_decimal(b.magnitude) << " fixes " << b.fixes << '\n';
    }
  }
  for (const auto& [e, frac] : s.cdf_points) out << "cdf " << format_decimal(e) << ' ' << format_decimal(frac) << '\n';
}

}  // namespace beaconloc
