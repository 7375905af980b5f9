#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace beaconloc {

// Positions are 2- or 3-component column vectors in meters.
using Vector = Eigen::VectorXd;

inline Vector make_vector(double x, double y) {
  Vector v(2);
  v << x, y;
  return v;
}

inline Vector make_vector(double x, double y, double z) {
  Vector v(3);
  v << x, y, z;
  return v;
}

inline double distance(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("distance: dimension mismatch (" + std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()) + ")");
  }
  return (p - q).norm();
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Returns the first `dimension` coordinates of `v`; missing trailing coordinates are zero.
inline Vector project(const Vector& v, int dimension) {
  Vector out = Vector::Zero(dimension);
  const auto n = std::min<Eigen::Index>(dimension, v.size());
  out.head(n) = v.head(n);
  return out;
}

// Axis-aligned box, inclusive on both ends.
struct Bounds {
  Vector min;
  Vector max;

  int dimension() const { return static_cast<int>(min.size()); }

  bool contains(const Vector& p) const {
    if (p.size() != min.size()) return false;
    return ((p.array() >= min.array()) && (p.array() <= max.array())).all();
  }

  Vector clamp(const Vector& p) const { return p.cwiseMax(min).cwiseMin(max); }

  void validate() const {
    if (min.size() != max.size()) throw std::invalid_argument("bounds: min/max dimension mismatch");
    if (!all_finite(min) || !all_finite(max)) throw std::invalid_argument("bounds: non-finite corner");
    if ((min.array() > max.array()).any()) throw std::invalid_argument("bounds: min exceeds max");
  }

  Bounds projected(int dimension) const { return {project(min, dimension), project(max, dimension)}; }
};

}  // namespace beaconloc
