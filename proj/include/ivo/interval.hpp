#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "ivo/types.hpp"

namespace ivo {

// Closed bounded real interval [lo, hi].  Endpoints are plain doubles and all
// operations below are the exact endpoint formulas; order predicates compare
// endpoints exactly.  Tolerances belong to the layers above, so that the
// algebraic laws (partial order, metric axioms) hold without slack.
class Interval {
 public:
  Interval(double lo, double hi) : lo_(lo), hi_(hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi))
      throw std::invalid_argument("Interval: endpoints must be finite");
    if (lo > hi)
      throw std::invalid_argument("Interval: lo > hi (" + std::to_string(lo) +
                                  " > " + std::to_string(hi) + ")");
  }

  static Interval point(double a) { return Interval(a, a); }
  static Interval zero() { return Interval(0.0, 0.0); }

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double width() const { return hi_ - lo_; }
  bool is_point() const { return lo_ == hi_; }

  friend bool operator==(const Interval& a, const Interval& b) {
    return a.lo_ == b.lo_ && a.hi_ == b.hi_;
  }
  friend bool operator!=(const Interval& a, const Interval& b) {
    return !(a == b);
  }

 private:
  double lo_;
  double hi_;
};

// Minkowski sum: A+B = {a+b : a in A, b in B}.
inline Interval add(const Interval& a, const Interval& b) {
  return Interval(a.lo() + b.lo(), a.hi() + b.hi());
}

// A-B = {a-b : a in A, b in B} = [aL-bU, aU-bL].  Note A-A != 0.
inline Interval sub(const Interval& a, const Interval& b) {
  return Interval(a.lo() - b.hi(), a.hi() - b.lo());
}

// kA = {ka : a in A}; endpoints swap for k < 0.
inline Interval scale(double k, const Interval& a) {
  if (k >= 0.0) return Interval(k * a.lo(), k * a.hi());
  return Interval(k * a.hi(), k * a.lo());
}

// Hausdorff distance between two closed bounded intervals; for this family
// the sup-inf definition collapses to the max of endpoint distances.
inline double hausdorff(const Interval& a, const Interval& b) {
  return std::max(std::abs(a.lo() - b.lo()), std::abs(a.hi() - b.hi()));
}

// LU order: componentwise on endpoints.
inline bool le_lu(const Interval& a, const Interval& b) {
  return a.lo() <= b.lo() && a.hi() <= b.hi();
}

// Strict LU order: <= and not equal.
inline bool lt_lu(const Interval& a, const Interval& b) {
  return le_lu(a, b) && a != b;
}

// Both endpoint inequalities strict.
inline bool lt_strict_lu(const Interval& a, const Interval& b) {
  return a.lo() < b.lo() && a.hi() < b.hi();
}

inline std::string to_string(const Interval& a) {
  return "[" + fmt_real(a.lo()) + ", " + fmt_real(a.hi()) + "]";
}

}  // namespace ivo
