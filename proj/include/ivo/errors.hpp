#pragma once

#include <stdexcept>
#include <string>

namespace ivo {

struct DimensionMismatch : std::invalid_argument {
  explicit DimensionMismatch(const std::string& what)
      : std::invalid_argument("dimension mismatch: " + what) {}
};

// The standing assumption f^L <= f^U failed at a concrete point.
struct LowerExceedsUpper : std::runtime_error {
  explicit LowerExceedsUpper(const std::string& what)
      : std::runtime_error("lower objective exceeds upper: " + what) {}
};

struct ConjugateUnavailable : std::runtime_error {
  explicit ConjugateUnavailable(const std::string& what)
      : std::runtime_error("no closed-form conjugate: " + what) {}
};

struct NonConvexProblem : std::runtime_error {
  explicit NonConvexProblem(const std::string& what)
      : std::runtime_error("convexity certificate required: " + what) {}
};

struct UnsupportedAtomForMembership : std::runtime_error {
  explicit UnsupportedAtomForMembership(const std::string& what)
      : std::runtime_error("no closed-form membership set: " + what) {}
};

struct NonSmoothAtPoint : std::runtime_error {
  explicit NonSmoothAtPoint(const std::string& what)
      : std::runtime_error("subdifferential not a singleton: " + what) {}
};

struct StrictConvexityNotCertified : std::runtime_error {
  explicit StrictConvexityNotCertified(const std::string& what)
      : std::runtime_error("strict convexity not certified: " + what) {}
};

struct CcNotAsserted : std::runtime_error {
  CcNotAsserted()
      : std::runtime_error(
            "closedness condition not asserted (pass --assume-cc to accept it "
            "as a hypothesis)") {}
};

struct ParseError : std::runtime_error {
  int line;
  int col;
  ParseError(int line_, int col_, const std::string& what)
      : std::runtime_error("parse error at " + std::to_string(line_) + ":" +
                           std::to_string(col_) + ": " + what),
        line(line_),
        col(col_) {}
};

}  // namespace ivo
