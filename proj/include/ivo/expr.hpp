#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ivo/errors.hpp"
#include "ivo/types.hpp"

namespace ivo {

// Atom set for scalar functions on R^n.  The convex-certified fragment
// (affine, PSD quadratic, square/norm of affine maps, max, nonnegative
// combinations) carries closed-form conjugates where noted; Product and
// Power extend it to the general arithmetic needed for nonconvex instances
// and are never convexity-certified.
enum class Atom {
  Constant,
  Affine,            // a.x + b
  Quadratic,         // 0.5 x'Qx + b.x + c   (Q symmetric)
  SquareOfAffine,    // (a.x + b)^2
  Norm2OfAffineMap,  // ||Ax + b||_2
  MaxOf,
  NonnegCombination,  // sum_i w_i f_i, w_i >= 0
  Product,
  Power,  // f^k, integer k >= 0
};

enum class Curvature { Affine, Convex, StrictlyConvex, Unknown };

// Result of the syntactic convexity check: certified statuses come only from
// the composition rules listed in the trace.
struct ConvexCert {
  Curvature status = Curvature::Unknown;
  std::vector<std::string> trace;

  bool certified_convex() const { return status != Curvature::Unknown; }
  bool certified_strictly_convex() const {
    return status == Curvature::StrictlyConvex;
  }
};

std::string to_string(Curvature c);

class Expr;

struct ExprNode {
  Atom atom;
  int dim = 0;  // 0 = dimension-free (pure constant subtree)

  double value = 0.0;   // Constant
  Vec coeff;            // Affine / SquareOfAffine: a
  double offset = 0.0;  // Affine / SquareOfAffine: b
  Mat quad;             // Quadratic: Q
  Vec lin;              // Quadratic: b
  double cst = 0.0;     // Quadratic: c
  Mat map_a;            // Norm2OfAffineMap: A
  Vec map_b;            // Norm2OfAffineMap: b
  std::vector<Expr> children;
  std::vector<double> weights;  // NonnegCombination
  int exponent = 0;             // Power

  ConvexCert cert;  // filled at construction
};

// Immutable expression tree with value semantics.  All operations are pure;
// instances are freely shareable across threads.
class Expr {
 public:
  Expr() = default;  // empty handle; only assignment is valid

  static Expr constant(double c);
  static Expr affine(Vec a, double b);
  static Expr quadratic(Mat q, Vec b, double c);
  static Expr square_of_affine(Vec a, double b);
  static Expr norm2_of_affine(Mat a, Vec b);
  static Expr max_of(std::vector<Expr> parts);
  static Expr nonneg_combination(std::vector<double> w, std::vector<Expr> parts);
  static Expr product(Expr lhs, Expr rhs);
  static Expr power(Expr base, int exponent);

  bool valid() const { return node_ != nullptr; }
  Atom atom() const { return node_->atom; }
  int dim() const { return node_->dim; }
  const ExprNode& node() const { return *node_; }

  double eval(const Vec& x) const;

  // At smooth points this is the gradient; at kinks it returns one
  // deterministic selection: the piece of smallest index in MaxOf, the center
  // of the dual ball for Norm2 at a zero residual.
  Vec subgradient(const Vec& x) const;

  bool smooth_at(const Vec& x) const;

  const ConvexCert& convexity() const { return node_->cert; }

  std::string to_string() const;

 private:
  explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}
  std::shared_ptr<const ExprNode> node_;
};

// Degree-<=2 polynomial 0.5 x'Qx + b.x + c used for canonicalization.
struct Poly2 {
  Mat q;  // may be 0x0 together with empty b when dim()==0
  Vec b;
  double c = 0.0;

  int dim() const { return static_cast<int>(b.size()); }
  bool quad_is_zero() const;
  bool lin_is_zero() const;
};

// Exact flattening of a subtree into a degree-<=2 polynomial, when possible.
std::optional<Poly2> to_poly2(const Expr& e);

// Constant / Affine / Quadratic atom matching the polynomial's actual degree.
Expr from_poly2(const Poly2& p);

// Closed-form conjugate descriptor; Unavailable is a value, not an error.
class ConjugateForm {
 public:
  enum class Kind {
    Unavailable,
    PointIndicator,   // phi = a.x + b: phi*(v) = -b on {a}, +inf elsewhere
    PdQuadratic,      // phi*(v) = 0.5 (v-b)'Q^{-1}(v-b) - c
    ScaledSquareLine, // phi = (a.x+b)^2: phi*(t a) = t^2/4 - t b on span(a)
    UnitBallIndicator,// phi = ||x||: indicator of the unit ball
    MaxOfAffineLp,    // LP over the simplex of pieces, vertex enumeration
  };

  Kind kind = Kind::Unavailable;
  bool available() const { return kind != Kind::Unavailable; }

  // May return +infinity.
  double eval(const Vec& v) const;

  Vec point;
  double point_value = 0.0;
  Mat q;  // PdQuadratic: Q (not inverted; solved on demand)
  Vec center;
  double const_shift = 0.0;
  Vec line_a;
  double line_b = 0.0;
  std::vector<std::pair<Vec, double>> pieces;  // MaxOfAffineLp: (a_i, b_i)
};

ConjugateForm conjugate(const Expr& f);

// tol_membership: closed forms are exact up to rounding.
inline constexpr double kTolMembership = 1e-9;

// v in eps-subdifferential of f at xstar, decided through the Fenchel
// identity f(x*) + f*(v) - <v,x*> <= eps.  Throws NonConvexProblem /
// ConjugateUnavailable per the preconditions.
bool eps_subdiff_contains(const Expr& f, const Vec& xstar, const Vec& v,
                          double eps);

// Scaling rule: membership in mu * eps-subdifferential of mu*f.
bool scaled_eps_subdiff_contains(const Expr& f, const Vec& xstar, const Vec& v,
                                 double eps, double mu);

// Refutation-only fallback when no conjugate exists: returns true when some
// sample point witnesses that v is NOT in the eps-subdifferential.
bool eps_subdiff_refuted_on_sample(const Expr& f, const Vec& xstar,
                                   const Vec& v, double eps,
                                   const std::vector<Vec>& sample);

struct SumRuleSplit {
  double eps1 = 0.0;
  double eps2 = 0.0;
  Vec v1;
  Vec v2;
};

// Constructive sum rule: given v in the eps-subdifferential of f1+f2 at x,
// search for eps1+eps2=eps, v1+v2=v with each vi in the eps_i-subdifferential
// of f_i at x.  Grid on eps1 at resolution grid_res*eps, refined by ternary
// search (the minimal membership excess is convex in eps1).  Throws when the
// precondition v in the subdifferential of the sum fails; returns nullopt only
// when the search stalls at resolution limit.
std::optional<SumRuleSplit> check_sum_rule_decomposition(
    const Expr& f1, const Expr& f2, const Vec& x, double eps, const Vec& v,
    double grid_res = 1e-3);

}  // namespace ivo
