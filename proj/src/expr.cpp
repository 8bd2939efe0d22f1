#include "ivo/expr.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ivo {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int unify_dims(int a, int b) {
  if (a == 0) return b;
  if (b == 0) return a;
  if (a != b)
    throw DimensionMismatch("cannot combine expressions on R^" +
                            std::to_string(a) + " and R^" + std::to_string(b));
  return a;
}

double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

std::string mat_to_string(const Mat& m) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < m.rows(); ++i) {
    if (i) os << ", ";
    os << "[";
    for (int j = 0; j < m.cols(); ++j) {
      if (j) os << ", ";
      os << fmt_real(m(i, j));
    }
    os << "]";
  }
  os << "]";
  return os.str();
}

std::string vec_to_string(const Vec& v) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    os << fmt_real(v[i]);
  }
  os << "]";
  return os.str();
}

// Curvature of a symmetric matrix, with a scale-relative tolerance.
Curvature quad_curvature(const Mat& q, double* lambda_min_out) {
  if (q.size() == 0 || q.cwiseAbs().maxCoeff() == 0.0) {
    if (lambda_min_out) *lambda_min_out = 0.0;
    return Curvature::Affine;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(q);
  const double lmin = es.eigenvalues().minCoeff();
  if (lambda_min_out) *lambda_min_out = lmin;
  const double tol = 1e-10 * std::max(1.0, q.cwiseAbs().maxCoeff());
  if (lmin > tol) return Curvature::StrictlyConvex;
  if (lmin >= -tol) return Curvature::Convex;
  return Curvature::Unknown;
}

ConvexCert make_cert(const ExprNode& n) {
  ConvexCert c;
  auto note = [&](Curvature st, const std::string& rule) {
    c.status = st;
    c.trace.push_back(rule + " -> " + to_string(st));
  };
  switch (n.atom) {
    case Atom::Constant:
      note(Curvature::Affine, "constant");
      break;
    case Atom::Affine:
      note(Curvature::Affine, "affine");
      break;
    case Atom::Quadratic: {
      double lmin = 0.0;
      Curvature st = quad_curvature(n.quad, &lmin);
      note(st, "quadratic (lambda_min=" + fmt_real(lmin) + ")");
      break;
    }
    case Atom::SquareOfAffine:
      note(Curvature::Convex, "square of affine");
      break;
    case Atom::Norm2OfAffineMap:
      note(Curvature::Convex, "norm of affine map");
      break;
    case Atom::MaxOf: {
      bool all_convex = true;
      for (const Expr& ch : n.children) {
        all_convex = all_convex && ch.convexity().certified_convex();
        for (const auto& t : ch.convexity().trace) c.trace.push_back("  " + t);
      }
      note(all_convex ? Curvature::Convex : Curvature::Unknown,
           "max of convex parts");
      break;
    }
    case Atom::NonnegCombination: {
      bool all_convex = true;
      bool all_affine = true;
      bool strict_part = false;
      for (size_t i = 0; i < n.children.size(); ++i) {
        const ConvexCert& cc = n.children[i].convexity();
        all_convex = all_convex && cc.certified_convex();
        all_affine = all_affine && cc.status == Curvature::Affine;
        strict_part =
            strict_part || (n.weights[i] > 0.0 && cc.certified_strictly_convex());
        for (const auto& t : cc.trace) c.trace.push_back("  " + t);
      }
      if (!all_convex)
        note(Curvature::Unknown, "nonneg combination of unknown parts");
      else if (strict_part)
        note(Curvature::StrictlyConvex,
             "nonneg combination with a strictly convex term");
      else if (all_affine)
        note(Curvature::Affine, "nonneg combination of affine parts");
      else
        note(Curvature::Convex, "nonneg combination of convex parts");
      break;
    }
    case Atom::Product: {
      // Only constant scaling keeps a certificate.
      const Expr* cst = nullptr;
      const Expr* other = nullptr;
      if (n.children[0].atom() == Atom::Constant) {
        cst = &n.children[0];
        other = &n.children[1];
      } else if (n.children[1].atom() == Atom::Constant) {
        cst = &n.children[1];
        other = &n.children[0];
      }
      if (cst) {
        const double k = cst->node().value;
        const ConvexCert& oc = other->convexity();
        if (k == 0.0)
          note(Curvature::Affine, "zero scaling");
        else if (k > 0.0 && oc.certified_convex())
          note(oc.status, "positive scaling");
        else if (oc.status == Curvature::Affine)
          note(Curvature::Affine, "scaling of affine");
        else
          note(Curvature::Unknown, "scaling of unknown part");
      } else {
        note(Curvature::Unknown, "product");
      }
      break;
    }
    case Atom::Power:
      note(Curvature::Unknown, "integer power");
      break;
  }
  return c;
}

}  // namespace

std::string to_string(Curvature c) {
  switch (c) {
    case Curvature::Affine: return "affine";
    case Curvature::Convex: return "convex";
    case Curvature::StrictlyConvex: return "strictly convex";
    case Curvature::Unknown: return "unknown";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Factories

static Expr finish(std::shared_ptr<ExprNode> n);

namespace {
struct ExprAccess;
}  // namespace

// Expr needs a private-constructor hop; a local maker keeps the factories
// readable.
namespace detail {
struct Maker {
  静_assert_placeholder:  // (unused label removed below)
};
}  // namespace detail

Expr make_expr(std::shared_ptr<ExprNode> n);

static std::shared_ptr<ExprNode> base_node(Atom a) {
  auto n = std::make_shared<ExprNode>();
  n->atom = a;
  return n;
}

Expr Expr::constant(double c) {
  auto n = base_node(Atom::Constant);
  if (!std::isfinite(c))
    throw std::invalid_argument("Expr::constant: value must be finite");
  n->value = c;
  n->dim = 0;
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::affine(Vec a, double b) {
  if (a.size() == 0)
    throw std::invalid_argument("Expr::affine: empty coefficient vector");
  auto n = base_node(Atom::Affine);
  n->dim = static_cast<int>(a.size());
  n->coeff = std::move(a);
  n->offset = b;
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::quadratic(Mat q, Vec b, double c) {
  if (q.rows() != q.cols() || q.rows() != b.size())
    throw DimensionMismatch("Expr::quadratic: Q must be n x n, b length n");
  auto n = base_node(Atom::Quadratic);
  n->dim = static_cast<int>(b.size());
  n->quad = 0.5 * (q + q.transpose());
  n->lin = std::move(b);
  n->cst = c;
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::square_of_affine(Vec a, double b) {
  if (a.size() == 0)
    throw std::invalid_argument("Expr::square_of_affine: empty coefficients");
  auto n = base_node(Atom::SquareOfAffine);
  n->dim = static_cast<int>(a.size());
  n->coeff = std::move(a);
  n->offset = b;
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::norm2_of_affine(Mat a, Vec b) {
  if (a.rows() != b.size())
    throw DimensionMismatch("Expr::norm2_of_affine: rows(A) != len(b)");
  auto n = base_node(Atom::Norm2OfAffineMap);
  n->dim = static_cast<int>(a.cols());
  n->map_a = std::move(a);
  n->map_b = std::move(b);
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::max_of(std::vector<Expr> parts) {
  if (parts.empty())
    throw std::invalid_argument("Expr::max_of: needs at least one part");
  if (parts.size() == 1) return parts[0];
  auto n = base_node(Atom::MaxOf);
  int d = 0;
  for (const Expr& e : parts) d = unify_dims(d, e.dim());
  n->dim = d;
  n->children = std::move(parts);
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::nonneg_combination(std::vector<double> w, std::vector<Expr> parts) {
  if (w.size() != parts.size() || parts.empty())
    throw std::invalid_argument(
        "Expr::nonneg_combination: weights and parts must align");
  for (double wi : w)
    if (!(wi >= 0.0) || !std::isfinite(wi))
      throw std::invalid_argument(
          "Expr::nonneg_combination: weights must be finite and >= 0");
  auto n = base_node(Atom::NonnegCombination);
  int d = 0;
  for (const Expr& e : parts) d = unify_dims(d, e.dim());
  n->dim = d;
  n->weights = std::move(w);
  n->children = std::move(parts);
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::product(Expr lhs, Expr rhs) {
  auto n = base_node(Atom::Product);
  n->dim = unify_dims(lhs.dim(), rhs.dim());
  n->children = {std::move(lhs), std::move(rhs)};
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

Expr Expr::power(Expr base, int exponent) {
  if (exponent < 0)
    throw std::invalid_argument("Expr::power: exponent must be >= 0");
  if (exponent == 0) return constant(1.0);
  if (exponent == 1) return base;
  auto n = base_node(Atom::Power);
  n->dim = base.dim();
  n->children = {std::move(base)};
  n->exponent = exponent;
  n->cert = make_cert(*n);
  return Expr(std::shared_ptr<const ExprNode>(n));
}

// ---------------------------------------------------------------------------
// Evaluation

double Expr::eval(const Vec& x) const {
  const ExprNode& n = *node_;
  if (n.dim != 0 && n.dim != x.size())
    throw DimensionMismatch("eval: expression on R^" + std::to_string(n.dim) +
                            " applied to point of length " +
                            std::to_string(x.size()));
  switch (n.atom) {
    case Atom::Constant:
      return n.value;
    case Atom::Affine:
      return n.coeff.dot(x) + n.offset;
    case Atom::Quadratic:
      return 0.5 * x.dot(n.quad * x) + n.lin.dot(x) + n.cst;
    case Atom::SquareOfAffine: {
      const double t = n.coeff.dot(x) + n.offset;
      return t * t;
    }
    case Atom::Norm2OfAffineMap:
      return (n.map_a * x + n.map_b).norm();
    case Atom::MaxOf: {
      double best = n.children[0].eval(x);
      for (size_t i = 1; i < n.children.size(); ++i)
        best = std::max(best, n.children[i].eval(x));
      return best;
    }
    case Atom::NonnegCombination: {
      double s = 0.0;
      for (size_t i = 0; i < n.children.size(); ++i)
        s += n.weights[i] * n.children[i].eval(x);
      return s;
    }
    case Atom::Product:
      return n.children[0].eval(x) * n.children[1].eval(x);
    case Atom::Power:
      return ipow(n.children[0].eval(x), n.exponent);
  }
  return 0.0;
}

Vec Expr::subgradient(const Vec& x) const {
  const ExprNode& n = *node_;
  if (n.dim != 0 && n.dim != x.size())
    throw DimensionMismatch("subgradient: dimension mismatch");
  switch (n.atom) {
    case Atom::Constant:
      return Vec::Zero(x.size());
    case Atom::Affine:
      return n.coeff;
    case Atom::Quadratic:
      return n.quad * x + n.lin;
    case Atom::SquareOfAffine:
      return 2.0 * (n.coeff.dot(x) + n.offset) * n.coeff;
    case Atom::Norm2OfAffineMap: {
      const Vec r = n.map_a * x + n.map_b;
      const double nr = r.norm();
      if (nr <= 1e-14) return Vec::Zero(x.size());  // dual-ball center
      return n.map_a.transpose() * (r / nr);
    }
    case Atom::MaxOf: {
      size_t best = 0;
      double bv = n.children[0].eval(x);
      for (size_t i = 1; i < n.children.size(); ++i) {
        const double vi = n.children[i].eval(x);
        if (vi > bv) {  // ties keep the smallest index
          bv = vi;
          best = i;
        }
      }
      return n.children[best].subgradient(x);
    }
    case Atom::NonnegCombination: {
      Vec s = Vec::Zero(x.size());
      for (size_t i = 0; i < n.children.size(); ++i)
        if (n.weights[i] != 0.0)
          s += n.weights[i] * n.children[i].subgradient(x);
      return s;
    }
    case Atom::Product: {
      const double fl = n.children[0].eval(x);
      const double fr = n.children[1].eval(x);
      return fl * n.children[1].subgradient(x) +
             fr * n.children[0].subgradient(x);
    }
    case Atom::Power: {
      const double f = n.children[0].eval(x);
      return static_cast<double>(n.exponent) * ipow(f, n.exponent - 1) *
             n.children[0].subgradient(x);
    }
  }
  return Vec::Zero(x.size());
}

bool Expr::smooth_at(const Vec& x) const {
  const ExprNode& n = *node_;
  switch (n.atom) {
    case Atom::Constant:
    case Atom::Affine:
    case Atom::Quadratic:
    case Atom::SquareOfAffine:
      return true;
    case Atom::Norm2OfAffineMap:
      return (n.map_a * x + n.map_b).norm() > 1e-12;
    case Atom::MaxOf: {
      double best = -kInf;
      for (const Expr& ch : n.children) best = std::max(best, ch.eval(x));
      const double tol = 1e-12 * std::max(1.0, std::abs(best));
      size_t hits = 0;
      size_t hit_idx = 0;
      for (size_t i = 0; i < n.children.size(); ++i)
        if (n.children[i].eval(x) >= best - tol) {
          ++hits;
          hit_idx = i;
        }
      return hits == 1 && n.children[hit_idx].smooth_at(x);
    }
    case Atom::NonnegCombination: {
      for (size_t i = 0; i < n.children.size(); ++i)
        if (n.weights[i] != 0.0 && !n.children[i].smooth_at(x)) return false;
      return true;
    }
    case Atom::Product:
      return n.children[0].smooth_at(x) && n.children[1].smooth_at(x);
    case Atom::Power:
      return n.children[0].smooth_at(x);
  }
  return true;
}

std::string Expr::to_string() const {
  const ExprNode& n = *node_;
  switch (n.atom) {
    case Atom::Constant:
      return fmt_real(n.value);
    case Atom::Affine:
      return "aff(" + vec_to_string(n.coeff) + ", " + fmt_real(n.offset) + ")";
    case Atom::Quadratic:
      return "quad(" + mat_to_string(n.quad) + ", " + vec_to_string(n.lin) +
             ", " + fmt_real(n.cst) + ")";
    case Atom::SquareOfAffine:
      return "sq(aff(" + vec_to_string(n.coeff) + ", " + fmt_real(n.offset) +
             "))";
    case Atom::Norm2OfAffineMap:
      return "norm2(" + mat_to_string(n.map_a) + ", " +
             vec_to_string(n.map_b) + ")";
    case Atom::MaxOf: {
      std::string s = "max(";
      for (size_t i = 0; i < n.children.size(); ++i) {
        if (i) s += ", ";
        s += n.children[i].to_string();
      }
      return s + ")";
    }
    case Atom::NonnegCombination: {
      std::string s;
      for (size_t i = 0; i < n.children.size(); ++i) {
        if (i) s += " + ";
        s += fmt_real(n.weights[i]) + "*(" + n.children[i].to_string() + ")";
      }
      return s;
    }
    case Atom::Product:
      return "(" + n.children[0].to_string() + ")*(" +
             n.children[1].to_string() + ")";
    case Atom::Power:
      return "(" + n.children[0].to_string() + ")^" +
             std::to_string(n.exponent);
  }
  return "";
}

// ---------------------------------------------------------------------------
// Polynomial flattening

bool Poly2::quad_is_zero() const {
  return q.size() == 0 || q.cwiseAbs().maxCoeff() == 0.0;
}

bool Poly2::lin_is_zero() const {
  return b.size() == 0 || b.cwiseAbs().maxCoeff() == 0.0;
}

namespace {

int poly_degree(const Poly2& p) {
  if (!p.quad_is_zero()) return 2;
  if (!p.lin_is_zero()) return 1;
  return 0;
}

Poly2 poly_lift(const Poly2& p, int n) {
  if (p.dim() == n) return p;
  Poly2 r;
  r.q = Mat::Zero(n, n);
  r.b = Vec::Zero(n);
  r.c = p.c;
  if (p.dim() > 0) {
    r.q.topLeftCorner(p.dim(), p.dim()) = p.q;
    r.b.head(p.dim()) = p.b;
  }
  return r;
}

Poly2 poly_add(const Poly2& a, const Poly2& b, double wa, double wb) {
  const int n = std::max(a.dim(), b.dim());
  Poly2 la = poly_lift(a, n);
  Poly2 lb = poly_lift(b, n);
  Poly2 r;
  if (n > 0) {
    r.q = wa * la.q + wb * lb.q;
    r.b = wa * la.b + wb * lb.b;
  }
  r.c = wa * la.c + wb * lb.c;
  return r;
}

std::optional<Poly2> poly_mul(const Poly2& a, const Poly2& b) {
  const int da = poly_degree(a);
  const int db = poly_degree(b);
  if (da + db > 2) return std::nullopt;
  if (da == 0) {
    Poly2 r = b;
    if (r.dim() > 0) {
      r.q = a.c * r.q;
      r.b = a.c * r.b;
    }
    r.c = a.c * b.c;
    return r;
  }
  if (db == 0) return poly_mul(b, a);
  // affine * affine
  const int n = std::max(a.dim(), b.dim());
  Poly2 la = poly_lift(a, n);
  Poly2 lb = poly_lift(b, n);
  Poly2 r;
  r.q = la.b * lb.b.transpose() + lb.b * la.b.transpose();
  r.b = la.c * lb.b + lb.c * la.b;
  r.c = la.c * lb.c;
  return r;
}

}  // namespace

std::optional<Poly2> to_poly2(const Expr& e) {
  const ExprNode& n = e.node();
  switch (n.atom) {
    case Atom::Constant: {
      Poly2 p;
      p.c = n.value;
      return p;
    }
    case Atom::Affine: {
      Poly2 p;
      p.q = Mat::Zero(n.dim, n.dim);
      p.b = n.coeff;
      p.c = n.offset;
      return p;
    }
    case Atom::Quadratic: {
      Poly2 p;
      p.q = n.quad;
      p.b = n.lin;
      p.c = n.cst;
      return p;
    }
    case Atom::SquareOfAffine: {
      Poly2 p;
      p.q = 2.0 * n.coeff * n.coeff.transpose();
      p.b = 2.0 * n.offset * n.coeff;
      p.c = n.offset * n.offset;
      return p;
    }
    case Atom::NonnegCombination: {
      Poly2 acc;
      bool first = true;
      for (size_t i = 0; i < n.children.size(); ++i) {
        auto pi = to_poly2(n.children[i]);
        if (!pi) return std::nullopt;
        acc = first ? poly_add(Poly2{}, *pi, 0.0, n.weights[i])
                    : poly_add(acc, *pi, 1.0, n.weights[i]);
        first = false;
      }
      return acc;
    }
    case Atom::Product: {
      auto pl = to_poly2(n.children[0]);
      auto pr = to_poly2(n.children[1]);
      if (!pl || !pr) return std::nullopt;
      return poly_mul(*pl, *pr);
    }
    case Atom::Power: {
      auto pb = to_poly2(n.children[0]);
      if (!pb) return std::nullopt;
      if (poly_degree(*pb) == 0) {
        Poly2 p;
        p.c = ipow(pb->c, n.exponent);
        return p;
      }
      if (n.exponent == 2 && poly_degree(*pb) <= 1) return poly_mul(*pb, *pb);
      return std::nullopt;
    }
    default:
      return std::nullopt;
  }
}

Expr from_poly2(const Poly2& p) {
  if (p.dim() == 0) return Expr::constant(p.c);
  if (p.quad_is_zero()) {
    if (p.lin_is_zero()) return Expr::constant(p.c);
    return Expr::affine(p.b, p.c);
  }
  return Expr::quadratic(p.q, p.b, p.c);
}

// ---------------------------------------------------------------------------
// Conjugates

namespace {

Vec lift_vec(const Vec& v, Eigen::Index n) {
  if (v.size() == n) return v;
  Vec r = Vec::Zero(n);
  r.head(v.size()) = v;
  return r;
}

// All subsets of {0..count-1} of size <= max_size, in lexicographic order.
void enumerate_subsets(int count, int max_size,
                       const std::function<void(const std::vector<int>&)>& f) {
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (!cur.empty()) f(cur);
    if (static_cast<int>(cur.size()) == max_size) return;
    for (int i = start; i < count; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
}

}  // namespace

double ConjugateForm::eval(const Vec& v) const {
  switch (kind) {
    case Kind::Unavailable:
      return kInf;
    case Kind::PointIndicator: {
      const Vec p = lift_vec(point, v.size());
      const double tol = 1e-12 * std::max(1.0, p.cwiseAbs().maxCoeff());
      if ((v - p).cwiseAbs().maxCoeff() <= tol) return point_value;
      return kInf;
    }
    case Kind::PdQuadratic: {
      const Vec d = v - center;
      const Vec s = q.ldlt().solve(d);
      return 0.5 * d.dot(s) - const_shift;
    }
    case Kind::ScaledSquareLine: {
      const double aa = line_a.squaredNorm();
      const double t = line_a.dot(v) / aa;
      const Vec resid = v - t * line_a;
      const double tol =
          1e-10 * std::max(1.0, v.cwiseAbs().maxCoeff());
      if (resid.cwiseAbs().maxCoeff() > tol) return kInf;
      return t * t / 4.0 - t * line_b;
    }
    case Kind::UnitBallIndicator:
      return v.norm() <= 1.0 + 1e-12 ? 0.0 : kInf;
    case Kind::MaxOfAffineLp: {
      const int count = static_cast<int>(pieces.size());
      const int n = static_cast<int>(v.size());
      double best = kInf;
      const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
      enumerate_subsets(count, n + 1, [&](const std::vector<int>& s) {
        const int k = static_cast<int>(s.size());
        Mat a(n + 1, k);
        Vec rhs(n + 1);
        for (int j = 0; j < k; ++j) {
          a.col(j).head(n) = lift_vec(pieces[s[j]].first, n);
          a(n, j) = 1.0;
        }
        rhs.head(n) = v;
        rhs(n) = 1.0;
        Vec theta = a.completeOrthogonalDecomposition().solve(rhs);
        if ((a * theta - rhs).cwiseAbs().maxCoeff() > 1e-9 * scale) return;
        if (theta.minCoeff() < -1e-9) return;
        double obj = 0.0;
        for (int j = 0; j < k; ++j)
          obj -= std::max(theta[j], 0.0) * pieces[s[j]].second;
        best = std::min(best, obj);
      });
      return best;
    }
  }
  return kInf;
}

ConjugateForm conjugate(const Expr& f) {
  ConjugateForm cf;
  if (auto p = to_poly2(f)) {
    if (p->quad_is_zero()) {
      cf.kind = ConjugateForm::Kind::PointIndicator;
      cf.point = p->dim() > 0 ? p->b : Vec();
      cf.point_value = -p->c;
      return cf;
    }
    double lmin = 0.0;
    if (quad_curvature(p->q, &lmin) == Curvature::StrictlyConvex) {
      cf.kind = ConjugateForm::Kind::PdQuadratic;
      cf.q = p->q;
      cf.center = p->b;
      cf.const_shift = p->c;
      return cf;
    }
    // fall through: PSD-singular quadratics may still match an atom below
  }
  const ExprNode& n = f.node();
  switch (n.atom) {
    case Atom::SquareOfAffine:
      if (n.coeff.cwiseAbs().maxCoeff() > 0.0) {
        cf.kind = ConjugateForm::Kind::ScaledSquareLine;
        cf.line_a = n.coeff;
        cf.line_b = n.offset;
      }
      return cf;
    case Atom::Norm2OfAffineMap:
      if (n.map_a.rows() == n.map_a.cols() &&
          n.map_a.isIdentity(0.0) && n.map_b.cwiseAbs().maxCoeff() == 0.0) {
        cf.kind = ConjugateForm::Kind::UnitBallIndicator;
      }
      return cf;
    case Atom::MaxOf: {
      if (n.children.size() > 8) return cf;
      std::vector<std::pair<Vec, double>> pieces;
      for (const Expr& ch : n.children) {
        auto p = to_poly2(ch);
        if (!p || !p->quad_is_zero()) return cf;
        pieces.emplace_back(p->dim() > 0 ? p->b : Vec(), p->c);
      }
      cf.kind = ConjugateForm::Kind::MaxOfAffineLp;
      cf.pieces = std::move(pieces);
      return cf;
    }
    default:
      return cf;
  }
}

// ---------------------------------------------------------------------------
// eps-subdifferential membership

bool eps_subdiff_contains(const Expr& f, const Vec& xstar, const Vec& v,
                          double eps) {
  if (eps < 0.0) throw std::invalid_argument("eps_subdiff_contains: eps < 0");
  if (!f.convexity().certified_convex())
    throw NonConvexProblem("eps-subdifferential of " + f.to_string());
  const ConjugateForm cf = conjugate(f);
  if (!cf.available()) throw ConjugateUnavailable(f.to_string());
  const double gap = f.eval(xstar) + cf.eval(v) - v.dot(xstar);
  return gap <= eps + kTolMembership;
}

bool scaled_eps_subdiff_contains(const Expr& f, const Vec& xstar, const Vec& v,
                                 double eps, double mu) {
  if (!(mu > 0.0))
    throw std::invalid_argument("scaled_eps_subdiff_contains: mu must be > 0");
  return eps_subdiff_contains(f, xstar, Vec(v / mu), eps / mu);
}

bool eps_subdiff_refuted_on_sample(const Expr& f, const Vec& xstar,
                                   const Vec& v, double eps,
                                   const std::vector<Vec>& sample) {
  const double fstar = f.eval(xstar);
  for (const Vec& x : sample) {
    if (f.eval(x) - fstar < v.dot(x - xstar) - eps - kTolMembership)
      return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Sum rule decomposition

namespace {

// Fenchel gap of a supported atom at a fixed base point, as a function of the
// dual vector: either an indicator of a single point (affine) or a PD
// quadratic form centered at the gradient.
struct GapForm {
  bool singleton = false;
  Vec point;  // singleton
  Mat q;      // quadratic: gap(u) = 0.5 (u-g)' q^{-1} (u-g)
  Vec g;

  double value(const Vec& u) const {
    if (singleton) {
      const double tol = 1e-10 * std::max(1.0, point.cwiseAbs().maxCoeff());
      return (u - point).cwiseAbs().maxCoeff() <= tol ? 0.0 : kInf;
    }
    const Vec d = u - g;
    return 0.5 * d.dot(q.ldlt().solve(d));
  }
};

std::optional<GapForm> gap_form(const Expr& f, const Vec& x) {
  auto p = to_poly2(f);
  if (!p) return std::nullopt;
  GapForm gf;
  const Poly2 lifted = poly_lift(*p, static_cast<int>(x.size()));
  if (lifted.quad_is_zero()) {
    gf.singleton = true;
    gf.point = lifted.b;
    return gf;
  }
  if (quad_curvature(lifted.q, nullptr) != Curvature::StrictlyConvex)
    return std::nullopt;
  gf.q = lifted.q;
  gf.g = lifted.q * x + lifted.b;
  return gf;
}

// min over v1 of max(gap1(v1) - eps1, gap2(v - v1) - eps2) for two quadratic
// gap forms: the optimum sits either at one of the unconstrained minimizers or
// on the path of minimizers of convex combinations, found by bisection.
struct InnerResult {
  double excess = kInf;
  Vec v1;
};

InnerResult inner_minimax(const GapForm& g1, const GapForm& g2, const Vec& v,
                          double eps1, double eps2) {
  InnerResult r;
  if (g1.singleton) {
    r.v1 = g1.point;
    r.excess = std::max(-eps1, g2.value(v - g1.point) - eps2);
    return r;
  }
  if (g2.singleton) {
    r.v1 = v - g2.point;
    r.excess = std::max(g1.value(r.v1) - eps1, -eps2);
    return r;
  }
  const auto a = [&](const Vec& u) { return g1.value(u) - eps1; };
  const auto b = [&](const Vec& u) { return g2.value(v - u) - eps2; };
  // Unconstrained minimizers first.
  const Vec va = g1.g;
  if (b(va) <= a(va)) {
    r.v1 = va;
    r.excess = a(va);
    return r;
  }
  const Vec vb = v - g2.g;
  if (a(vb) <= b(vb)) {
    r.v1 = vb;
    r.excess = b(vb);
    return r;
  }
  // Path of minimizers of (1-t) q1-form + t q2-form; d(t) = a - b crosses 0.
  const Mat q1i = g1.q.inverse();
  const Mat q2i = g2.q.inverse();
  const auto path_point = [&](double t) -> Vec {
    const Mat h = (1.0 - t) * q1i + t * q2i;
    const Vec rhs = (1.0 - t) * (q1i * g1.g) + t * (q2i * (v - g2.g));
    return h.ldlt().solve(rhs);
  };
  double tl = 0.0, th = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double tm = 0.5 * (tl + th);
    const Vec u = path_point(tm);
    if (a(u) - b(u) <= 0.0)
      tl = tm;
    else
      th = tm;
  }
  const Vec u = path_point(tl);
  r.v1 = u;
  r.excess = std::max(a(u), b(u));
  return r;
}

}  // namespace

std::optional<SumRuleSplit> check_sum_rule_decomposition(
    const Expr& f1, const Expr& f2, const Vec& x, double eps, const Vec& v,
    double grid_res) {
  if (eps < 0.0)
    throw std::invalid_argument("check_sum_rule_decomposition: eps < 0");
  if (!f1.convexity().certified_convex() ||
      !f2.convexity().certified_convex())
    throw NonConvexProblem("sum rule requires certified convex parts");

  // Precondition: v in the eps-subdifferential of f1+f2 at x.
  const Expr sum = Expr::nonneg_combination({1.0, 1.0}, {f1, f2});
  if (!eps_subdiff_contains(sum, x, v, eps))
    throw std::invalid_argument(
        "check_sum_rule_decomposition: v is not in the eps-subdifferential "
        "of f1+f2 at x");

  const auto g1 = gap_form(f1, x);
  const auto g2 = gap_form(f2, x);
  if (!g1 || !g2)
    throw UnsupportedAtomForMembership(
        "sum rule decomposition needs affine or positive-definite quadratic "
        "parts");

  const auto excess_at = [&](double eps1) {
    return inner_minimax(*g1, *g2, v, eps1, eps - eps1);
  };
  const auto make_split = [&](double eps1, const InnerResult& ir) {
    SumRuleSplit s;
    s.eps1 = eps1;
    s.eps2 = eps - eps1;
    s.v1 = ir.v1;
    s.v2 = v - ir.v1;
    return s;
  };

  // Grid scan; the excess is convex in eps1, so remember the best bracket.
  const int steps = std::max(1, static_cast<int>(std::round(1.0 / grid_res)));
  double best_eps1 = 0.0;
  double best_excess = kInf;
  for (int i = 0; i <= steps; ++i) {
    const double eps1 = eps * static_cast<double>(i) / steps;
    const InnerResult ir = excess_at(eps1);
    if (ir.excess <= kTolMembership) return make_split(eps1, ir);
    if (ir.excess < best_excess) {
      best_excess = ir.excess;
      best_eps1 = eps1;
    }
  }
  // Ternary refinement around the best grid point.
  const double h = eps > 0.0 ? eps / steps : 0.0;
  double lo = std::max(0.0, best_eps1 - h);
  double hi = std::min(eps, best_eps1 + h);
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (excess_at(m1).excess <= excess_at(m2).excess)
      hi = m2;
    else
      lo = m1;
  }
  const double eps1 = 0.5 * (lo + hi);
  const InnerResult ir = excess_at(eps1);
  if (ir.excess <= kTolMembership) return make_split(eps1, ir);
  return std::nullopt;
}

}  // namespace ivo
