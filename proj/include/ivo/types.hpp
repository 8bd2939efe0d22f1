#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <string>

namespace ivo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// All report output goes through fmt_real so that runs are byte-reproducible:
// 12 significant digits, no locale dependence.
inline std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline std::string fmt_point(const Vec& x) {
  std::string s = "(";
  for (int i = 0; i < x.size(); ++i) {
    if (i) s += ", ";
    s += fmt_real(x[i]);
  }
  s += ")";
  return s;
}

}  // namespace ivo
