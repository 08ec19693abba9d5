#include "markpoint/stein.hpp"

#include <cmath>

#include "markpoint/types.hpp"

namespace markpoint {

double stein_moment(SteinKind kind, const SteinParams& p) {
  if (!(p.sigma_x2 > 0.0)) throw ValidationError("stein_moment: sigma_x2 must be positive");
  const double tilt = std::exp(0.5 * p.sigma_x2);
  // Under the measure tilted by e^X, Y stays normal with its mean shifted by Cov(X, Y).
  const double m1 = p.mu1 + p.cov_x1;
  const double m2 = p.mu2 + p.cov_x2;
  switch (kind) {
    case SteinKind::y_exp:
      return m1 * tilt;
    case SteinKind::y2_exp:
      if (!(p.var1 > 0.0)) throw ValidationError("stein_moment: var1 must be positive");
      return (p.var1 + m1 * m1) * tilt;
    case SteinKind::y1y2_exp:
      if (!(p.var1 > 0.0) || !(p.var2 > 0.0)) throw ValidationError("stein_moment: variances must be positive");
      return (p.cov_12 + m1 * m2) * tilt;
    case SteinKind::y3_exp:
      if (!(p.var1 > 0.0)) throw ValidationError("stein_moment: var1 must be positive");
      return (m1 * m1 * m1 + 3.0 * p.var1 * m1) * tilt;
    case SteinKind::y4_exp: {
      if (!(p.var1 > 0.0)) throw ValidationError("stein_moment: var1 must be positive");
      const double m1sq = m1 * m1;
      return (m1sq * m1sq + 6.0 * p.var1 * m1sq + 3.0 * p.var1 * p.var1) * tilt;
    }
    case SteinKind::xk_exp: {
      const double s2 = p.sigma_x2;
      const double s4 = s2 * s2;
      switch (p.k) {
        case 1: return s2 * tilt;
        case 2: return (s2 + s4) * tilt;
        case 3: return (s4 * s2 + 3.0 * s4) * tilt;
        case 4: return (s4 * s4 + 6.0 * s4 * s2 + 3.0 * s4) * tilt;
        default: throw ValidationError("stein_moment: k must be in 1..4");
      }
    }
  }
  throw ValidationError("stein_moment: unknown kind");
}

SteinKind stein_kind_from_string(const std::string& name) {
  if (name == "y_exp") return SteinKind::y_exp;
  if (name == "y2_exp") return SteinKind::y2_exp;
  if (name == "y1y2_exp") return SteinKind::y1y2_exp;
  if (name == "y3_exp") return SteinKind::y3_exp;
  if (name == "y4_exp") return SteinKind::y4_exp;
  if (name == "xk_exp") return SteinKind::xk_exp;
  throw ValidationError("unknown moment kind '" + name + "'");
}

std::string to_string(SteinKind kind) {
  switch (kind) {
    case SteinKind::y_exp: return "y_exp";
    case SteinKind::y2_exp: return "y2_exp";
    case SteinKind::y1y2_exp: return "y1y2_exp";
    case SteinKind::y3_exp: return "y3_exp";
    case SteinKind::y4_exp: return "y4_exp";
    case SteinKind::xk_exp: return "xk_exp";
  }
  return "unknown";
}

}  // namespace markpoint
