#pragma once

#include <string>

namespace markpoint {

// Closed-form moments of normal variables tilted by exp(X), with X ~ N(0, sigma_x2).
enum class SteinKind { y_exp, y2_exp, y1y2_exp, y3_exp, y4_exp, xk_exp };

struct SteinParams {
  double sigma_x2 = 1.0;
  double mu1 = 0.0, var1 = 1.0, cov_x1 = 0.0;  // Y1
  double mu2 = 0.0, var2 = 1.0, cov_x2 = 0.0;  // Y2 (y1y2_exp only)
  double cov_12 = 0.0;                          // Cov(Y1, Y2)
  int k = 1;                                    // power of X for xk_exp, 1..4
};

// E[Y1 e^X], E[Y1^2 e^X], E[Y1 Y2 e^X], E[Y1^3 e^X], E[Y1^4 e^X] or E[X^k e^X].
double stein_moment(SteinKind kind, const SteinParams& p);

SteinKind stein_kind_from_string(const std::string& name);
std::string to_string(SteinKind kind);

}  // namespace markpoint
