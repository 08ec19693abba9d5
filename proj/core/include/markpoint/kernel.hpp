#pragma once

#include "markpoint/types.hpp"

namespace markpoint {

// Epanechnikov kernel on [-1, 1].
inline double kernel1(double u) {
  return (u >= -1.0 && u <= 1.0) ? 0.75 * (1.0 - u * u) : 0.0;
}

// Product kernel on [-1, 1]^2.
inline double kernel2(double u, double v) { return kernel1(u) * kernel1(v); }

// Scaled kernel K_h(x) = K(x/h)/h.
inline double kernel_h(double x, double h) { return kernel1(x / h) / h; }

// Integral of the kernel from -1 to z (0 below the support, 1 above).
inline double kernel1_cdf(double z) {
  if (z <= -1.0) return 0.0;
  if (z >= 1.0) return 1.0;
  return 0.5 + 0.75 * z - 0.25 * z * z * z;
}

// e(s;h) = integral over the window of K_h(s - x) dx.
inline double edge_correction(double s, double h, const Window& w) {
  return kernel1_cdf((s - w.lo()) / h) - kernel1_cdf((s - w.hi()) / h);
}

}  // namespace markpoint
