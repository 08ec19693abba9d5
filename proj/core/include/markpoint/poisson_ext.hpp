#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "markpoint/simgen.hpp"
#include "markpoint/smooth.hpp"

namespace markpoint {

// Kernel sums of the count-mark model on a grid, without edge correction:
//   a(s)    = (1/n) sum_i sum_u K_h(s-u)
//   b(s)    = (1/n) sum_i sum_u Z(u) K_h(s-u)
//   c(s, t) = (1/n) sum_i sum_{u != v} Z(u) K_h(s-u) K_h(t-v)
//   d(s, t) = (1/n) sum_i sum_{u != v} K_h(s-u) K_h(t-v)
//   e(s, t) = (1/n) sum_i sum_{u != v} Z(u) Z(v) K_h(s-u) K_h(t-v)
struct PoissonAccumulators {
  std::vector<double> a, b;
  Eigen::MatrixXd c, d, e;  // (row, col) = (s, t)
};

PoissonAccumulators poisson_accumulators(const ReplicatedSample& sample, double h, const Grid& grid);

struct PoissonMarkFit {
  Grid grid;
  double h = 0.0;
  PoissonAccumulators acc;
  CurveEstimate mu;
  SurfaceEstimate cx;   // symmetrized
  SurfaceEstimate cxy;  // values(a, b) = Cov(X(s_a), Y(s_b))
  SurfaceEstimate cy;
};

// Log-ratio estimates from accumulators; throws EstimationError naming the
// nodes where an accumulator is not positive.
PoissonMarkFit poisson_fit_from(const PoissonAccumulators& acc, const Grid& grid, double h);

// Marks must be nonnegative integers.
PoissonMarkFit estimate_poisson_mark_model(const ReplicatedSample& sample, double h, const Grid& grid);

// Same point patterns and latent scores as `sim`, with marks drawn as
// Poisson(exp(mu(s) + Y(s))) from streams keyed by (seed, replicate).
ReplicatedSample simulate_poisson_marks(const Simulator& sim, std::uint64_t seed);

}  // namespace markpoint
