#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "markpoint/fpcperm.hpp"
#include "markpoint/rng.hpp"
#include "markpoint/smooth.hpp"

namespace markpoint {

// Edge-corrected kernel estimates of the first- and second-order intensity.
// rho2 sums over ordered pairs of distinct events of the same replicate.
CurveEstimate estimate_rho(const ReplicatedSample& sample, double h1, const Grid& grid);
SurfaceEstimate estimate_rho2(const ReplicatedSample& sample, double h2, const Grid& grid);

struct LgcpFit {
  CurveEstimate rho;
  CurveEstimate lambda0;  // rho * exp(-max(cx(s, s), 0) / 2)
  SurfaceEstimate cx;     // symmetrized; diagonal not clipped
  Eigen::MatrixXd cx_raw; // log rho2 - log rho - log rho, before symmetrizing
  double h1 = 0.0;
  double h2 = 0.0;
};

// Log-ratio fit of the latent covariance and baseline intensity. Throws
// EstimationError naming the grid nodes where rho or rho2 is not positive.
LgcpFit fit_lgcp(const ReplicatedSample& sample, double h1, double h2, const Grid& grid);

// Draws point patterns from a fitted LGCP: the latent field on a uniform grid
// from a factor of the fitted covariance, intensity linear between nodes,
// events by thinning.
class LgcpSampler {
 public:
  explicit LgcpSampler(const LgcpFit& fit, std::size_t grid_points = 256);

  // Times only; marks are all 0.
  MarkedPattern draw(Rng& rng) const;

  // "cholesky" with the ridge that worked, or "eigen-clip".
  const std::string& factor_method() const { return method_; }
  double ridge() const { return ridge_; }
  const std::vector<double>& grid() const { return grid_; }
  // Expected count: integral of lambda0 exp(var/2) over the sampler grid.
  double expected_count() const;

 private:
  Window window_;
  std::vector<double> grid_;
  std::vector<double> lambda0_;
  std::vector<double> var_;
  Eigen::MatrixXd factor_;
  std::string method_;
  double ridge_ = 0.0;
};

MarkedPattern simulate_fitted_lgcp(const LgcpFit& fit, Rng& rng);

struct GCurve {
  std::vector<double> distances;
  std::vector<double> values;
  std::size_t used = 0;     // replicates with at least two events
  std::size_t skipped = 0;  // replicates left out
};

// Average over replicates of the empirical CDF of nearest-neighbor distances.
GCurve g_function(const ReplicatedSample& sample, const std::vector<double>& distances);

struct GEnvelope {
  std::vector<double> distances;
  std::vector<double> lo, hi, mean;
  double level = 0.95;
  std::size_t sims = 0;
  std::optional<GCurve> observed;
  // (mean simulated, observed) at each distance when an observed curve is given.
  std::vector<std::pair<double, double>> pairs;
  // Fraction of distances where the observed curve lies inside [lo, hi].
  std::optional<double> inside_fraction;
};

// Type-7 empirical quantile of unsorted data.
double quantile7(std::vector<double> x, double p);

// Pointwise simulation envelope of G from `sims` datasets of `replicates`
// patterns each. Simulation k uses its own stream from (seed, k).
GEnvelope g_envelope(const LgcpSampler& sampler, std::size_t replicates,
                     const std::vector<double>& distances, std::size_t sims, double level,
                     std::uint64_t seed, const GCurve* observed = nullptr);

// (standard normal quantile at (i - 0.5)/n, sorted score / sqrt(eigenvalue)).
std::vector<std::pair<double, double>> fpc_qq_data(const ScoreSet& scores, const FpcModel& model,
                                                   std::size_t k);

}  // namespace markpoint
