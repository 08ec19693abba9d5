#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "markpoint/asymtest.hpp"
#include "markpoint/rng.hpp"
#include "markpoint/smooth.hpp"

namespace markpoint {

struct FpcModel {
  Grid grid;
  std::vector<double> eigenvalues;  // retained, nonincreasing
  Eigen::MatrixXd eigenfunctions;   // grid x p_y, quadrature-orthonormal
  std::size_t p_y = 0;
  double sigma_e2 = 0.0;
  double explained_fraction = 0.0;
  std::size_t positive_rank = 0;  // number of positive eigenvalues

  // phi_k(s) by linear interpolation on the grid.
  double phi(std::size_t k, double s) const;
};

// Weighted eigen-decomposition of a symmetric surface; keeps the smallest
// number of components reaching `fraction` of the positive spectrum.
FpcModel fpc_decompose(const Eigen::MatrixXd& cov, const Grid& grid, double sigma_e2 = 0.0,
                       double fraction = 0.95);
FpcModel fpc_decompose(const SurfaceEstimate& cov, double sigma_e2 = 0.0, double fraction = 0.95);

// Grid average of max(sigma_tilde(s) - cov(s, s), 0).
double noise_variance(const CurveEstimate& sigma_tilde, const SurfaceEstimate& cov);

enum class ScoreMethod { least_squares, blup };
std::string to_string(ScoreMethod m);

struct ReplicateScores {
  Eigen::VectorXd xi;
  ScoreMethod method = ScoreMethod::least_squares;
  std::optional<double> leverage;  // trace of the inverse normal matrix
  std::vector<double> residuals;   // at event times
  bool singular_fallback = false;  // least squares failed, BLUP used
  bool ridge = false;              // BLUP system needed a ridge
};

struct ScoreSet {
  std::vector<ReplicateScores> replicates;
  std::size_t eligible = 0;        // replicates with at least p_y events
  std::size_t replaced_top = 0;    // eligible replicates moved to BLUP by leverage
  std::size_t blup_count = 0;
  std::string quantile_base = "ls_eligible";
};

// Least-squares scores, with BLUP for sparse replicates and for the top
// quarter of eligible replicates by leverage.
ScoreSet estimate_scores(const ReplicatedSample& sample, const FpcModel& model,
                         const std::function<double(double)>& mu_hat);
// Same, with mu_hat already evaluated at every event.
ScoreSet estimate_scores(const ReplicatedSample& sample, const FpcModel& model,
                         const std::vector<std::vector<double>>& mu_at);

// Marks mu + xi_{perm[i]}' phi + residual at the original event times. `pooled`
// holds one residual per event, consumed replicate by replicate.
ReplicatedSample reconstruct(const ReplicatedSample& sample, const ScoreSet& scores,
                             const FpcModel& model, const std::vector<std::vector<double>>& mu_at,
                             const std::vector<std::size_t>& perm, const std::vector<double>& pooled);

// Random score permutation plus a shuffle of the pooled residuals.
ReplicatedSample permute_dataset(const ReplicatedSample& sample, const ScoreSet& scores,
                                 const FpcModel& model,
                                 const std::vector<std::vector<double>>& mu_at, Rng& rng);

struct PermutationResult {
  TestReport report;
  std::vector<double> permuted_tn;
  FpcModel model;
  ScoreSet scores;
};

PermutationResult permutation_test(const ReplicatedSample& sample, const Bandwidths& bw,
                                   std::size_t b, std::uint64_t seed,
                                   const Grid* grid = nullptr);

}  // namespace markpoint
