#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "markpoint/types.hpp"

namespace markpoint {

struct Bandwidths {
  double h_mu = 0.0;
  double h_y = 0.0;
  double h_sigma = 0.0;
  double h_xy = 0.0;
  double h_tau = 0.0;
  double h_mu_test = 0.0;
  double h_sigma_test = 0.0;

  // All positive and below half the window length.
  void validate(const Window& window) const;
};

// h / (n^{1/20} log log n). Requires n >= 3.
double undersmooth_for_test(double h, std::size_t n);

// `count` geometrically spaced values between lo_frac and hi_frac of the window length.
std::vector<double> geometric_grid(double lo_frac, double hi_frac, const Window& window,
                                   std::size_t count = 10);

// Random partition of 0..n-1 into k folds of near-equal size.
std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t k, std::uint64_t seed);

// Cross-validation criteria. Each returns the summed held-out loss over folds;
// NaN when a fit is undefined at some held-out point. CV2-CV4 center with the
// mean fitted on the training folds at h_mu_hat.
double cv_mean(const ReplicatedSample& sample, const std::vector<std::vector<std::size_t>>& folds,
               double h_mu);
double cv_cov(const ReplicatedSample& sample, const std::vector<std::vector<std::size_t>>& folds,
              double h_mu_hat, double h_y);
double cv_var(const ReplicatedSample& sample, const std::vector<std::vector<std::size_t>>& folds,
              double h_mu_hat, double h_sigma);
double cv_crosscov(const ReplicatedSample& sample,
                   const std::vector<std::vector<std::size_t>>& folds, double h_mu_hat,
                   double h_xy);

// Leave-one-replicate-out least-squares CV for the first-order intensity:
// sum_i [ integral rho^(-i)^2 - 2 sum_{u in N_i} rho^(-i)(u) ].
double cv_rho(const ReplicatedSample& sample, double h, std::size_t quad_points = 201);

// Same criterion for the pair intensity, over ordered distinct pairs:
// sum_i [ double integral rho2^(-i)^2 - 2 sum_{u != v in N_i} rho2^(-i)(u, v) ].
double cv_rho2(const ReplicatedSample& sample, double h, std::size_t quad_points = 101);

struct CvTrace {
  std::vector<double> candidates;
  std::vector<double> scores;  // NaN for failed candidates
  double best = 0.0;
};

// Picks the minimizing candidate; near-ties go to the larger bandwidth.
// Throws if every candidate failed.
double argmin_bandwidth(const std::string& name, const std::vector<double>& candidates,
                        const std::vector<double>& scores);

struct SelectOptions {
  std::size_t folds = 10;
  std::uint64_t seed = 1;
  // Replicates with more events are left out of selection; 0 disables.
  std::size_t max_events = 200;
  // Empty grids fall back to the defaults.
  std::vector<double> grid_mu, grid_y, grid_sigma, grid_xy, grid_tau;
};

struct Selection {
  Bandwidths bandwidths;
  CvTrace mu, y, sigma, xy, tau;
  std::vector<std::vector<std::size_t>> folds;
  std::size_t dropped = 0;  // replicates removed by the event cap
};

// Defaults used when a grid is empty.
std::vector<double> default_grid_mu(const Window& w);
std::vector<double> default_grid_y(const Window& w);
std::vector<double> default_grid_tau(const Window& w);

Selection select_bandwidths(const ReplicatedSample& sample, const SelectOptions& opts = {});

// Only the intensity bandwidth (used for h_tau and the LGCP fit).
CvTrace select_rho_bandwidth(const ReplicatedSample& sample, const std::vector<double>& grid);
// Bandwidth of the pair intensity in the LGCP fit.
CvTrace select_rho2_bandwidth(const ReplicatedSample& sample, const std::vector<double>& grid);

}  // namespace markpoint
