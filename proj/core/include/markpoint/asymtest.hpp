#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "markpoint/bandwidth.hpp"
#include "markpoint/smooth.hpp"

namespace markpoint {

struct TestReport {
  double t_n = 0.0;
  double omega_hat = 0.0;
  double z = 0.0;
  double p_two_sided = 1.0;
  double p_one_sided = 0.5;
  std::optional<double> p_permutation;
  std::optional<std::size_t> b;
  Bandwidths bandwidths;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  // Free-form notes (score method counts, fallbacks).
  std::vector<std::string> notes;
};

std::string report_to_json(const TestReport& r);
std::string bandwidths_to_json(const Bandwidths& b);
Bandwidths bandwidths_from_json(const std::string& text);

// T_n = (1/n) sum_i (n_i - 1) sum_{v in N_i} {[Z_i(v) - mu(v)]^2 - sigma2(v)}.
double compute_tn(const ReplicatedSample& sample, const std::function<double(double)>& mu,
                  const std::function<double(double)>& sigma2);
double compute_tn(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                  const CurveEstimate& sigma_tilde);

// T_n with the mean and variance refitted at h_mu_test and h_sigma_test.
double tn_at_test_bandwidths(const ReplicatedSample& sample, const Bandwidths& bw);

// The five per-replicate sums of the empirical variance, before averaging.
// cy(a, b) is the leave-one-out corrected covariance at (t_a, t_b); sigma2 and
// tau are leave-one-out values at the replicate's event times.
std::array<double, 5> omega_terms(const Eigen::MatrixXd& cy, std::span<const double> sigma2,
                                  std::span<const double> tau);

struct OmegaResult {
  double value = 0.0;
  std::vector<double> per_replicate;
};

// Average of the per-replicate variance sums with replicate i left out of
// every estimate it uses. Uses the estimation bandwidths h_mu, h_y, h_xy,
// h_sigma and h_tau.
OmegaResult estimate_omega(const ReplicatedSample& sample, const Bandwidths& bw);

// Fits the mean and variance at the test bandwidths, computes T_n, the
// empirical variance and both p-values.
TestReport asymptotic_test(const ReplicatedSample& sample, const Bandwidths& bw);

// Normal tail helpers.
double p_value_two_sided(double z);
double p_value_one_sided(double z);

}  // namespace markpoint
