#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "markpoint/bandwidth.hpp"
#include "markpoint/simgen.hpp"

namespace markpoint {

enum class ExperimentKind { size, power, mad_rates };
std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

enum class TestMethod { asym, perm, both };
std::string to_string(TestMethod m);
TestMethod test_method_from_string(const std::string& s);

// Monte Carlo study over the grid n x sigma_x x (q, or gamma for power).
// Each cell holds its bandwidths fixed for all runs: either `bandwidths` as
// given, or the average of CV selections over `pilots` pilot datasets.
struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::size;
  std::vector<std::size_t> n{300};
  std::vector<double> sigma_x{1.0};
  std::vector<double> q{0.0};
  std::vector<double> gamma{5.0};
  Marginal marginal_x = Marginal::gaussian;
  Marginal marginal_y = Marginal::gaussian;
  double R = 0.1;
  double sigma_e = 1.0;
  std::size_t runs = 100;
  std::uint64_t seed = 1;
  std::vector<double> alphas{0.05, 0.10};
  TestMethod method = TestMethod::asym;
  std::size_t b = 199;
  std::size_t pilots = 3;
  std::size_t folds = 10;
  std::size_t grid_points = 51;
  std::optional<Bandwidths> bandwidths;

  void validate() const;
};

std::string experiment_spec_to_json(const ExperimentSpec& spec);

struct ExperimentCell {
  std::size_t id = 0;
  std::size_t n = 0;
  double sigma_x = 0.0;
  double q = 0.0;
  std::optional<double> gamma;
  Bandwidths bandwidths;
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct RunRow {
  std::size_t cell = 0;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::string error;  // empty when the run succeeded
  double t_n = kNaN, omega = kNaN, z = kNaN;
  double p_asym = kNaN, p_perm = kNaN;
  double mad_mu_naive = kNaN, mad_mu = kNaN, mad_sigma2 = kNaN;
  double mad_cy_naive = kNaN, mad_cy = kNaN, mad_cxy = kNaN;
};

struct CellSummary {
  ExperimentCell cell;
  std::size_t ok = 0;
  std::size_t failed = 0;
  // Per alpha, in spec order; empty for mad-rates.
  std::vector<double> reject_asym, reject_perm;
  double mallows_asym = kNaN, mallows_perm = kNaN;
  double mad_mu_naive = kNaN, mad_mu = kNaN, mad_sigma2 = kNaN;
  double mad_cy_naive = kNaN, mad_cy = kNaN, mad_cxy = kNaN;
};

// Log-log least-squares slope of a MAD mean against n, one per (sigma_x, q).
struct RateSlope {
  std::string quantity;
  double sigma_x = 0.0;
  double q = 0.0;
  double slope = kNaN;
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<RunRow> rows;
  std::vector<CellSummary> cells;
  std::vector<RateSlope> slopes;
};

std::vector<ExperimentCell> experiment_cells(const ExperimentSpec& spec);

// Average of CV-selected bandwidths over `pilots` datasets drawn from `cfg`
// with seeds derived from cfg.seed.
Bandwidths pilot_bandwidths(const SimConfig& cfg, std::size_t pilots, std::size_t folds = 10);

// Integral of |F^{-1}(u) - u| over [0, 1] for the empirical CDF F of p.
double mallows_distance(std::vector<double> p);

// Slope of the least-squares line through (log x, log y).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

// Trapezoid-rule mean absolute deviations against the simulation truth.
double mad_curve(const Grid& grid, const std::vector<double>& est, const std::function<double(double)>& truth);
double mad_surface(const Grid& grid, const Eigen::MatrixXd& est,
                   const std::function<double(double, double)>& truth);

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t tag);

// Runs one dataset of a cell. Errors are caught and recorded in the row.
RunRow run_one(const ExperimentSpec& spec, const ExperimentCell& cell, std::size_t run);

ExperimentResult run_experiment(const ExperimentSpec& spec);

std::string experiment_rows_csv(const ExperimentResult& r);
std::string experiment_summary_csv(const ExperimentResult& r);
std::string experiment_summary_json(const ExperimentResult& r);

}  // namespace markpoint
