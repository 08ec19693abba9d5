#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "markpoint/types.hpp"

namespace markpoint {

// Floor applied to the naive variance before it is used as a noise level.
inline constexpr double kVarianceFloor = 1e-8;

// Local-linear systems whose smallest eigenvalue is below this fraction of the
// largest one are replaced by the local-constant fit.
inline constexpr double kSingularRatio = 1e-10;

enum class CurveKind { mean_naive, var_naive, mean_corrected, tau, rho, lambda0 };
enum class SurfaceKind { cov_naive, crosscov, cov_corrected, cx, rho2 };

std::string to_string(CurveKind kind);
std::string to_string(SurfaceKind kind);

struct CurveEstimate {
  Grid grid;
  std::vector<double> values;
  double bandwidth = 0.0;
  CurveKind kind = CurveKind::mean_naive;
  // Unclipped values; differs from `values` only for var_naive.
  std::vector<double> raw_values;
  // Grid indices where the local-constant fallback was used.
  std::vector<std::size_t> fallback_points;
  // Fit at an arbitrary point (recomputed from the data, not interpolated).
  // For var_naive this is the unclipped fit.
  std::function<double(double)> evaluator;

  double operator()(double s) const { return evaluator(s); }
  std::vector<double> at(std::span<const double> points) const;
};

struct SurfaceEstimate {
  Grid grid_s;
  Grid grid_t;
  Eigen::MatrixXd values;  // values(a, b) at (grid_s[a], grid_t[b])
  double bandwidth = 0.0;
  SurfaceKind kind = SurfaceKind::cov_naive;
  bool symmetric = false;
  std::vector<std::pair<std::size_t, std::size_t>> fallback_points;
  // Nodes where no pair fell inside the kernel window and the value came from
  // the inflated bandwidth.
  std::vector<std::pair<std::size_t, std::size_t>> inflated_points;
  std::function<double(double, double)> evaluator;

  double operator()(double s, double t) const { return evaluator(s, t); }
  std::vector<double> row_major() const;
};

enum class FitStatus { ok, fallback, no_weight };

struct LocalFit {
  double value = 0.0;
  FitStatus status = FitStatus::ok;
};

// Weighted moment sums of the 1-D local-linear system at a point, with
// x = (u - s)/h and weights K(x): w_k = sum K x^k, r_k = sum K x^k r.
struct LineMoments {
  double w0 = 0, w1 = 0, w2 = 0, r0 = 0, r1 = 0;
  LineMoments& operator+=(const LineMoments& o);
  LineMoments& operator-=(const LineMoments& o);
};

// Intercept of the local-linear fit. `zero_tol` is the weight below which the
// neighborhood counts as empty.
LocalFit solve_line(const LineMoments& m, double zero_tol = 0.0);

// Pooled 1-D local-linear smoother of per-event responses.
class LineSmoother {
 public:
  // responses[i][k] belongs to event k of replicate i.
  LineSmoother(const ReplicatedSample& sample, const std::vector<std::vector<double>>& responses,
               double h);

  double bandwidth() const { return h_; }
  std::size_t replicates() const { return rep_times_.size(); }

  LineMoments moments(double s) const;
  LineMoments replicate_moments(std::size_t i, double s) const;

  LocalFit fit(double s) const;
  // Fit with replicate i removed by subtracting its moments.
  LocalFit fit_without(std::size_t i, double s) const;

 private:
  double h_;
  std::vector<double> times_;
  std::vector<double> resp_;
  std::vector<std::vector<double>> rep_times_;
  std::vector<std::vector<double>> rep_resp_;
};

// Response attached to an ordered pair (u, v) of distinct events.
enum class PairResponse {
  product,  // eps(u) * eps(v)
  second,   // eps(v)
};

// Accumulators of the 3x3 local-linear system over ordered distinct pairs on a
// rows x cols block of evaluation points. b[0..5] hold the sums of K(x)K(y)
// x^p y^q for pq = 00, 10, 01, 20, 11, 02; r[0..2] hold the response sums
// weighted by 1, x, y. `scale` is the weight sum including the u == v terms,
// used to decide when a neighborhood is empty after subtraction.
struct PairBlock {
  std::array<Eigen::MatrixXd, 6> b;
  std::array<Eigen::MatrixXd, 3> r;
  Eigen::MatrixXd scale;

  PairBlock& operator-=(const PairBlock& o);
  LocalFit solve(Eigen::Index a, Eigen::Index c) const;
};

namespace detail {

// Within-bin prefix sums of z^k * w for time-sorted events, where
// z = (u - center)/h and bins have width h. Used to get the u == v terms of
// pair sums in closed form: on the overlap of two kernel windows the product
// of kernels is a polynomial in u.
class PowerTable {
 public:
  static constexpr int kPowers = 7;

  PowerTable() = default;
  PowerTable(std::span<const double> sorted_times, std::span<const double> weight, double h);

  // Sums over events u of K(x)K(y) x^p y^q (into b) and of the same weights
  // times `weight` for pq = 00, 10, 01 (into r), where x = (u-s)/h, y = (u-t)/h.
  void diag(double s, double t, double b[6], double r[3]) const;

 private:
  double h_ = 1.0;
  double origin_ = 0.0;
  std::vector<double> times_;
  std::vector<std::size_t> bin_start_;
  std::vector<double> prefix_;  // per event: kPowers x 2 sums before it in its bin
  std::vector<double> total_;   // per bin: kPowers x 2
};

}  // namespace detail

// 2-D local-linear smoother over ordered distinct within-replicate pairs.
// Pair sums are formed from per-replicate feature sums (an exact separable
// identity) minus the u == v terms.
class PairSmoother {
 public:
  PairSmoother(const ReplicatedSample& sample, const std::vector<std::vector<double>>& residuals,
               double h, PairResponse response);

  double bandwidth() const { return h_; }
  PairResponse response() const { return response_; }
  bool has_pairs() const { return has_pairs_; }

  PairBlock accumulate(std::span<const double> rows, std::span<const double> cols) const;
  // Sums with replicate i left out, computed by dropping its features. Equal
  // to accumulate - replicate_block(i) up to rounding; `scale` keeps the
  // full-data weight.
  PairBlock accumulate_without(std::size_t i, std::span<const double> rows,
                               std::span<const double> cols) const;
  // Contribution of replicate i alone (for leave-one-out by subtraction).
  PairBlock replicate_block(std::size_t i, std::span<const double> rows,
                            std::span<const double> cols) const;

  LocalFit fit(double s, double t) const;

 private:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  struct Features {
    RowMatrix f[3];  // sum K x^p
    RowMatrix g[2];  // sum K x^p eps
  };
  Features features(std::span<const double> coords) const;
  static constexpr std::size_t kNoSkip = static_cast<std::size_t>(-1);
  PairBlock assemble(std::span<const double> rows, std::span<const double> cols,
                     std::size_t skip) const;

  double h_;
  PairResponse response_;
  bool has_pairs_ = false;
  std::size_t n_ = 0;
  std::vector<double> times_;
  std::vector<double> eps_;
  std::vector<std::size_t> rep_;
  std::vector<std::vector<double>> rep_times_;
  std::vector<std::vector<double>> rep_eps_;
  detail::PowerTable table_;
};

// Marks of every replicate, in event order.
std::vector<std::vector<double>> marks_of(const ReplicatedSample& sample);
// Z_i(u) - curve(u) at every event.
std::vector<std::vector<double>> residuals(const ReplicatedSample& sample,
                                           const CurveEstimate& curve);

CurveEstimate estimate_mean_naive(const ReplicatedSample& sample, double h_mu, const Grid& grid);
CurveEstimate estimate_var_naive(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                                 double h_sigma, const Grid& grid);
SurfaceEstimate estimate_cov_naive(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                                   double h_y, const Grid& grid);
SurfaceEstimate estimate_crosscov(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                                  double h_xy, const Grid& grid);
CurveEstimate estimate_tau(const ReplicatedSample& sample, double h_tau, const Grid& grid);

CurveEstimate correct_mean(const CurveEstimate& mu_tilde, const SurfaceEstimate& cxy);
SurfaceEstimate correct_cov(const SurfaceEstimate& cy_tilde, const SurfaceEstimate& cxy);

// Generic drivers shared by the estimators above and by the CV code.
CurveEstimate smooth_curve(std::shared_ptr<const LineSmoother> smoother, const Grid& grid,
                           CurveKind kind);
SurfaceEstimate smooth_surface(const ReplicatedSample& sample,
                               const std::vector<std::vector<double>>& residuals, double h,
                               PairResponse response, const Grid& grid, SurfaceKind kind);

// tau-hat numerator and denominator sums at s, optionally without replicate i.
struct TauSums {
  double num = 0.0;
  double den = 0.0;
};
class TauSmoother {
 public:
  TauSmoother(const ReplicatedSample& sample, double h);
  TauSums sums(double s) const;
  TauSums replicate_sums(std::size_t i, double s) const;
  double value(double s) const;
  double value_without(std::size_t i, double s) const;
  double bandwidth() const { return h_; }

 private:
  double kernel_weight(double u, double s) const;

  double h_;
  std::vector<double> times_;
  std::vector<double> pair_weight_;  // n_i - 1 for the event's replicate
  std::vector<std::vector<double>> rep_times_;
};

// Naive fits, cross-covariance and the two corrected functions, all on `grid`.
// Residuals for the second-order fits are taken about the naive mean.
struct MarkEstimates {
  CurveEstimate mu_naive;
  CurveEstimate sigma2;
  SurfaceEstimate cy_naive;
  SurfaceEstimate cxy;
  CurveEstimate mu_corrected;
  SurfaceEstimate cy_corrected;
};

MarkEstimates estimate_mark_functions(const ReplicatedSample& sample, double h_mu, double h_sigma,
                                      double h_y, double h_xy, const Grid& grid);

}  // namespace markpoint
