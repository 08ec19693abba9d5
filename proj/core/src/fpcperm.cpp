#include "markpoint/fpcperm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "markpoint/io.hpp"
#include "markpoint/linalg.hpp"
#include "markpoint/parallel.hpp"

namespace markpoint {

double FpcModel::phi(std::size_t k, double s) const {
  const auto col = eigenfunctions.col(static_cast<Eigen::Index>(k));
  return grid.interpolate(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), s);
}

FpcModel fpc_decompose(const Eigen::MatrixXd& cov, const Grid& grid, double sigma_e2,
                       double fraction) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  if (cov.rows() != m || cov.cols() != m) throw ValidationError("fpc: surface and grid sizes differ");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fpc: fraction must lie in (0, 1]");
  const double scale = cov.cwiseAbs().maxCoeff();
  const double asym = (cov - cov.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(scale, 1e-300)) {
    throw ValidationError("fpc: covariance surface is not symmetric (max |C - C'| = " +
                          format_double(asym) + ")");
  }
  WeightedEigen we = weighted_eigen(cov, grid.weights());
  // Eigenvalues at rounding level count as zero.
  const double floor = 1e-12 * std::max(we.values.cwiseAbs().maxCoeff(), 1e-300);
  double total = 0.0;
  Eigen::Index positive = 0;
  for (Eigen::Index k = 0; k < we.values.size(); ++k) {
    if (we.values(k) > floor) {
      total += we.values(k);
      ++positive;
    }
  }
  if (positive == 0) throw EstimationError("fpc: no positive eigenvalues");
  Eigen::Index keep = 0;
  double cum = 0.0;
  while (keep < positive) {
    cum += we.values(keep);
    ++keep;
    if (cum >= fraction * total) break;
  }
  FpcModel out{grid, {}, we.functions.leftCols(keep), static_cast<std::size_t>(keep),
               std::max(sigma_e2, 0.0), cum / total, static_cast<std::size_t>(positive)};
  orient_columns(out.eigenfunctions);
  for (Eigen::Index k = 0; k < keep; ++k) out.eigenvalues.push_back(we.values(k));
  return out;
}

FpcModel fpc_decompose(const SurfaceEstimate& cov, double sigma_e2, double fraction) {
  return fpc_decompose(cov.values, cov.grid_s, sigma_e2, fraction);
}

double noise_variance(const CurveEstimate& sigma_tilde, const SurfaceEstimate& cov) {
  const std::size_t m = sigma_tilde.grid.size();
  if (cov.values.rows() != static_cast<Eigen::Index>(m) ||
      cov.values.cols() != static_cast<Eigen::Index>(m)) {
    throw ValidationError("noise_variance: grid sizes differ");
  }
  double sum = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    const auto aa = static_cast<Eigen::Index>(a);
    sum += std::max(sigma_tilde.values[a] - cov.values(aa, aa), 0.0);
  }
  return sum / static_cast<double>(m);
}

std::string to_string(ScoreMethod m) {
  return m == ScoreMethod::least_squares ? "least_squares" : "blup";
}

namespace {

// BLUP: Lambda Phi' (Phi Lambda Phi' + s2 I)^{-1} r.
Eigen::VectorXd blup(const Eigen::MatrixXd& phi, const Eigen::VectorXd& lambda,
                     const Eigen::VectorXd& r, double s2, bool& ridge) {
  const auto p = lambda.size();
  if (phi.rows() == 0) return Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd sys = phi * lambda.asDiagonal() * phi.transpose();
  sys.diagonal().array() += s2;
  Eigen::LLT<Eigen::MatrixXd> llt(sys);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const Eigen::VectorXd d = llt.matrixLLT().diagonal();
    ok = d.minCoeff() > 1e-7 * std::sqrt(std::max(sys.diagonal().maxCoeff(), 1e-300));
  }
  if (!ok) {
    ridge = true;
    sys.diagonal().array() += 1e-8;
    llt.compute(sys);
    if (llt.info() != Eigen::Success) throw EstimationError("BLUP system is singular");
  }
  return lambda.asDiagonal() * (phi.transpose() * llt.solve(r));
}

}  // namespace

ScoreSet estimate_scores(const ReplicatedSample& sample, const FpcModel& model,
                         const std::function<double(double)>& mu_hat) {
  std::vector<std::vector<double>> mu_at(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i)
    for (double s : sample[i].times()) mu_at[i].push_back(mu_hat(s));
  return estimate_scores(sample, model, mu_at);
}

ScoreSet estimate_scores(const ReplicatedSample& sample, const FpcModel& model,
                         const std::vector<std::vector<double>>& mu_at) {
  if (mu_at.size() != sample.size()) throw ValidationError("scores: mean values do not match sample");
  const std::size_t p = model.p_y;
  if (p == 0) throw ValidationError("scores: model has no components");
  const Eigen::VectorXd lambda = Eigen::Map<const Eigen::VectorXd>(model.eigenvalues.data(),
                                                                   static_cast<Eigen::Index>(p));
  const std::size_t n = sample.size();
  ScoreSet out;
  out.replicates.resize(n);
  std::vector<Eigen::MatrixXd> phis(n);
  std::vector<Eigen::VectorXd> centered(n);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& pat = sample[i];
    const auto ni = static_cast<Eigen::Index>(pat.size());
    Eigen::MatrixXd& phi = phis[i];
    phi.resize(ni, static_cast<Eigen::Index>(p));
    centered[i].resize(ni);
    for (Eigen::Index e = 0; e < ni; ++e) {
      const double s = pat.times()[static_cast<std::size_t>(e)];
      for (std::size_t k = 0; k < p; ++k) phi(e, static_cast<Eigen::Index>(k)) = model.phi(k, s);
      centered[i](e) = pat.marks()[static_cast<std::size_t>(e)] - mu_at[i].at(static_cast<std::size_t>(e));
    }
    ReplicateScores& rs = out.replicates[i];
    if (pat.size() >= p) {
      ++out.eligible;
      const Eigen::MatrixXd normal = phi.transpose() * phi;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(normal);
      const double lmax = es.eigenvalues().maxCoeff();
      const double lmin = es.eigenvalues().minCoeff();
      if (es.info() == Eigen::Success && lmax > 0.0 && lmin >= 1e-10 * lmax) {
        const Eigen::MatrixXd inv =
            es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
        rs.leverage = inv.trace();
        rs.xi = inv * (phi.transpose() * centered[i]);
        rs.method = ScoreMethod::least_squares;
        continue;
      }
      rs.singular_fallback = true;
    }
    rs.method = ScoreMethod::blup;
  }

  // Top quarter of the eligible replicates by leverage move to BLUP.
  std::vector<std::size_t> ranked;
  for (std::size_t i = 0; i < n; ++i)
    if (out.replicates[i].leverage) ranked.push_back(i);
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    return *out.replicates[a].leverage > *out.replicates[b].leverage;
  });
  const auto quota = static_cast<std::size_t>(std::ceil(0.25 * static_cast<double>(out.eligible)));
  for (std::size_t k = 0; k < std::min(quota, ranked.size()); ++k) {
    out.replicates[ranked[k]].method = ScoreMethod::blup;
    ++out.replaced_top;
  }

  for (std::size_t i = 0; i < n; ++i) {
    ReplicateScores& rs = out.replicates[i];
    if (rs.method == ScoreMethod::blup) {
      rs.xi = blup(phis[i], lambda, centered[i], model.sigma_e2, rs.ridge);
      ++out.blup_count;
    }
    const Eigen::VectorXd res = centered[i] - phis[i] * rs.xi;
    rs.residuals.assign(res.data(), res.data() + res.size());
  }
  return out;
}

ReplicatedSample reconstruct(const ReplicatedSample& sample, const ScoreSet& scores,
                             const FpcModel& model, const std::vector<std::vector<double>>& mu_at,
                             const std::vector<std::size_t>& perm, const std::vector<double>& pooled) {
  const std::size_t n = sample.size();
  if (perm.size() != n || scores.replicates.size() != n || mu_at.size() != n) {
    throw ValidationError("reconstruct: replicate count mismatch");
  }
  std::vector<MarkedPattern> out;
  out.reserve(n);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pat = sample[i];
    const Eigen::VectorXd& xi = scores.replicates[perm[i]].xi;
    std::vector<double> marks(pat.size());
    for (std::size_t e = 0; e < pat.size(); ++e) {
      const double s = pat.times()[e];
      double y = 0.0;
      for (std::size_t k = 0; k < model.p_y; ++k) y += xi(static_cast<Eigen::Index>(k)) * model.phi(k, s);
      if (cursor >= pooled.size()) throw ValidationError("reconstruct: residual pool too small");
      marks[e] = mu_at[i][e] + y + pooled[cursor++];
    }
    out.push_back(pat.with_marks(std::move(marks)));
  }
  return ReplicatedSample(sample.window(), std::move(out));
}

ReplicatedSample permute_dataset(const ReplicatedSample& sample, const ScoreSet& scores,
                                 const FpcModel& model,
                                 const std::vector<std::vector<double>>& mu_at, Rng& rng) {
  std::vector<std::size_t> perm(sample.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> pooled;
  for (const auto& r : scores.replicates) pooled.insert(pooled.end(), r.residuals.begin(), r.residuals.end());
  std::shuffle(pooled.begin(), pooled.end(), rng);
  return reconstruct(sample, scores, model, mu_at, perm, pooled);
}

PermutationResult permutation_test(const ReplicatedSample& sample, const Bandwidths& bw,
                                   std::size_t b, std::uint64_t seed, const Grid* grid_in) {
  if (b < 1) throw ValidationError("number of permutations must be at least 1");
  const Grid grid = grid_in ? *grid_in : Grid::uniform(sample.window(), 101);
  const double observed = tn_at_test_bandwidths(sample, bw);

  const CurveEstimate mu_tilde = estimate_mean_naive(sample, bw.h_mu, grid);
  const CurveEstimate sigma_tilde = estimate_var_naive(sample, mu_tilde, bw.h_sigma, grid);
  const SurfaceEstimate cy_tilde = estimate_cov_naive(sample, mu_tilde, bw.h_y, grid);
  const SurfaceEstimate cxy = estimate_crosscov(sample, mu_tilde, bw.h_xy, grid);
  const SurfaceEstimate cy = correct_cov(cy_tilde, cxy);
  const CurveEstimate mu_hat = correct_mean(mu_tilde, cxy);

  FpcModel model = fpc_decompose(cy, noise_variance(sigma_tilde, cy));
  std::vector<std::vector<double>> mu_at(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i)
    for (double s : sample[i].times()) mu_at[i].push_back(mu_hat(s));
  ScoreSet scores = estimate_scores(sample, model, mu_at);

  std::vector<double> tn(b);
  std::vector<std::string> errors(b);
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (std::size_t k = 0; k < b; ++k) {
    try {
      Rng rng = make_stream(seed, k + 1, 0x7065726d);
      tn[k] = tn_at_test_bandwidths(permute_dataset(sample, scores, model, mu_at, rng), bw);
    } catch (const Error& e) {
      errors[k] = e.what();
    }
  }
  for (std::size_t k = 0; k < b; ++k) {
    if (!errors[k].empty()) throw EstimationError("permutation " + std::to_string(k + 1) + ": " + errors[k]);
  }
  std::size_t exceed = 0;
  for (double t : tn)
    if (std::abs(t) > std::abs(observed)) ++exceed;

  TestReport r;
  r.t_n = observed;
  r.p_permutation = static_cast<double>(exceed) / static_cast<double>(b);
  r.b = b;
  r.bandwidths = bw;
  r.n = sample.size();
  r.seed = seed;
  r.notes.push_back("p_y=" + std::to_string(model.p_y));
  r.notes.push_back("blup_scores=" + std::to_string(scores.blup_count) + " of " +
                    std::to_string(sample.size()) + " (top-quarter base: " + scores.quantile_base +
                    ", replaced " + std::to_string(scores.replaced_top) + ")");
  return PermutationResult{std::move(r), std::move(tn), std::move(model), std::move(scores)};
}

}  // namespace markpoint
