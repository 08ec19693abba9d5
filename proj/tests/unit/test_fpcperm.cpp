#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "markpoint/fpcperm.hpp"
#include "markpoint/rng.hpp"
#include "markpoint/simgen.hpp"

using namespace markpoint;

namespace {

Eigen::MatrixXd surface(const Grid& g, const std::function<double(double, double)>& f) {
  const auto m = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd c(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) c(a, b) = f(g[static_cast<std::size_t>(a)], g[static_cast<std::size_t>(b)]);
  return c;
}

// Marks lying exactly in the span of the model's eigenfunctions.
struct Exact {
  ReplicatedSample sample;
  std::vector<Eigen::VectorXd> xi;
  std::vector<std::vector<double>> mu_at;
};

Exact exact_sample(const FpcModel& model, const std::vector<std::size_t>& counts, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<MarkedPattern> pats;
  Exact out{ReplicatedSample(Window(0, 1), {MarkedPattern()}), {}, {}};
  for (std::size_t c : counts) {
    Eigen::VectorXd xi(static_cast<Eigen::Index>(model.p_y));
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi(k) = z(rng);
    std::vector<double> t(c);
    for (double& v : t) v = u(rng);
    std::sort(t.begin(), t.end());
    std::vector<double> m(c), mu(c);
    for (std::size_t e = 0; e < c; ++e) {
      mu[e] = truth::mu(t[e]);
      m[e] = mu[e];
      for (std::size_t k = 0; k < model.p_y; ++k) m[e] += xi(static_cast<Eigen::Index>(k)) * model.phi(k, t[e]);
    }
    pats.emplace_back(t, m);
    out.xi.push_back(xi);
    out.mu_at.push_back(mu);
  }
  out.sample = ReplicatedSample(Window(0, 1), pats);
  return out;
}

FpcModel truth_model(std::size_t m = 201) {
  const Grid g = Grid::uniform(Window(0, 1), m);
  return fpc_decompose(surface(g, truth::cov_y), g);
}

}  // namespace

TEST(Fpc, RankOne) {
  const Grid g = Grid::uniform(Window(0, 1), 101);
  auto f = [](double s) { return std::sqrt(2.0) * std::sin(std::numbers::pi * s); };
  const FpcModel m = fpc_decompose(surface(g, [&](double s, double t) { return 2.0 * f(s) * f(t); }), g);
  ASSERT_EQ(m.p_y, 1u);
  EXPECT_EQ(m.positive_rank, 1u);
  EXPECT_NEAR(m.eigenvalues[0], 2.0, 1e-3);
  EXPECT_NEAR(m.explained_fraction, 1.0, 1e-9);
  for (double s : {0.1, 0.37, 0.5, 0.81}) EXPECT_NEAR(m.phi(0, s), f(s), 2e-3);
}

TEST(Fpc, DiagonalByHand) {
  // Trapezoid weights (1/4, 1/2, 1/4): eigenvalues are c_k w_k.
  const Grid g(Window(0, 1), {0.0, 0.5, 1.0});
  Eigen::MatrixXd c = Eigen::Vector3d(8.0, 1.0, 4.0).asDiagonal();
  const FpcModel all = fpc_decompose(c, g);
  ASSERT_EQ(all.p_y, 3u);
  EXPECT_NEAR(all.eigenvalues[0], 2.0, 1e-12);
  EXPECT_NEAR(all.eigenvalues[1], 1.0, 1e-12);
  EXPECT_NEAR(all.eigenvalues[2], 0.5, 1e-12);
  EXPECT_NEAR(all.eigenfunctions(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(all.eigenfunctions(2, 1), 2.0, 1e-12);
  EXPECT_NEAR(all.eigenfunctions(1, 2), std::sqrt(2.0), 1e-12);
  EXPECT_EQ(fpc_decompose(c, g, 0.0, 0.8).p_y, 2u);
  EXPECT_EQ(fpc_decompose(c, g, 0.0, 0.5).p_y, 1u);
}

TEST(Fpc, RejectsBadSurfaces) {
  const Grid g(Window(0, 1), {0.0, 0.5, 1.0});
  Eigen::Matrix3d asym = Eigen::Matrix3d::Identity();
  asym(0, 1) = 0.5;
  EXPECT_THROW(fpc_decompose(asym, g), ValidationError);
  EXPECT_THROW(fpc_decompose(Eigen::MatrixXd(-Eigen::Matrix3d::Identity()), g), EstimationError);
}

TEST(Fpc, RecoversDesignSpectrum) {
  const FpcModel m = truth_model();
  ASSERT_EQ(m.p_y, 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(m.eigenvalues[k], truth::kEtaY[k], 1e-3);
    // Eigenfunctions are determined up to sign.
    double dot = 0.0, err_p = 0.0, err_m = 0.0;
    for (double s = 0.0; s <= 1.0; s += 0.01) {
      const double a = m.phi(k, s), b = truth::phi_y(static_cast<int>(k), s);
      dot += a * b;
      err_p = std::max(err_p, std::abs(a - b));
      err_m = std::max(err_m, std::abs(a + b));
    }
    EXPECT_LT(std::min(err_p, err_m), 1e-2) << k;
  }
  // Sign convention: positive at the midpoint.
  for (std::size_t k = 0; k < 3; ++k)
    if (std::abs(m.phi(k, 0.5)) > 1e-6) EXPECT_GT(m.phi(k, 0.5), 0.0);
}

TEST(Fpc, LeastSquaresRecoversScores) {
  const FpcModel model = truth_model();
  const Exact ex = exact_sample(model, std::vector<std::size_t>(12, 10), 3);
  const ScoreSet sc = estimate_scores(ex.sample, model, ex.mu_at);
  EXPECT_EQ(sc.eligible, 12u);
  EXPECT_EQ(sc.replaced_top, 3u);
  std::size_t ls = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    const auto& r = sc.replicates[i];
    if (r.method != ScoreMethod::least_squares) continue;
    ++ls;
    EXPECT_LT((r.xi - ex.xi[i]).cwiseAbs().maxCoeff(), 1e-8);
    for (double v : r.residuals) EXPECT_LT(std::abs(v), 1e-8);
  }
  EXPECT_EQ(ls, 9u);
}

TEST(Fpc, TopQuarterByLeverageUsesBlup) {
  const FpcModel model = truth_model();
  std::vector<std::size_t> counts{3, 4, 5, 6, 8, 10, 12, 15, 20, 2, 1};
  const Exact ex = exact_sample(model, counts, 5);
  const ScoreSet sc = estimate_scores(ex.sample, model, ex.mu_at);
  EXPECT_EQ(sc.eligible, 9u);
  EXPECT_EQ(sc.replaced_top, 3u);  // ceil(9 / 4)
  EXPECT_EQ(sc.blup_count, 5u);
  EXPECT_EQ(sc.quantile_base, "ls_eligible");
  double min_replaced = 1e300, max_kept = 0.0;
  for (const auto& r : sc.replicates) {
    if (!r.leverage) {
      EXPECT_EQ(r.method, ScoreMethod::blup);
      continue;
    }
    if (r.method == ScoreMethod::blup)
      min_replaced = std::min(min_replaced, *r.leverage);
    else
      max_kept = std::max(max_kept, *r.leverage);
  }
  EXPECT_GE(min_replaced, max_kept);
}

TEST(Fpc, BlupShrinksUnderHeavyNoise) {
  FpcModel model = truth_model();
  model.sigma_e2 = 1e6;
  const Exact ex = exact_sample(model, {2, 2, 1}, 7);
  const ScoreSet sc = estimate_scores(ex.sample, model, ex.mu_at);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(sc.replicates[i].method, ScoreMethod::blup);
    EXPECT_LT(sc.replicates[i].xi.norm(), 1e-4 * (1.0 + ex.xi[i].norm()));
  }
}

TEST(Fpc, IdentityReconstructionReturnsData) {
  FpcModel model = truth_model(101);
  model.sigma_e2 = 0.3;
  Exact ex = exact_sample(model, {6, 7, 8, 9, 10, 2}, 9);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0.0, 0.5);
  std::vector<std::vector<double>> marks;
  for (const auto& p : ex.sample.patterns()) {
    std::vector<double> m(p.marks().begin(), p.marks().end());
    for (double& v : m) v += z(rng);
    marks.push_back(m);
  }
  const ReplicatedSample noisy = ex.sample.with_marks(marks);
  const ScoreSet sc = estimate_scores(noisy, model, ex.mu_at);
  std::vector<std::size_t> perm(noisy.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> pooled;
  for (const auto& r : sc.replicates) pooled.insert(pooled.end(), r.residuals.begin(), r.residuals.end());
  const ReplicatedSample back = reconstruct(noisy, sc, model, ex.mu_at, perm, pooled);
  for (std::size_t i = 0; i < noisy.size(); ++i)
    for (std::size_t e = 0; e < noisy[i].size(); ++e)
      EXPECT_NEAR(back[i].marks()[e], noisy[i].marks()[e], 1e-10);
}

TEST(Fpc, PermutedDatasetKeepsTimesAndResiduals) {
  FpcModel model = truth_model(101);
  model.sigma_e2 = 0.2;
  Exact ex = exact_sample(model, {5, 6, 7, 8, 9, 4, 3}, 4);
  std::mt19937_64 noise(8);
  std::normal_distribution<double> z(0.0, 0.4);
  std::vector<std::vector<double>> marks;
  for (const auto& p : ex.sample.patterns()) {
    std::vector<double> m(p.marks().begin(), p.marks().end());
    for (double& v : m) v += z(noise);
    marks.push_back(m);
  }
  const ReplicatedSample s = ex.sample.with_marks(marks);
  const ScoreSet sc = estimate_scores(s, model, ex.mu_at);

  Rng rng = make_stream(17, 0, 0);
  Rng replay = rng;
  const ReplicatedSample p = permute_dataset(s, sc, model, ex.mu_at, rng);

  std::vector<std::size_t> perm(s.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), replay);
  EXPECT_TRUE(std::is_permutation(perm.begin(), perm.end(), std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}.begin()));

  std::vector<double> implied, original;
  for (std::size_t i = 0; i < s.size(); ++i) {
    ASSERT_EQ(p[i].size(), s[i].size());
    for (std::size_t e = 0; e < s[i].size(); ++e) {
      EXPECT_EQ(p[i].times()[e], s[i].times()[e]);
      double y = 0.0;
      for (std::size_t k = 0; k < model.p_y; ++k)
        y += sc.replicates[perm[i]].xi(static_cast<Eigen::Index>(k)) * model.phi(k, s[i].times()[e]);
      implied.push_back(p[i].marks()[e] - ex.mu_at[i][e] - y);
    }
    original.insert(original.end(), sc.replicates[i].residuals.begin(), sc.replicates[i].residuals.end());
  }
  std::sort(implied.begin(), implied.end());
  std::sort(original.begin(), original.end());
  ASSERT_EQ(implied.size(), original.size());
  for (std::size_t k = 0; k < implied.size(); ++k) EXPECT_NEAR(implied[k], original[k], 1e-10);
}

TEST(Fpc, PermutationTestLatticeAndDeterminism) {
  SimConfig cfg;
  cfg.n = 40;
  cfg.seed = 12;
  const ReplicatedSample s = Simulator(cfg).simulate();
  Bandwidths bw;
  bw.h_mu = 0.12;
  bw.h_y = 0.15;
  bw.h_sigma = 0.1;
  bw.h_xy = 0.3;
  bw.h_tau = 0.3;
  bw.h_mu_test = 0.08;
  bw.h_sigma_test = 0.07;
  const std::size_t b = 19;
  const PermutationResult a = permutation_test(s, bw, b, 5);
  const PermutationResult c = permutation_test(s, bw, b, 5);
  ASSERT_TRUE(a.report.p_permutation.has_value());
  const double p = *a.report.p_permutation;
  EXPECT_NEAR(p * b, std::round(p * b), 1e-9);
  EXPECT_GE(p, 0.0);
  EXPECT_LE(p, 1.0);
  EXPECT_EQ(a.permuted_tn, c.permuted_tn);
  EXPECT_EQ(a.report.t_n, tn_at_test_bandwidths(s, bw));
  std::size_t exceed = 0;
  for (double t : a.permuted_tn) exceed += std::abs(t) > std::abs(a.report.t_n);
  EXPECT_EQ(p, static_cast<double>(exceed) / b);
  EXPECT_NE(permutation_test(s, bw, b, 6).permuted_tn, a.permuted_tn);
}
