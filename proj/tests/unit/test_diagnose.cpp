#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "markpoint/bandwidth.hpp"
#include "markpoint/diagnose.hpp"
#include "markpoint/kernel.hpp"
#include "markpoint/simgen.hpp"
#include "oracles.hpp"

using namespace markpoint;

namespace {

ReplicatedSample times_only(std::vector<std::vector<double>> times, Window w = Window(0, 1)) {
  std::vector<MarkedPattern> p;
  for (auto& t : times) p.emplace_back(t, std::vector<double>(t.size(), 0.0));
  return ReplicatedSample(w, p);
}

ReplicatedSample poisson_sample(std::size_t n, double rate, std::uint64_t seed) {
  std::vector<std::vector<double>> times;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(seed, i, 0);
    times.push_back(sample_inhomog_poisson([rate](double) { return rate; }, rate, Window(0, 1), rng));
  }
  return times_only(times);
}

double edge(double s, double h) { return kernel1_cdf(s / h) - kernel1_cdf((s - 1.0) / h); }

double rho2_brute(const ReplicatedSample& s, double a, double b, double h) {
  double acc = 0.0;
  for (const auto& p : s.patterns())
    for (std::size_t u = 0; u < p.size(); ++u)
      for (std::size_t v = 0; v < p.size(); ++v)
        if (u != v) acc += oracle::epan((p.times()[u] - a) / h) * oracle::epan((p.times()[v] - b) / h) / (h * h);
  return acc / (static_cast<double>(s.size()) * edge(a, h) * edge(b, h));
}

LgcpFit flat_fit(double lambda0, double cx) {
  const Grid g = Grid::uniform(Window(0, 1), 11);
  CurveEstimate lam{g, std::vector<double>(11, lambda0), 0.1, CurveKind::lambda0, {}, {}, [lambda0](double) { return lambda0; }};
  SurfaceEstimate c{g, g, Eigen::MatrixXd::Constant(11, 11, cx), 0.1, SurfaceKind::cx, true, {}, {}, [cx](double, double) { return cx; }};
  return LgcpFit{lam, lam, c, c.values, 0.1, 0.1};
}

}  // namespace

TEST(Diagnose, EdgeCorrectionValues) {
  const Window w(0, 1);
  EXPECT_EQ(edge_correction(0.5, 0.1, w), 1.0);
  EXPECT_EQ(edge_correction(0.0, 0.1, w), 0.5);
  EXPECT_EQ(edge_correction(1.0, 0.1, w), 0.5);
  for (double s = 0.0; s <= 1.0; s += 0.01) {
    const double e = edge_correction(s, 0.2, w);
    EXPECT_GT(e, 0.0);
    EXPECT_LE(e, 1.0);
  }
}

TEST(Diagnose, IntensityEstimatesMatchBruteForce) {
  const auto s = times_only({{0.1, 0.15, 0.5, 0.52, 0.95}, {0.05, 0.3, 0.31}, {0.7}, {}});
  const Grid g = Grid::uniform(Window(0, 1), 21);
  const double h = 0.2;
  const CurveEstimate rho = estimate_rho(s, h, g);
  const SurfaceEstimate rho2 = estimate_rho2(s, h, g);
  for (std::size_t a = 0; a < g.size(); ++a) {
    double acc = 0.0;
    for (const auto& p : s.patterns())
      for (double u : p.times()) acc += oracle::epan((u - g[a]) / h) / h;
    const double expect = acc / (4.0 * edge(g[a], h));
    EXPECT_NEAR(rho.values[a], expect, 1e-12 * (1 + expect));
    for (std::size_t b = 0; b < g.size(); b += 3) {
      const double e2 = rho2_brute(s, g[a], g[b], h);
      EXPECT_NEAR(rho2.values(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), e2, 1e-10 * (1 + e2));
    }
  }
  EXPECT_NEAR(rho2(0.33, 0.71), rho2_brute(s, 0.33, 0.71, h), 1e-12);
  EXPECT_NEAR(rho(0.33), estimate_rho(s, h, Grid(Window(0, 1), {0.0, 0.33, 1.0})).values[1], 1e-12);
}

TEST(Diagnose, HomogeneousRateRecovered) {
  const auto s = poisson_sample(500, 30.0, 4);
  const Grid g = Grid::uniform(Window(0, 1), 41);
  const double h = 0.1;
  const CurveEstimate rho = estimate_rho(s, h, g);
  double mean = 0.0;
  std::size_t k = 0;
  for (std::size_t a = 10; a <= 30; ++a, ++k) mean += rho.values[a];
  mean /= static_cast<double>(k);
  // Spread of the same functional over single replicates.
  std::vector<double> per;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::vector<std::size_t> one{i};
    const CurveEstimate r = estimate_rho(s.subset(one), h, g);
    double m = 0.0;
    for (std::size_t a = 10; a <= 30; ++a) m += r.values[a];
    per.push_back(m / static_cast<double>(k));
  }
  double v = 0.0;
  for (double x : per) v += (x - mean) * (x - mean);
  const double se = std::sqrt(v / static_cast<double>(per.size() - 1) / static_cast<double>(per.size()));
  EXPECT_NEAR(mean, 30.0, 3.0 * se);
}

TEST(Diagnose, LgcpFitConstructionIdentity) {
  SimConfig cfg;
  cfg.n = 60;
  cfg.seed = 2;
  const auto s = Simulator(cfg).simulate();
  const Grid g = Grid::uniform(Window(0, 1), 41);
  const LgcpFit fit = fit_lgcp(s, 0.15, 0.12, g);
  const SurfaceEstimate rho2 = estimate_rho2(s, 0.12, g);
  for (Eigen::Index a = 0; a < 41; ++a) {
    const double r = fit.rho.values[static_cast<std::size_t>(a)];
    for (Eigen::Index b = 0; b < 41; ++b) {
      const double rb = fit.rho.values[static_cast<std::size_t>(b)];
      EXPECT_NEAR(r * rb * std::exp(fit.cx_raw(a, b)), rho2.values(a, b), 1e-10 * rho2.values(a, b));
      EXPECT_EQ(fit.cx.values(a, b), fit.cx.values(b, a));
    }
    EXPECT_NEAR(fit.lambda0.values[static_cast<std::size_t>(a)], r * std::exp(-0.5 * std::max(fit.cx.values(a, a), 0.0)), 1e-12 * r);
  }
}

TEST(Diagnose, LgcpFitRecoversVariance) {
  SimConfig cfg;
  cfg.n = 600;
  cfg.seed = 4;
  const auto s = Simulator(cfg).simulate();
  const Grid g = Grid::uniform(Window(0, 1), 41);
  const LgcpFit fit = fit_lgcp(s, 0.2, 0.07, g);
  for (Eigen::Index a = 10; a <= 30; ++a) EXPECT_NEAR(fit.cx.values(a, a), 1.0, 0.3) << g[static_cast<std::size_t>(a)];
}

TEST(Diagnose, PoissonDataGiveFlatCovariance) {
  std::vector<double> at;
  for (std::uint64_t r = 0; r < 20; ++r) {
    SimConfig cfg;
    cfg.n = 200;
    cfg.sigma_x = 0.0;
    cfg.seed = 50 + r;
    const auto s = Simulator(cfg).simulate();
    const LgcpFit fit = fit_lgcp(s, 0.2, 0.2, Grid(Window(0, 1), {0.0, 0.3, 0.5, 0.7, 1.0}));
    at.push_back(fit.cx.values(2, 3));
  }
  double m = 0.0, v = 0.0;
  for (double x : at) m += x / 20.0;
  for (double x : at) v += (x - m) * (x - m) / 19.0;
  EXPECT_LT(std::abs(m), 3.0 * std::sqrt(v / 20.0) + 1e-3);
}

TEST(Diagnose, LgcpFitReportsNonPositiveNodes) {
  const auto s = times_only({{0.1, 0.12}, {0.15}});
  try {
    fit_lgcp(s, 0.05, 0.05, Grid::uniform(Window(0, 1), 11));
    FAIL() << "expected an error";
  } catch (const EstimationError& e) {
    EXPECT_NE(std::string(e.what()).find("larger h1"), std::string::npos);
  }
}

TEST(Diagnose, PairIntensityCvMatchesOracle) {
  const auto s = times_only({{0.1, 0.2, 0.45, 0.8}, {0.3, 0.35, 0.9}, {0.05, 0.5, 0.55, 0.6, 0.95}, {0.4, 0.7}});
  const std::size_t quad = 21;
  const Grid g = Grid::uniform(Window(0, 1), quad);
  for (double h : {0.15, 0.3}) {
    const double n1 = 3.0;
    auto without = [&](std::size_t i, double a, double b) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (j == i) continue;
        const auto t = s[j].times();
        for (std::size_t u = 0; u < t.size(); ++u)
          for (std::size_t v = 0; v < t.size(); ++v)
            if (u != v) acc += oracle::epan((t[u] - a) / h) * oracle::epan((t[v] - b) / h) / (h * h);
      }
      return acc / (n1 * edge(a, h) * edge(b, h));
    };
    double expect = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      double integral = 0.0;
      for (std::size_t a = 0; a < quad; ++a)
        for (std::size_t b = 0; b < quad; ++b)
          integral += g.weights()[a] * g.weights()[b] * std::pow(without(i, g[a], g[b]), 2);
      double own = 0.0;
      const auto t = s[i].times();
      for (std::size_t u = 0; u < t.size(); ++u)
        for (std::size_t v = 0; v < t.size(); ++v)
          if (u != v) own += without(i, t[u], t[v]);
      expect += integral - 2.0 * own;
    }
    EXPECT_NEAR(cv_rho2(s, h, quad), expect, 1e-9 * std::abs(expect));
  }
}

TEST(Diagnose, PairIntensityCvPrefersSmoothForPoisson) {
  const auto s = poisson_sample(80, 30.0, 9);
  const CvTrace tr = select_rho2_bandwidth(s, {0.05, 0.1, 0.2, 0.4});
  EXPECT_GE(tr.best, 0.2);
}

TEST(Diagnose, SamplerFlatFieldIsPoisson) {
  const LgcpSampler smp(flat_fit(25.0, 0.0));
  EXPECT_EQ(smp.factor_method(), "cholesky");
  EXPECT_EQ(smp.grid().size(), 256u);
  std::vector<double> counts;
  Rng rng = make_stream(3, 0, 0);
  for (int k = 0; k < 2000; ++k) counts.push_back(static_cast<double>(smp.draw(rng).size()));
  double m = 0.0, v = 0.0;
  for (double c : counts) m += c / 2000.0;
  for (double c : counts) v += (c - m) * (c - m) / 1999.0;
  EXPECT_NEAR(m, 25.0, 3.0 * std::sqrt(25.0 / 2000.0));
  EXPECT_NEAR(v / m, 1.0, 3.0 * std::sqrt(2.0 / 1999.0));
}

TEST(Diagnose, SamplerExpectedCount) {
  // A constant covariance is a single shared log-normal factor.
  const LgcpSampler smp(flat_fit(20.0, 0.25));
  const double expect = 20.0 * std::exp(0.125);
  EXPECT_NEAR(smp.expected_count(), expect, 1e-9);
  std::vector<double> counts;
  Rng rng = make_stream(5, 0, 0);
  for (int k = 0; k < 4000; ++k) counts.push_back(static_cast<double>(smp.draw(rng).size()));
  double m = 0.0, v = 0.0;
  for (double c : counts) m += c / 4000.0;
  for (double c : counts) v += (c - m) * (c - m) / 3999.0;
  EXPECT_NEAR(m, expect, 3.0 * std::sqrt(v / 4000.0));
}

TEST(Diagnose, SamplerZeroIntensityAndDeterminism) {
  const LgcpSampler zero(flat_fit(0.0, 0.5));
  Rng rng = make_stream(1, 0, 0);
  for (int k = 0; k < 50; ++k) EXPECT_TRUE(zero.draw(rng).empty());
  const LgcpFit fit = flat_fit(30.0, 0.3);
  Rng a = make_stream(8, 2, 0), b = make_stream(8, 2, 0);
  const MarkedPattern pa = simulate_fitted_lgcp(fit, a), pb = simulate_fitted_lgcp(fit, b);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa.times()[k], pb.times()[k]);
}

TEST(Diagnose, SamplerFallsBackForIndefiniteSurface) {
  LgcpFit fit = flat_fit(20.0, 0.0);
  for (Eigen::Index a = 0; a < 11; ++a)
    for (Eigen::Index b = 0; b < 11; ++b) fit.cx.values(a, b) = a == b ? 0.2 : (std::abs(a - b) == 1 ? 0.3 : 0.0);
  const LgcpSampler smp(fit);
  EXPECT_EQ(smp.factor_method(), "eigen-clip");
  Rng rng = make_stream(2, 0, 0);
  EXPECT_NO_THROW(smp.draw(rng));
}

TEST(Diagnose, GFunctionByHand) {
  // Dyadic times keep the distances exact: NN distances {1/8, 1/8, 5/8}.
  const auto s = times_only({{0.125, 0.25, 0.875}});
  const GCurve g = g_function(s, {0.0, 0.125, 0.5, 0.624, 0.625, 1.0, 2.0});
  const std::vector<double> expect{0.0, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0};
  for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_DOUBLE_EQ(g.values[k], expect[k]);
  const GCurve twice = g_function(times_only({{0.125, 0.25, 0.875}, {0.125, 0.25, 0.875}, {0.5}}), g.distances);
  EXPECT_EQ(twice.values, g.values);
  EXPECT_EQ(twice.skipped, 1u);
  EXPECT_EQ(twice.used, 2u);
  EXPECT_THROW(g_function(times_only({{0.5}, {}}), {0.1}), EstimationError);
}

TEST(Diagnose, GFunctionIsACdf) {
  SimConfig cfg;
  cfg.n = 30;
  const auto s = Simulator(cfg).simulate();
  std::vector<double> d;
  for (int k = 0; k <= 60; ++k) d.push_back(0.005 * k);
  d.push_back(1.0);
  const GCurve g = g_function(s, d);
  for (std::size_t k = 1; k < d.size(); ++k) EXPECT_GE(g.values[k], g.values[k - 1]);
  EXPECT_GE(g.values.front(), 0.0);
  EXPECT_EQ(g.values.back(), 1.0);
}

TEST(Diagnose, QuantileType7) {
  const std::vector<double> x{4.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(quantile7(x, 0.0), 1.0);
  EXPECT_EQ(quantile7(x, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile7(x, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile7(x, 0.25), 1.75);
}

TEST(Diagnose, EnvelopeLevelsAndSeeds) {
  const LgcpSampler smp(flat_fit(30.0, 0.2));
  const std::vector<double> d{0.005, 0.01, 0.02, 0.04, 0.08};
  const GEnvelope full = g_envelope(smp, 10, d, 40, 1.0, 3);
  const GEnvelope again = g_envelope(smp, 10, d, 40, 1.0, 3);
  EXPECT_EQ(full.lo, again.lo);
  EXPECT_EQ(full.hi, again.hi);
  const GEnvelope narrow = g_envelope(smp, 10, d, 40, 0.5, 3);
  for (std::size_t k = 0; k < d.size(); ++k) {
    EXPECT_LE(full.lo[k], narrow.lo[k]);
    EXPECT_GE(full.hi[k], narrow.hi[k]);
    EXPECT_LE(full.lo[k], full.mean[k]);
    EXPECT_GE(full.hi[k], full.mean[k]);
  }
  EXPECT_THROW(g_envelope(smp, 10, d, 19, 0.95, 1), ValidationError);

  Rng rng = make_stream(11, 0, 0);
  std::vector<MarkedPattern> pats;
  for (int i = 0; i < 10; ++i) pats.push_back(smp.draw(rng));
  const GCurve obs = g_function(ReplicatedSample(Window(0, 1), pats), d);
  const GEnvelope with = g_envelope(smp, 10, d, 40, 0.95, 3, &obs);
  ASSERT_EQ(with.pairs.size(), d.size());
  EXPECT_EQ(with.pairs[2].second, obs.values[2]);
  EXPECT_EQ(with.pairs[2].first, with.mean[2]);
  ASSERT_TRUE(with.inside_fraction.has_value());
}

TEST(Diagnose, QqData) {
  const Grid g(Window(0, 1), {0.0, 0.5, 1.0});
  const FpcModel model = fpc_decompose(Eigen::MatrixXd(Eigen::Vector3d(16.0, 1.0, 1.0).asDiagonal()), g);
  ASSERT_NEAR(model.eigenvalues[0], 4.0, 1e-12);
  auto scores_of = [](std::vector<double> v) {
    ScoreSet s;
    for (double x : v) {
      ReplicateScores r;
      r.xi = Eigen::VectorXd::Constant(3, x);
      s.replicates.push_back(r);
    }
    return s;
  };
  // Hand quantiles at (i - 0.5)/5 = 0.1, 0.3, ..., 0.9.
  const auto qq = fpc_qq_data(scores_of({3.0, -1.0, 0.0, 8.0, -4.0}), model, 0);
  const std::vector<double> theo{-1.2815515655446004, -0.5244005127080407, 0.0, 0.5244005127080407,
                                 1.2815515655446004};
  const std::vector<double> sample{-2.0, -0.5, 0.0, 1.5, 4.0};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(qq[i].first, theo[i], 1e-12);
    EXPECT_DOUBLE_EQ(qq[i].second, sample[i]);
  }
  std::vector<double> exact;
  for (double t : theo) exact.push_back(2.0 * t);
  for (const auto& [t, v] : fpc_qq_data(scores_of(exact), model, 0)) EXPECT_NEAR(t, v, 1e-12);
  EXPECT_THROW(fpc_qq_data(scores_of({1.0, 1.0, 1.0}), model, 0), EstimationError);
  EXPECT_THROW(fpc_qq_data(scores_of({1.0, 2.0}), model, 0), ValidationError);
}
