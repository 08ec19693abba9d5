#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "markpoint/bandwidth.hpp"
#include "markpoint/smooth.hpp"
#include "oracles.hpp"

using namespace markpoint;

namespace {

using Resp = std::vector<std::vector<double>>;

ReplicatedSample uniform_sample(std::size_t n, std::size_t per, std::uint64_t seed, double noise,
                                double slope = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<MarkedPattern> pats;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> t(per), m(per);
    const double shift = noise * z(rng);
    for (std::size_t k = 0; k < per; ++k) {
      t[k] = u(rng);
      m[k] = 1.0 + slope * t[k] + shift * std::sin(3.0 * t[k]) + noise * z(rng);
    }
    pats.emplace_back(t, m);
  }
  return ReplicatedSample(Window(0, 1), pats);
}

std::vector<std::size_t> complement_of(std::size_t n, const std::vector<std::size_t>& held) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i)
    if (std::find(held.begin(), held.end(), i) == held.end()) out.push_back(i);
  return out;
}

Resp marks_copy(const ReplicatedSample& s) {
  Resp out;
  for (const auto& p : s.patterns()) out.emplace_back(p.marks().begin(), p.marks().end());
  return out;
}

// Training residuals and held-out residuals around the training mean.
struct OracleFold {
  ReplicatedSample train;
  Resp train_resid;
  Resp held_resid;
  std::vector<std::size_t> held;
};

OracleFold oracle_fold(const ReplicatedSample& s, const std::vector<std::size_t>& held, double h_mu) {
  const auto idx = complement_of(s.size(), held);
  OracleFold f{s.subset(idx), {}, {}, held};
  const Resp m = marks_copy(f.train);
  auto mu = [&](double t) { return *oracle::line_fit(f.train, m, t, h_mu); };
  for (const auto& p : f.train.patterns()) {
    std::vector<double> r;
    for (std::size_t k = 0; k < p.size(); ++k) r.push_back(p.marks()[k] - mu(p.times()[k]));
    f.train_resid.push_back(r);
  }
  for (std::size_t i : held) {
    std::vector<double> r;
    for (std::size_t k = 0; k < s[i].size(); ++k) r.push_back(s[i].marks()[k] - mu(s[i].times()[k]));
    f.held_resid.push_back(r);
  }
  return f;
}

double epan_cdf(double x) {
  x = std::clamp(x, -1.0, 1.0);
  return 0.5 + 0.75 * x - 0.25 * x * x * x;
}

}  // namespace

TEST(Bandwidth, UndersmoothFormula) {
  const double h = 0.1;
  const std::size_t n = 500;
  const double expect = h / (std::pow(500.0, 0.05) * std::log(std::log(500.0)));
  EXPECT_NEAR(undersmooth_for_test(h, n), expect, 1e-15);
  EXPECT_NEAR(undersmooth_for_test(h, n), 0.040118, 1e-6);
  EXPECT_THROW(undersmooth_for_test(h, 2), ValidationError);
}

TEST(Bandwidth, GeometricGrid) {
  auto g = geometric_grid(0.02, 0.30, Window(0, 2), 10);
  ASSERT_EQ(g.size(), 10u);
  EXPECT_NEAR(g.front(), 0.04, 1e-14);
  EXPECT_NEAR(g.back(), 0.60, 1e-14);
  for (std::size_t k = 2; k < g.size(); ++k) EXPECT_NEAR(g[k] / g[k - 1], g[1] / g[0], 1e-12);
}

TEST(Bandwidth, FoldsPartitionAndDeterminism) {
  for (std::size_t k : {2u, 5u, 10u}) {
    auto f = make_folds(37, k, 3);
    ASSERT_EQ(f.size(), k);
    std::set<std::size_t> seen;
    std::size_t lo = 100, hi = 0;
    for (const auto& fold : f) {
      lo = std::min(lo, fold.size());
      hi = std::max(hi, fold.size());
      EXPECT_TRUE(std::is_sorted(fold.begin(), fold.end()));
      seen.insert(fold.begin(), fold.end());
    }
    EXPECT_EQ(seen.size(), 37u);
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(f, make_folds(37, k, 3));
  }
  EXPECT_NE(make_folds(37, 5, 3), make_folds(37, 5, 4));
  EXPECT_THROW(make_folds(3, 5, 1), ValidationError);
}

TEST(Bandwidth, ArgminRules) {
  const std::vector<double> c{0.1, 0.2, 0.3};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(argmin_bandwidth("h", c, {3.0, 1.0, 2.0}), 0.2);
  EXPECT_EQ(argmin_bandwidth("h", c, {1.0, 1.0, 2.0}), 0.2);
  EXPECT_EQ(argmin_bandwidth("h", c, {nan, 3.0, 2.0}), 0.3);
  EXPECT_EQ(argmin_bandwidth("h", c, {0.0, 1e-30, 0.0}), 0.3);
  EXPECT_THROW(argmin_bandwidth("h", c, {nan, nan, nan}), EstimationError);
  EXPECT_THROW(argmin_bandwidth("h", {}, {}), ValidationError);
}

TEST(Bandwidth, MeanCvLeaveOneOutMatchesOracle) {
  const auto s = uniform_sample(9, 8, 11, 0.5);
  std::vector<std::vector<std::size_t>> folds;
  for (std::size_t i = 0; i < s.size(); ++i) folds.push_back({i});
  const Resp m = marks_copy(s);
  for (double h : {0.2, 0.35}) {
    double expect = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t k = 0; k < s[i].size(); ++k) {
        const double d = s[i].marks()[k] - *oracle::line_fit(s, m, s[i].times()[k], h, i);
        expect += d * d;
      }
    }
    EXPECT_NEAR(cv_mean(s, folds, h), expect, 1e-9 * expect);
  }
}

TEST(Bandwidth, TwoFoldCriteriaMatchOracle) {
  const auto s = uniform_sample(10, 7, 5, 0.7);
  const auto folds = make_folds(s.size(), 2, 8);
  const double h_mu = 0.3, h = 0.4;

  double cv2 = 0.0, cv3 = 0.0, cv4 = 0.0;
  for (const auto& held : folds) {
    const OracleFold f = oracle_fold(s, held, h_mu);
    Resp sq = f.train_resid;
    for (auto& r : sq)
      for (double& v : r) v *= v;
    for (std::size_t j = 0; j < held.size(); ++j) {
      const auto t = s[held[j]].times();
      const auto& e = f.held_resid[j];
      for (std::size_t a = 0; a < t.size(); ++a) {
        const double fit = std::max(*oracle::line_fit(f.train, sq, t[a], h), 0.0);
        cv3 += std::pow(e[a] * e[a] - fit, 2);
        for (std::size_t b = 0; b < t.size(); ++b) {
          if (a == b) continue;
          auto c = oracle::pair_fit(f.train, f.train_resid, t[a], t[b], h, oracle::PairKind::product);
          auto x = oracle::pair_fit(f.train, f.train_resid, t[a], t[b], h, oracle::PairKind::second);
          ASSERT_TRUE(c && x);
          cv2 += std::pow(e[a] * e[b] - *c, 2);
          cv4 += std::pow(e[b] - *x, 2);
        }
      }
    }
  }
  EXPECT_NEAR(cv_cov(s, folds, h_mu, h), cv2, 1e-8 * cv2);
  EXPECT_NEAR(cv_var(s, folds, h_mu, h), cv3, 1e-8 * cv3);
  EXPECT_NEAR(cv_crosscov(s, folds, h_mu, h), cv4, 1e-8 * cv4);
}

TEST(Bandwidth, CvInvariantToFoldOrder) {
  const auto s = uniform_sample(12, 6, 2, 0.5);
  auto folds = make_folds(s.size(), 3, 1);
  const double a = cv_cov(s, folds, 0.3, 0.35);
  std::reverse(folds.begin(), folds.end());
  EXPECT_NEAR(cv_cov(s, folds, 0.3, 0.35), a, 1e-10 * std::abs(a));
}

TEST(Bandwidth, IntensityCvMatchesOracle) {
  const auto s = uniform_sample(6, 9, 4, 0.0);
  const std::size_t quad = 401;
  for (double h : {0.1, 0.25}) {
    const double n1 = static_cast<double>(s.size() - 1);
    auto rho_without = [&](std::size_t i, double x) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (j == i) continue;
        for (double u : s[j].times()) acc += oracle::epan((u - x) / h) / h;
      }
      return acc / (n1 * (epan_cdf(x / h) - epan_cdf((x - 1.0) / h)));
    };
    double expect = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      double integral = 0.0;
      for (std::size_t q = 0; q < quad; ++q) {
        const double x = static_cast<double>(q) / static_cast<double>(quad - 1);
        const double w = (q == 0 || q + 1 == quad ? 0.5 : 1.0) / static_cast<double>(quad - 1);
        integral += w * std::pow(rho_without(i, x), 2);
      }
      double own = 0.0;
      for (double u : s[i].times()) own += rho_without(i, u);
      expect += integral - 2.0 * own;
    }
    EXPECT_NEAR(cv_rho(s, h, quad), expect, 1e-9 * std::abs(expect));
  }
}

TEST(Bandwidth, NoiselessLinearFitsExactly) {
  const auto s = uniform_sample(20, 10, 6, 0.0);
  const auto folds = make_folds(s.size(), 5, 2);
  const std::vector<double> grid{0.05, 0.1, 0.2, 0.3};
  std::vector<double> scores;
  for (double h : grid) scores.push_back(cv_mean(s, folds, h));
  for (double v : scores) EXPECT_LT(v, 1e-20);
}

TEST(Bandwidth, SelectionIsDeterministicAndOnGrid) {
  const auto s = uniform_sample(30, 8, 9, 0.6);
  SelectOptions o;
  o.folds = 5;
  o.seed = 4;
  o.grid_mu = o.grid_sigma = {0.1, 0.2, 0.3};
  o.grid_y = o.grid_xy = {0.2, 0.3, 0.4};
  o.grid_tau = {0.1, 0.2};
  const Selection a = select_bandwidths(s, o);
  const Selection b = select_bandwidths(s, o);
  EXPECT_EQ(a.bandwidths.h_mu, b.bandwidths.h_mu);
  EXPECT_EQ(a.bandwidths.h_y, b.bandwidths.h_y);
  EXPECT_EQ(a.mu.scores, b.mu.scores);
  auto on = [](double h, const std::vector<double>& g) {
    return std::find(g.begin(), g.end(), h) != g.end();
  };
  EXPECT_TRUE(on(a.bandwidths.h_mu, o.grid_mu));
  EXPECT_TRUE(on(a.bandwidths.h_sigma, o.grid_sigma));
  EXPECT_TRUE(on(a.bandwidths.h_y, o.grid_y));
  EXPECT_TRUE(on(a.bandwidths.h_xy, o.grid_xy));
  EXPECT_TRUE(on(a.bandwidths.h_tau, o.grid_tau));
  EXPECT_NEAR(a.bandwidths.h_mu_test, undersmooth_for_test(a.bandwidths.h_mu, 30), 1e-15);
  EXPECT_NO_THROW(a.bandwidths.validate(s.window()));
}

TEST(Bandwidth, EventCapDropsLargeReplicates) {
  auto s = uniform_sample(12, 6, 3, 0.5);
  std::vector<MarkedPattern> pats(s.patterns().begin(), s.patterns().end());
  std::vector<double> t(30), m(30);
  for (std::size_t k = 0; k < 30; ++k) {
    t[k] = (k + 0.5) / 30.0;
    m[k] = 1.0;
  }
  pats.emplace_back(t, m);
  ReplicatedSample big(Window(0, 1), pats);
  SelectOptions o;
  o.folds = 3;
  o.max_events = 20;
  o.grid_mu = o.grid_sigma = {0.2, 0.3};
  o.grid_y = o.grid_xy = {0.3, 0.4};
  o.grid_tau = {0.2};
  EXPECT_EQ(select_bandwidths(big, o).dropped, 1u);
}
