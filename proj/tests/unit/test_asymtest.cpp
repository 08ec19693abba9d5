#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "markpoint/asymtest.hpp"
#include "oracles.hpp"

using namespace markpoint;

namespace {

using Resp = std::vector<std::vector<double>>;

ReplicatedSample noisy_sample(std::size_t n, std::size_t per, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<MarkedPattern> pats;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = per + i % 3;
    std::vector<double> t(k), m(k);
    const double a = z(rng);
    for (std::size_t e = 0; e < k; ++e) {
      t[e] = u(rng);
      m[e] = std::sin(2.0 * t[e]) + a * std::cos(3.0 * t[e]) + 0.5 * z(rng);
    }
    pats.emplace_back(t, m);
  }
  return ReplicatedSample(Window(0, 1), pats);
}

Resp marks_copy(const ReplicatedSample& s) {
  Resp out;
  for (const auto& p : s.patterns()) out.emplace_back(p.marks().begin(), p.marks().end());
  return out;
}

Bandwidths wide_bandwidths() {
  Bandwidths b;
  b.h_mu = 0.3;
  b.h_sigma = 0.35;
  b.h_y = 0.45;
  b.h_xy = 0.4;
  b.h_tau = 0.3;
  b.h_mu_test = 0.25;
  b.h_sigma_test = 0.3;
  return b;
}

// Direct evaluation of the empirical variance from its definition.
double omega_oracle(const ReplicatedSample& s, const Bandwidths& bw) {
  const Resp marks = marks_copy(s);
  Resp eps, sq;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<double> e;
    for (std::size_t k = 0; k < s[i].size(); ++k)
      e.push_back(s[i].marks()[k] - *oracle::line_fit(s, marks, s[i].times()[k], bw.h_mu));
    eps.push_back(e);
    for (double& v : e) v *= v;
    sq.push_back(e);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto t = s[i].times();
    const std::size_t m = t.size();
    const double mm = static_cast<double>(m);
    std::vector<double> s2(m), tau(m);
    for (std::size_t a = 0; a < m; ++a) {
      s2[a] = std::max(*oracle::line_fit(s, sq, t[a], bw.h_sigma, i), 0.0);
      double num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < s.size(); ++j) {
        if (j == i) continue;
        for (double u : s[j].times()) {
          const double k = oracle::epan((u - t[a]) / bw.h_tau);
          num += k * static_cast<double>(s[j].size() - 1);
          den += k;
        }
      }
      tau[a] = num / den;
    }
    double sum = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      sum += (2.0 * (mm - 1.0) * (mm - 2.0) + 2.0 * (mm - 1.0) * (1.0 - tau[a])) * s2[a] * s2[a];
      for (std::size_t b = 0; b < m; ++b) {
        if (a == b) continue;
        const double xab = *oracle::pair_fit(s, eps, t[a], t[b], bw.h_xy, oracle::PairKind::second, i);
        const double xba = *oracle::pair_fit(s, eps, t[b], t[a], bw.h_xy, oracle::PairKind::second, i);
        const double cy = *oracle::pair_fit(s, eps, t[a], t[b], bw.h_y, oracle::PairKind::product, i);
        const double c = cy - xab * xba;
        sum += c * c *
               (2.0 * (mm - 2.0) * (mm - 3.0) + 2.0 * (mm - 2.0) * (3.0 - 2.0 * tau[a]) +
                2.0 * (1.0 - tau[a]) * (1.0 - tau[b]));
      }
    }
    total += sum;
  }
  return total / static_cast<double>(s.size());
}

}  // namespace

TEST(Asym, StatisticByHand) {
  std::vector<MarkedPattern> p;
  p.emplace_back(std::vector<double>{0.25, 0.5}, std::vector<double>{1.0, 3.0});
  p.emplace_back(std::vector<double>{0.75}, std::vector<double>{5.0});
  p.emplace_back(std::vector<double>{}, std::vector<double>{});
  p.emplace_back(std::vector<double>{0.1, 0.2, 0.3}, std::vector<double>{1.5, 0.5, 1.0});
  ReplicatedSample s(Window(0, 1), p);
  // (1)(-0.5 + 3.5) + 0 + 0 + 2(-0.25 - 0.25 - 0.5) = 1, over n = 4.
  EXPECT_EQ(compute_tn(s, [](double) { return 1.0; }, [](double) { return 0.5; }), 0.25);
}

TEST(Asym, SingleEventReplicatesDoNotContribute) {
  std::vector<MarkedPattern> p;
  for (int i = 0; i < 5; ++i) p.emplace_back(std::vector<double>{0.1 * (i + 1)}, std::vector<double>{7.0 * i});
  ReplicatedSample s(Window(0, 1), p);
  EXPECT_EQ(compute_tn(s, [](double) { return 0.0; }, [](double) { return 0.0; }), 0.0);
}

TEST(Asym, StatisticAtTestBandwidthsMatchesOracle) {
  const auto s = noisy_sample(15, 6, 3);
  const Bandwidths bw = wide_bandwidths();
  const Resp marks = marks_copy(s);
  Resp sq;
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<double> e;
    for (std::size_t k = 0; k < s[i].size(); ++k)
      e.push_back(std::pow(s[i].marks()[k] - *oracle::line_fit(s, marks, s[i].times()[k], bw.h_mu_test), 2));
    sq.push_back(e);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double inner = 0.0;
    for (std::size_t k = 0; k < s[i].size(); ++k)
      inner += sq[i][k] - *oracle::line_fit(s, sq, s[i].times()[k], bw.h_sigma_test);
    total += static_cast<double>(s[i].size() - 1) * inner;
  }
  const double expect = total / static_cast<double>(s.size());
  EXPECT_NEAR(tn_at_test_bandwidths(s, bw), expect, 1e-9 * (1.0 + std::abs(expect)));
}

TEST(Asym, OmegaTermsByHand) {
  // Two events: only the pair and tau-weighted variance terms survive.
  Eigen::MatrixXd c(2, 2);
  c << 9.0, 2.0, 2.0, 9.0;
  const std::vector<double> s2{1.0, 3.0}, tau{0.5, 0.25};
  auto t = omega_terms(c, s2, tau);
  EXPECT_EQ(t[0], 0.0);
  EXPECT_EQ(t[1], 0.0);
  EXPECT_EQ(t[2], 0.0);
  EXPECT_DOUBLE_EQ(t[3], 2.0 * 2.0 * 0.5 * 0.75 * 4.0);
  EXPECT_DOUBLE_EQ(t[4], 2.0 * (0.5 * 1.0 + 0.75 * 9.0));

  // Four events, tau = 0: every term is a plain sum.
  Eigen::MatrixXd c4 = Eigen::MatrixXd::Constant(4, 4, 1.0);
  const std::vector<double> s4{2.0, 2.0, 2.0, 2.0}, z4(4, 0.0);
  t = omega_terms(c4, s4, z4);
  EXPECT_DOUBLE_EQ(t[0], 2.0 * 2.0 * 1.0 * 12.0);
  EXPECT_DOUBLE_EQ(t[1], 2.0 * 3.0 * 2.0 * 16.0);
  EXPECT_DOUBLE_EQ(t[2], 2.0 * 2.0 * 3.0 * 12.0);
  EXPECT_DOUBLE_EQ(t[3], 2.0 * 12.0);
  EXPECT_DOUBLE_EQ(t[4], 2.0 * 3.0 * 16.0);
}

TEST(Asym, OmegaTermsSingleEventIsZero) {
  Eigen::MatrixXd c(1, 1);
  c << 4.0;
  const std::vector<double> s2{2.0}, tau{0.3};
  for (double v : omega_terms(c, s2, tau)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(omega_terms(c, std::vector<double>{1.0, 2.0}, tau), ValidationError);
}

TEST(Asym, OmegaMatchesOracle) {
  const auto s = noisy_sample(8, 8, 21);
  const Bandwidths bw = wide_bandwidths();
  const double expect = omega_oracle(s, bw);
  const OmegaResult got = estimate_omega(s, bw);
  EXPECT_NEAR(got.value, expect, 1e-8 * std::abs(expect));
  EXPECT_EQ(got.per_replicate.size(), s.size());
}

TEST(Asym, ReplicateOrderDoesNotMatter) {
  const auto s = noisy_sample(14, 6, 4);
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto p = s.subset(idx);
  const Bandwidths bw = wide_bandwidths();
  const double a = estimate_omega(s, bw).value, b = estimate_omega(p, bw).value;
  EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
  EXPECT_NEAR(tn_at_test_bandwidths(s, bw), tn_at_test_bandwidths(p, bw), 1e-10);
}

TEST(Asym, LeaveOneOutBlocksAgree) {
  const auto s = noisy_sample(10, 7, 8);
  Resp eps = marks_copy(s);
  const std::vector<double> pts{0.05, 0.3, 0.55, 0.9};
  for (auto kind : {PairResponse::product, PairResponse::second}) {
    PairSmoother sm(s, eps, 0.3, kind);
    for (std::size_t i : {0u, 4u, 9u}) {
      PairBlock a = sm.accumulate_without(i, pts, pts);
      PairBlock b = sm.accumulate(pts, pts);
      b -= sm.replicate_block(i, pts, pts);
      for (int k = 0; k < 6; ++k) EXPECT_LT((a.b[k] - b.b[k]).cwiseAbs().maxCoeff(), 1e-10);
      for (int k = 0; k < 3; ++k) EXPECT_LT((a.r[k] - b.r[k]).cwiseAbs().maxCoeff(), 1e-10);
    }
  }
}

TEST(Asym, PValues) {
  EXPECT_EQ(p_value_two_sided(0.0), 1.0);
  EXPECT_DOUBLE_EQ(p_value_one_sided(0.0), 0.5);
  EXPECT_NEAR(p_value_two_sided(1.959963984540054), 0.05, 1e-12);
  EXPECT_NEAR(p_value_two_sided(-1.959963984540054), 0.05, 1e-12);
  EXPECT_NEAR(p_value_one_sided(1.6448536269514722), 0.05, 1e-12);
  EXPECT_NEAR(p_value_one_sided(-1.6448536269514722), 0.95, 1e-12);
  EXPECT_GT(p_value_two_sided(30.0), 0.0);
  EXPECT_EQ(p_value_two_sided(40.0), 0.0);
}

TEST(Asym, ReportIsConsistent) {
  const auto s = noisy_sample(20, 6, 5);
  const Bandwidths bw = wide_bandwidths();
  const TestReport r = asymptotic_test(s, bw);
  EXPECT_GT(r.omega_hat, 0.0);
  EXPECT_NEAR(r.z, std::sqrt(20.0) * r.t_n / std::sqrt(r.omega_hat), 1e-12 * (1 + std::abs(r.z)));
  EXPECT_EQ(r.p_two_sided, p_value_two_sided(r.z));
  EXPECT_FALSE(r.p_permutation.has_value());
  const auto json = report_to_json(r);
  const Bandwidths back = bandwidths_from_json(json);
  EXPECT_EQ(back.h_y, bw.h_y);
  EXPECT_EQ(back.h_sigma_test, bw.h_sigma_test);
  EXPECT_EQ(bandwidths_from_json(bandwidths_to_json(bw)).h_tau, bw.h_tau);
}
