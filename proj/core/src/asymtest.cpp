#include "markpoint/asymtest.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <json.hpp>

#include "markpoint/io.hpp"
#include "markpoint/parallel.hpp"

namespace markpoint {

using nlohmann::json;

namespace {

json bandwidths_json(const Bandwidths& b) {
  return json{{"h_mu", b.h_mu},       {"h_y", b.h_y},         {"h_sigma", b.h_sigma},
              {"h_xy", b.h_xy},       {"h_tau", b.h_tau},     {"h_mu_test", b.h_mu_test},
              {"h_sigma_test", b.h_sigma_test}};
}

// Leave-one-out fit of a pair smoother at one node, with the inflated
// bandwidth as a fallback.
LocalFit pair_fit_without(const PairSmoother& sm, const PairSmoother& wide, std::size_t i, double s,
                          double t) {
  const double r[1] = {s};
  const double c[1] = {t};
  LocalFit f = sm.accumulate_without(i, r, c).solve(0, 0);
  if (f.status != FitStatus::no_weight) return f;
  return wide.accumulate_without(i, r, c).solve(0, 0);
}

}  // namespace

std::string bandwidths_to_json(const Bandwidths& b) { return bandwidths_json(b).dump(2); }

Bandwidths bandwidths_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("bandwidth file is not valid JSON: ") + e.what());
  }
  // Accept either a bare object or a report/manifest with a "bandwidths" member.
  if (j.is_object() && j.contains("bandwidths")) j = j["bandwidths"];
  if (!j.is_object()) throw ValidationError("bandwidths must be a JSON object");
  Bandwidths b;
  auto get = [&](const char* key, double& dst) {
    if (!j.contains(key)) throw ValidationError(std::string("bandwidths: missing ") + key);
    if (!j[key].is_number()) throw ValidationError(std::string("bandwidths: ") + key + " is not a number");
    dst = j[key].get<double>();
  };
  get("h_mu", b.h_mu);
  get("h_y", b.h_y);
  get("h_sigma", b.h_sigma);
  get("h_xy", b.h_xy);
  get("h_tau", b.h_tau);
  get("h_mu_test", b.h_mu_test);
  get("h_sigma_test", b.h_sigma_test);
  return b;
}

std::string report_to_json(const TestReport& r) {
  json j{{"t_n", r.t_n},
         {"omega_hat", r.omega_hat},
         {"z", r.z},
         {"p_asymptotic_two_sided", r.p_two_sided},
         {"p_asymptotic_one_sided", r.p_one_sided},
         {"p_permutation", r.p_permutation ? json(*r.p_permutation) : json(nullptr)},
         {"b", r.b ? json(*r.b) : json(nullptr)},
         {"n", r.n},
         {"bandwidths", bandwidths_json(r.bandwidths)},
         {"seed", r.seed},
         {"notes", r.notes}};
  return j.dump(2);
}

double p_value_two_sided(double z) {
  boost::math::normal nd;
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(nd, std::abs(z))));
}

double p_value_one_sided(double z) {
  boost::math::normal nd;
  return boost::math::cdf(boost::math::complement(nd, z));
}

double compute_tn(const ReplicatedSample& sample, const std::function<double(double)>& mu,
                  const std::function<double(double)>& sigma2) {
  double total = 0.0;
  for (const auto& p : sample.patterns()) {
    if (p.size() < 2) continue;
    double inner = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double v = p.times()[k];
      const double e = p.marks()[k] - mu(v);
      inner += e * e - sigma2(v);
    }
    total += static_cast<double>(p.size() - 1) * inner;
  }
  return total / static_cast<double>(sample.size());
}

double compute_tn(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                  const CurveEstimate& sigma_tilde) {
  return compute_tn(sample, mu_tilde.evaluator, sigma_tilde.evaluator);
}

std::array<double, 5> omega_terms(const Eigen::MatrixXd& cy, std::span<const double> sigma2,
                                  std::span<const double> tau) {
  const auto m = cy.rows();
  if (cy.cols() != m || static_cast<std::size_t>(m) != sigma2.size() ||
      sigma2.size() != tau.size()) {
    throw ValidationError("omega_terms: size mismatch");
  }
  const double ni = static_cast<double>(m);
  double c2 = 0.0, c2_tau = 0.0, c2_pair = 0.0, s4 = 0.0, s4_tau = 0.0;
  for (Eigen::Index a = 0; a < m; ++a) {
    const double ta = tau[static_cast<std::size_t>(a)];
    for (Eigen::Index b = 0; b < m; ++b) {
      if (a == b) continue;
      const double c = cy(a, b) * cy(a, b);
      const double tb = tau[static_cast<std::size_t>(b)];
      c2 += c;
      c2_tau += (3.0 - 2.0 * ta) * c;
      c2_pair += (1.0 - ta) * (1.0 - tb) * c;
    }
    const double s = sigma2[static_cast<std::size_t>(a)];
    s4 += s * s;
    s4_tau += (1.0 - ta) * s * s;
  }
  return {2.0 * (ni - 2.0) * (ni - 3.0) * c2, 2.0 * (ni - 1.0) * (ni - 2.0) * s4,
          2.0 * (ni - 2.0) * c2_tau, 2.0 * c2_pair, 2.0 * (ni - 1.0) * s4_tau};
}

OmegaResult estimate_omega(const ReplicatedSample& sample, const Bandwidths& bw) {
  const std::size_t n = sample.size();
  if (n < 2) throw ValidationError("empirical variance needs at least 2 replicates");

  const LineSmoother mu(sample, marks_of(sample), bw.h_mu);
  std::vector<std::vector<double>> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = sample[i];
    resid[i].resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      LocalFit f = mu.fit(p.times()[k]);
      if (f.status == FitStatus::no_weight) {
        throw EstimationError("mean_naive: zero kernel weight at s=" + format_double(p.times()[k]));
      }
      resid[i][k] = p.marks()[k] - f.value;
    }
  }
  auto sq = resid;
  for (auto& r : sq)
    for (double& v : r) v *= v;
  const LineSmoother sigma(sample, sq, bw.h_sigma);
  const PairSmoother cy(sample, resid, bw.h_y, PairResponse::product);
  const PairSmoother cy_wide(sample, resid, 1.5 * bw.h_y, PairResponse::product);
  const PairSmoother cxy(sample, resid, bw.h_xy, PairResponse::second);
  const PairSmoother cxy_wide(sample, resid, 1.5 * bw.h_xy, PairResponse::second);
  const TauSmoother tau(sample, bw.h_tau);

  OmegaResult out;
  out.per_replicate.assign(n, 0.0);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const auto t = sample[i].times();
      const auto m = static_cast<Eigen::Index>(t.size());
      if (m == 0) continue;
      std::vector<double> s2(t.size()), ta(t.size());
      for (std::size_t k = 0; k < t.size(); ++k) {
        LocalFit f = sigma.fit_without(i, t[k]);
        if (f.status == FitStatus::no_weight) {
          throw EstimationError("var_naive: zero kernel weight at s=" + format_double(t[k]));
        }
        s2[k] = std::max(f.value, 0.0);
        ta[k] = tau.value_without(i, t[k]);
      }
      Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m, m);
      if (m >= 2) {
        const PairBlock by = cy.accumulate_without(i, t, t);
        const PairBlock bx = cxy.accumulate_without(i, t, t);
        Eigen::MatrixXd x(m, m);
        for (Eigen::Index a = 0; a < m; ++a) {
          for (Eigen::Index b = 0; b < m; ++b) {
            if (a == b) continue;
            LocalFit f = bx.solve(a, b);
            if (f.status == FitStatus::no_weight) {
              f = pair_fit_without(cxy, cxy_wide, i, t[static_cast<std::size_t>(a)],
                                   t[static_cast<std::size_t>(b)]);
            }
            if (f.status == FitStatus::no_weight) {
              throw EstimationError("crosscov: no pairs near an event pair");
            }
            x(a, b) = f.value;
          }
        }
        for (Eigen::Index a = 0; a < m; ++a) {
          for (Eigen::Index b = a + 1; b < m; ++b) {
            LocalFit f = by.solve(a, b);
            if (f.status == FitStatus::no_weight) {
              f = pair_fit_without(cy, cy_wide, i, t[static_cast<std::size_t>(a)],
                                   t[static_cast<std::size_t>(b)]);
            }
            if (f.status == FitStatus::no_weight) {
              throw EstimationError("cov_naive: no pairs near an event pair");
            }
            const double v = f.value - x(a, b) * x(b, a);
            c(a, b) = v;
            c(b, a) = v;
          }
        }
      }
      const auto terms = omega_terms(c, s2, ta);
      double sum = 0.0;
      for (std::size_t k = 0; k < terms.size(); ++k) {
        if (!std::isfinite(terms[k])) {
          throw EstimationError("non-finite term " + std::to_string(k + 1));
        }
        sum += terms[k];
      }
      out.per_replicate[i] = sum;
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      throw EstimationError("empirical variance, replicate " + std::to_string(i) + ": " + errors[i]);
    }
  }
  double total = 0.0;
  for (double v : out.per_replicate) total += v;
  out.value = total / static_cast<double>(n);
  return out;
}

double tn_at_test_bandwidths(const ReplicatedSample& sample, const Bandwidths& bw) {
  const LineSmoother mu(sample, marks_of(sample), bw.h_mu_test);
  auto mu_at = [&mu](double s) {
    LocalFit f = mu.fit(s);
    if (f.status == FitStatus::no_weight) {
      throw EstimationError("mean_naive: zero kernel weight at s=" + format_double(s) +
                            " (test bandwidth)");
    }
    return f.value;
  };
  std::vector<std::vector<double>> sq(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& p = sample[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double m = mu_at(p.times()[k]);
      const double e = p.marks()[k] - m;
      sq[i].push_back(e * e);
    }
  }
  const LineSmoother sigma(sample, sq, bw.h_sigma_test);
  double total = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& p = sample[i];
    if (p.size() < 2) continue;
    double inner = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      LocalFit f = sigma.fit(p.times()[k]);
      if (f.status == FitStatus::no_weight) {
        throw EstimationError("var_naive: zero kernel weight at s=" + format_double(p.times()[k]) +
                              " (test bandwidth)");
      }
      inner += sq[i][k] - f.value;
    }
    total += static_cast<double>(p.size() - 1) * inner;
  }
  return total / static_cast<double>(sample.size());
}

TestReport asymptotic_test(const ReplicatedSample& sample, const Bandwidths& bw) {
  TestReport r;
  r.bandwidths = bw;
  r.n = sample.size();
  r.t_n = tn_at_test_bandwidths(sample, bw);
  r.omega_hat = estimate_omega(sample, bw).value;
  if (!(r.omega_hat > 0.0)) {
    throw EstimationError("empirical variance is not positive (" + format_double(r.omega_hat) + ")");
  }
  r.z = std::sqrt(static_cast<double>(r.n)) * r.t_n / std::sqrt(r.omega_hat);
  r.p_two_sided = p_value_two_sided(r.z);
  r.p_one_sided = p_value_one_sided(r.z);
  return r;
}

}  // namespace markpoint
