#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Everything here enumerates events and pairs directly and solves the
// weighted least-squares problems densely; nothing is shared with the library
// beyond the data types.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "markpoint/types.hpp"

namespace oracle {

inline double epan(double u) { return std::abs(u) <= 1.0 ? 0.75 * (1.0 - u * u) : 0.0; }

// Intercept of a weighted least-squares fit; falls back to the weighted mean
// when the scaled normal matrix is numerically singular (same rule as the
// library: eigenvalue ratio below 1e-10). Returns nullopt when no weight.
inline std::optional<double> wls_intercept(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                           const Eigen::VectorXd& y) {
  if (x.rows() == 0 || w.sum() <= 0.0) return std::nullopt;
  Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(xtwx);
  const double lmin = es.eigenvalues().minCoeff();
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmin >= 1e-10 * lmax)) return w.dot(y) / w.sum();
  Eigen::VectorXd sw = w.array().sqrt();
  Eigen::MatrixXd a = sw.asDiagonal() * x;
  Eigen::VectorXd b = sw.asDiagonal() * y;
  Eigen::VectorXd beta = a.colPivHouseholderQr().solve(b);
  return beta(0);
}

// Local-linear fit of per-event responses at s, pooled over replicates.
inline std::optional<double> line_fit(const markpoint::ReplicatedSample& sample,
                                      const std::vector<std::vector<double>>& resp, double s,
                                      double h, std::optional<std::size_t> skip = std::nullopt) {
  std::vector<double> xs, ws, ys;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (skip && *skip == i) continue;
    for (std::size_t k = 0; k < sample[i].size(); ++k) {
      double x = (sample[i].times()[k] - s) / h;
      double w = epan(x);
      if (w <= 0.0) continue;
      xs.push_back(x);
      ws.push_back(w);
      ys.push_back(resp[i][k]);
    }
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(xs.size()), 2);
  Eigen::VectorXd w(static_cast<Eigen::Index>(xs.size())), y(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto kk = static_cast<Eigen::Index>(k);
    x(kk, 0) = 1.0;
    x(kk, 1) = xs[k];
    w(kk) = ws[k];
    y(kk) = ys[k];
  }
  return wls_intercept(x, w, y);
}

enum class PairKind { product, second };

// Local-linear fit over all ordered distinct within-replicate pairs.
inline std::optional<double> pair_fit(const markpoint::ReplicatedSample& sample,
                                      const std::vector<std::vector<double>>& eps, double s,
                                      double t, double h, PairKind kind,
                                      std::optional<std::size_t> skip = std::nullopt) {
  std::vector<std::array<double, 4>> rows;  // x, y, weight, response
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (skip && *skip == i) continue;
    auto times = sample[i].times();
    for (std::size_t u = 0; u < times.size(); ++u) {
      for (std::size_t v = 0; v < times.size(); ++v) {
        if (u == v) continue;
        double x = (times[u] - s) / h;
        double y = (times[v] - t) / h;
        double w = epan(x) * epan(y);
        if (w <= 0.0) continue;
        double r = kind == PairKind::product ? eps[i][u] * eps[i][v] : eps[i][v];
        rows.push_back({x, y, w, r});
      }
    }
  }
  const auto m = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(m, 3);
  Eigen::VectorXd w(m), y(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto& r = rows[static_cast<std::size_t>(k)];
    x(k, 0) = 1.0;
    x(k, 1) = r[0];
    x(k, 2) = r[1];
    w(k) = r[2];
    y(k) = r[3];
  }
  return wls_intercept(x, w, y);
}

// Random toy sample on [0, 1] with at most `max_events` events in total.
inline markpoint::ReplicatedSample toy_sample(std::mt19937_64& rng, std::size_t n,
                                              std::size_t max_events) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<markpoint::MarkedPattern> patterns;
  std::size_t per = max_events / n;
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> cnt(2, per);
    std::size_t k = cnt(rng);
    std::vector<double> t(k), z(k);
    for (std::size_t j = 0; j < k; ++j) {
      t[j] = unif(rng);
      z[j] = 1.0 + 2.0 * t[j] + norm(rng);
    }
    patterns.emplace_back(t, z);
  }
  return markpoint::ReplicatedSample(markpoint::Window(0.0, 1.0), std::move(patterns));
}

}  // namespace oracle
