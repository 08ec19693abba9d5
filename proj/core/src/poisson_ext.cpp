#include "markpoint/poisson_ext.hpp"

#include <cmath>
#include <memory>
#include <random>

#include "markpoint/io.hpp"
#include "markpoint/kernel.hpp"
#include "markpoint/linalg.hpp"

namespace markpoint {

namespace {

constexpr std::uint64_t kPoissonTag = 0x706f6973;  // "pois"

void clean(Eigen::MatrixXd& m) {
  const double tiny = 1e-12 * std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  m = m.unaryExpr([tiny](double v) { return std::abs(v) <= tiny ? 0.0 : v; });
}

SurfaceEstimate make_surface(const Grid& g, Eigen::MatrixXd v, double h, SurfaceKind kind, bool sym) {
  auto shared = std::make_shared<const Eigen::MatrixXd>(v);
  SurfaceEstimate out{g, g, std::move(v), h, kind, sym, {}, {}, {}};
  out.evaluator = [shared, g](double s, double t) { return bilinear(g, *shared, s, t); };
  return out;
}

}  // namespace

PoissonAccumulators poisson_accumulators(const ReplicatedSample& sample, double h, const Grid& grid) {
  if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("h must be positive and finite");
  const auto m = static_cast<Eigen::Index>(grid.size());
  const std::size_t n = sample.size();
  const auto total = static_cast<Eigen::Index>(sample.total_events());

  // Per-event kernel columns and per-replicate sums. Pair sums over u != v
  // are full products minus the u == v part.
  Eigen::MatrixXd k(m, total);
  Eigen::VectorXd z(total);
  Eigen::MatrixXd f1 = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(n));
  Eigen::MatrixXd fz = Eigen::MatrixXd::Zero(m, static_cast<Eigen::Index>(n));
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = sample[i];
    for (std::size_t e = 0; e < p.size(); ++e) {
      for (Eigen::Index a = 0; a < m; ++a) k(a, col) = kernel_h(grid[static_cast<std::size_t>(a)] - p.times()[e], h);
      z(col) = p.marks()[e];
      f1.col(static_cast<Eigen::Index>(i)) += k.col(col);
      fz.col(static_cast<Eigen::Index>(i)) += z(col) * k.col(col);
      ++col;
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  PoissonAccumulators acc;
  const Eigen::VectorXd a = k.rowwise().sum() * inv;
  const Eigen::VectorXd b = (k * z) * inv;
  acc.a.assign(a.data(), a.data() + m);
  acc.b.assign(b.data(), b.data() + m);
  acc.c = fz * f1.transpose();
  acc.c.noalias() -= k * z.asDiagonal() * k.transpose();
  acc.d = f1 * f1.transpose();
  acc.d.noalias() -= k * k.transpose();
  acc.e = fz * fz.transpose();
  acc.e.noalias() -= k * z.array().square().matrix().asDiagonal() * k.transpose();
  for (Eigen::MatrixXd* mat : {&acc.c, &acc.d, &acc.e}) {
    *mat *= inv;
    clean(*mat);
  }
  return acc;
}

PoissonMarkFit poisson_fit_from(const PoissonAccumulators& acc, const Grid& grid, double h) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  if (static_cast<Eigen::Index>(acc.a.size()) != m || acc.d.rows() != m) {
    throw ValidationError("accumulators do not match the grid");
  }
  std::string bad;
  std::size_t nbad = 0;
  auto flag = [&](const char* name, double s, double t, double v) {
    if (v > 0.0) return;
    if (nbad < 8) {
      if (!bad.empty()) bad += ", ";
      bad += std::string(name) + "(" + format_double(s) + ", " + format_double(t) + ")";
    }
    ++nbad;
  };
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s = grid[static_cast<std::size_t>(i)];
    flag("A", s, s, acc.a[static_cast<std::size_t>(i)]);
    flag("B", s, s, acc.b[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double t = grid[static_cast<std::size_t>(j)];
      flag("C", s, t, acc.c(i, j));
      flag("D", s, t, acc.d(i, j));
      flag("E", s, t, acc.e(i, j));
    }
  }
  if (nbad) {
    if (nbad > 8) bad += " and " + std::to_string(nbad - 8) + " more";
    throw EstimationError("poisson fit: accumulator not positive at " + bad + "; try a larger h");
  }

  Eigen::MatrixXd cx(m, m), cxy(m, m), cy(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double ai = acc.a[static_cast<std::size_t>(i)], aj = acc.a[static_cast<std::size_t>(j)];
      const double bj = acc.b[static_cast<std::size_t>(j)];
      cx(i, j) = std::log(acc.d(i, j) / (ai * aj));
      // Cov(X(s_i), Y(s_j)) is the log ratio taken at (s_j, s_i).
      cxy(i, j) = std::log(acc.c(j, i) * aj / (bj * acc.d(j, i)));
      cy(i, j) = std::log(acc.e(j, i) * acc.d(i, j) / (acc.c(j, i) * acc.c(i, j)));
    }
  }
  cx = (0.5 * (cx + cx.transpose())).eval();

  CurveEstimate mu{grid, {}, h, CurveKind::mean_corrected, {}, {}, {}};
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    mu.values.push_back(std::log(acc.b[ii] / acc.a[ii]) - 0.5 * cy(i, i) - cxy(i, i));
  }
  mu.raw_values = mu.values;
  auto mv = std::make_shared<const std::vector<double>>(mu.values);
  mu.evaluator = [mv, grid](double s) { return grid.interpolate(*mv, s); };

  return PoissonMarkFit{grid,
                        h,
                        acc,
                        std::move(mu),
                        make_surface(grid, cx, h, SurfaceKind::cx, true),
                        make_surface(grid, cxy, h, SurfaceKind::crosscov, false),
                        make_surface(grid, cy, h, SurfaceKind::cov_corrected, false)};
}

PoissonMarkFit estimate_poisson_mark_model(const ReplicatedSample& sample, double h, const Grid& grid) {
  for (std::size_t i = 0; i < sample.size(); ++i) {
    for (double z : sample[i].marks()) {
      if (!(z >= 0.0) || z != std::floor(z)) {
        throw ValidationError("count marks must be nonnegative integers (replicate " +
                              std::to_string(i) + " has " + format_double(z) + ")");
      }
    }
  }
  return poisson_fit_from(poisson_accumulators(sample, h, grid), grid, h);
}

ReplicatedSample simulate_poisson_marks(const Simulator& sim, std::uint64_t seed) {
  std::vector<SimReplicate> latents;
  const ReplicatedSample base = sim.simulate(&latents);
  std::vector<MarkedPattern> out;
  out.reserve(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    Rng rng = make_stream(seed, i, kPoissonTag);
    const auto t = base[i].times();
    std::vector<double> marks(t.size());
    for (std::size_t e = 0; e < t.size(); ++e) {
      const double rate = std::exp(truth::mu(t[e]) + sim.latent_y(latents[i], t[e]));
      std::poisson_distribution<long> pois(rate);
      marks[e] = static_cast<double>(pois(rng));
    }
    out.push_back(base[i].with_marks(std::move(marks)));
  }
  return ReplicatedSample(base.window(), std::move(out));
}

}  // namespace markpoint
