#include "markpoint/diagnose.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <memory>
#include <numeric>

#include "markpoint/io.hpp"
#include "markpoint/kernel.hpp"
#include "markpoint/linalg.hpp"
#include "markpoint/parallel.hpp"
#include "markpoint/simgen.hpp"

namespace markpoint {

namespace {

constexpr std::uint64_t kEnvelopeTag = 0x67656e76;  // "genv"

void check_h(double h, const char* name) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw ValidationError(std::string(name) + " must be positive and finite");
  }
}

std::vector<double> edge_weights(const Grid& grid, double h) {
  std::vector<double> e(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) {
    e[a] = edge_correction(grid[a], h, grid.window());
    if (!(e[a] > 0.0)) {
      throw EstimationError("edge correction is zero at s=" + format_double(grid[a]) +
                            " (outside the window reach of h)");
    }
  }
  return e;
}

// Kernel sum over sorted times within [s - h, s + h].
double kernel_sum(std::span<const double> sorted, double s, double h) {
  double acc = 0.0;
  auto it = std::lower_bound(sorted.begin(), sorted.end(), s - h);
  for (; it != sorted.end() && *it <= s + h; ++it) acc += kernel_h(*it - s, h);
  return acc;
}

std::string node_list(const std::vector<std::pair<double, double>>& nodes) {
  std::string out;
  const std::size_t shown = std::min<std::size_t>(nodes.size(), 8);
  for (std::size_t k = 0; k < shown; ++k) {
    if (k) out += ", ";
    out += "(" + format_double(nodes[k].first) + ", " + format_double(nodes[k].second) + ")";
  }
  if (nodes.size() > shown) out += " and " + std::to_string(nodes.size() - shown) + " more";
  return out;
}

}  // namespace

CurveEstimate estimate_rho(const ReplicatedSample& sample, double h1, const Grid& grid) {
  check_h(h1, "h1");
  auto pooled = std::make_shared<std::vector<double>>();
  for (const auto& p : sample.patterns()) pooled->insert(pooled->end(), p.times().begin(), p.times().end());
  std::sort(pooled->begin(), pooled->end());
  const double n = static_cast<double>(sample.size());
  const Window w = sample.window();
  auto eval = [pooled, h1, n, w](double s) {
    const double e = edge_correction(s, h1, w);
    if (!(e > 0.0)) throw EstimationError("edge correction is zero at s=" + format_double(s));
    return kernel_sum(*pooled, s, h1) / (n * e);
  };
  CurveEstimate out{grid, {}, h1, CurveKind::rho, {}, {}, eval};
  edge_weights(grid, h1);
  for (double s : grid.points()) out.values.push_back(eval(s));
  out.raw_values = out.values;
  return out;
}

SurfaceEstimate estimate_rho2(const ReplicatedSample& sample, double h2, const Grid& grid) {
  check_h(h2, "h2");
  const auto m = static_cast<Eigen::Index>(grid.size());
  const std::vector<double> e = edge_weights(grid, h2);
  const auto n = static_cast<Eigen::Index>(sample.size());
  const auto total = static_cast<Eigen::Index>(sample.total_events());

  // Per-replicate kernel sums and per-event kernel columns; the ordered
  // distinct-pair sum is F F' minus the u == v part K K'.
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(m, n);
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(m, total);
  Eigen::Index col = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (double u : sample[static_cast<std::size_t>(i)].times()) {
      for (Eigen::Index a = 0; a < m; ++a) k(a, col) = kernel_h(u - grid[static_cast<std::size_t>(a)], h2);
      f.col(i) += k.col(col);
      ++col;
    }
  }
  Eigen::MatrixXd pairs = f * f.transpose();
  pairs.noalias() -= k * k.transpose();
  // Cancellation leaves rounding residue where only u == v terms exist.
  const double tiny = 1e-12 * std::max(pairs.cwiseAbs().maxCoeff(), 1e-300);
  pairs = pairs.unaryExpr([tiny](double v) { return std::abs(v) <= tiny ? 0.0 : v; });
  pairs = 0.5 * (pairs + pairs.transpose()).eval();

  SurfaceEstimate out{grid, grid, Eigen::MatrixXd(m, m), h2, SurfaceKind::rho2, true, {}, {}, {}};
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      out.values(a, b) = pairs(a, b) / (static_cast<double>(n) * e[static_cast<std::size_t>(a)] *
                                        e[static_cast<std::size_t>(b)]);

  std::vector<std::vector<double>> reps;
  for (const auto& p : sample.patterns()) reps.emplace_back(p.times().begin(), p.times().end());
  auto shared = std::make_shared<const std::vector<std::vector<double>>>(std::move(reps));
  const Window w = sample.window();
  out.evaluator = [shared, h2, w](double s, double t) {
    const double es = edge_correction(s, h2, w), et = edge_correction(t, h2, w);
    if (!(es > 0.0 && et > 0.0)) throw EstimationError("edge correction is zero");
    double acc = 0.0;
    for (const auto& r : *shared) {
      double fs = 0.0, ft = 0.0, diag = 0.0;
      for (double u : r) {
        const double ks = kernel_h(u - s, h2), kt = kernel_h(u - t, h2);
        fs += ks;
        ft += kt;
        diag += ks * kt;
      }
      acc += fs * ft - diag;
    }
    return acc / (static_cast<double>(shared->size()) * es * et);
  };
  return out;
}

LgcpFit fit_lgcp(const ReplicatedSample& sample, double h1, double h2, const Grid& grid) {
  const CurveEstimate rho = estimate_rho(sample, h1, grid);
  const SurfaceEstimate rho2 = estimate_rho2(sample, h2, grid);
  const auto m = static_cast<Eigen::Index>(grid.size());

  std::vector<std::pair<double, double>> bad;
  for (Eigen::Index a = 0; a < m; ++a) {
    if (!(rho.values[static_cast<std::size_t>(a)] > 0.0)) {
      bad.emplace_back(grid[static_cast<std::size_t>(a)], grid[static_cast<std::size_t>(a)]);
    }
  }
  if (!bad.empty()) {
    throw EstimationError("lgcp fit: first-order intensity not positive at s = " + node_list(bad) +
                          "; try a larger h1");
  }
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      if (!(rho2.values(a, b) > 0.0))
        bad.emplace_back(grid[static_cast<std::size_t>(a)], grid[static_cast<std::size_t>(b)]);
  if (!bad.empty()) {
    throw EstimationError("lgcp fit: second-order intensity not positive at (s, t) = " +
                          node_list(bad) + "; try a larger h2");
  }

  Eigen::MatrixXd raw(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      raw(a, b) = std::log(rho2.values(a, b)) - std::log(rho.values[static_cast<std::size_t>(a)]) -
                  std::log(rho.values[static_cast<std::size_t>(b)]);

  LgcpFit fit{rho,
              CurveEstimate{grid, {}, h1, CurveKind::lambda0, {}, {}, {}},
              SurfaceEstimate{grid, grid, 0.5 * (raw + raw.transpose()), h2, SurfaceKind::cx, true, {}, {}, {}},
              raw,
              h1,
              h2};
  auto values = std::make_shared<const Eigen::MatrixXd>(fit.cx.values);
  fit.cx.evaluator = [values, grid](double s, double t) { return bilinear(grid, *values, s, t); };

  for (Eigen::Index a = 0; a < m; ++a) {
    const double v = std::max(fit.cx.values(a, a), 0.0);
    fit.lambda0.values.push_back(fit.rho.values[static_cast<std::size_t>(a)] * std::exp(-0.5 * v));
  }
  fit.lambda0.raw_values = fit.lambda0.values;
  auto lv = std::make_shared<const std::vector<double>>(fit.lambda0.values);
  fit.lambda0.evaluator = [lv, grid](double s) { return grid.interpolate(*lv, s); };
  return fit;
}

LgcpSampler::LgcpSampler(const LgcpFit& fit, std::size_t grid_points)
    : window_(fit.lambda0.grid.window()) {
  if (grid_points < 2) throw ValidationError("sampler grid needs at least 2 points");
  const Grid target = Grid::uniform(window_, grid_points);
  grid_.assign(target.points().begin(), target.points().end());
  const auto m = static_cast<Eigen::Index>(grid_points);
  const Grid& src = fit.cx.grid_s;

  Eigen::MatrixXd cov(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b <= a; ++b) {
      const double v = bilinear(src, fit.cx.values, grid_[static_cast<std::size_t>(a)],
                                grid_[static_cast<std::size_t>(b)]);
      cov(a, b) = v;
      cov(b, a) = v;
    }
  for (Eigen::Index a = 0; a < m; ++a) cov(a, a) = std::max(cov(a, a), 0.0);
  var_.resize(grid_points);
  lambda0_.resize(grid_points);
  for (std::size_t a = 0; a < grid_points; ++a) {
    var_[a] = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
    lambda0_[a] = std::max(fit.lambda0.grid.interpolate(fit.lambda0.values, grid_[a]), 0.0);
  }

  for (double r : {1e-8, 1e-6, 1e-4}) {
    Eigen::MatrixXd c = cov;
    c.diagonal().array() += r;
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() == Eigen::Success) {
      factor_ = llt.matrixL();
      method_ = "cholesky";
      ridge_ = r;
      return;
    }
  }
  // An estimated surface is often indefinite; drop its negative part.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) {
    throw EstimationError("lgcp sampler: covariance factorization failed after ridge 1e-4");
  }
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
  Eigen::Index keep = 0;
  for (Eigen::Index k = 0; k < lam.size(); ++k) keep += lam(k) > 0.0;
  factor_ = es.eigenvectors().rightCols(keep) * lam.tail(keep).cwiseSqrt().asDiagonal();
  method_ = "eigen-clip";
  ridge_ = 0.0;
}

MarkedPattern LgcpSampler::draw(Rng& rng) const {
  const auto m = static_cast<Eigen::Index>(grid_.size());
  Eigen::VectorXd z(factor_.cols());
  for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = standard_normal(rng);
  const Eigen::VectorXd x = factor_.cols() ? Eigen::VectorXd(factor_ * z) : Eigen::VectorXd::Zero(m);
  std::vector<double> lam(grid_.size());
  double top = 0.0;
  for (std::size_t a = 0; a < grid_.size(); ++a) {
    lam[a] = lambda0_[a] * std::exp(x(static_cast<Eigen::Index>(a)));
    top = std::max(top, lam[a]);
  }
  if (!std::isfinite(top)) throw EstimationError("lgcp sampler: intensity overflow");
  const double step = (window_.hi() - window_.lo()) / static_cast<double>(grid_.size() - 1);
  auto lambda = [&](double s) {
    const double pos = (s - window_.lo()) / step;
    auto i = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(grid_.size() - 2)));
    const double f = std::clamp(pos - static_cast<double>(i), 0.0, 1.0);
    return (1.0 - f) * lam[i] + f * lam[i + 1];
  };
  std::vector<double> times = sample_inhomog_poisson(lambda, 1.05 * top, window_, rng);
  std::vector<double> marks(times.size(), 0.0);
  return MarkedPattern(std::move(times), std::move(marks));
}

double LgcpSampler::expected_count() const {
  const Grid g(window_, grid_);
  double acc = 0.0;
  for (std::size_t a = 0; a < grid_.size(); ++a) acc += g.weights()[a] * lambda0_[a] * std::exp(0.5 * var_[a]);
  return acc;
}

MarkedPattern simulate_fitted_lgcp(const LgcpFit& fit, Rng& rng) {
  return LgcpSampler(fit).draw(rng);
}

GCurve g_function(const ReplicatedSample& sample, const std::vector<double>& distances) {
  if (!std::is_sorted(distances.begin(), distances.end())) {
    throw ValidationError("distance grid must be nondecreasing");
  }
  GCurve out;
  out.distances = distances;
  out.values.assign(distances.size(), 0.0);
  std::vector<double> nn;
  for (const auto& p : sample.patterns()) {
    const auto t = p.times();
    if (t.size() < 2) {
      ++out.skipped;
      continue;
    }
    ++out.used;
    nn.assign(t.size(), 0.0);
    for (std::size_t k = 0; k < t.size(); ++k) {
      double d = std::numeric_limits<double>::infinity();
      if (k > 0) d = t[k] - t[k - 1];
      if (k + 1 < t.size()) d = std::min(d, t[k + 1] - t[k]);
      nn[k] = d;
    }
    std::sort(nn.begin(), nn.end());
    const double inv = 1.0 / static_cast<double>(nn.size());
    for (std::size_t j = 0; j < distances.size(); ++j) {
      const auto c = std::upper_bound(nn.begin(), nn.end(), distances[j]) - nn.begin();
      out.values[j] += static_cast<double>(c) * inv;
    }
  }
  if (out.used == 0) throw EstimationError("G function: no replicate has two or more events");
  for (double& v : out.values) v /= static_cast<double>(out.used);
  return out;
}

double quantile7(std::vector<double> x, double p) {
  if (x.empty()) throw ValidationError("quantile of empty data");
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("quantile level must lie in [0, 1]");
  std::sort(x.begin(), x.end());
  const double h = static_cast<double>(x.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

GEnvelope g_envelope(const LgcpSampler& sampler, std::size_t replicates,
                     const std::vector<double>& distances, std::size_t sims, double level,
                     std::uint64_t seed, const GCurve* observed) {
  if (sims < 20) throw ValidationError("envelope needs at least 20 simulations");
  if (!(level > 0.0 && level <= 1.0)) throw ValidationError("envelope level must lie in (0, 1]");
  if (replicates == 0) throw ValidationError("envelope needs at least one replicate per simulation");
  if (observed && observed->distances != distances) {
    throw ValidationError("observed G uses a different distance grid");
  }
  const std::size_t m = distances.size();
  std::vector<std::vector<double>> curves(sims);
  std::vector<std::string> errors(sims);
  const Window w(sampler.grid().front(), sampler.grid().back());
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (std::size_t k = 0; k < sims; ++k) {
    try {
      Rng rng = make_stream(seed, k, kEnvelopeTag);
      std::vector<MarkedPattern> pats;
      pats.reserve(replicates);
      for (std::size_t i = 0; i < replicates; ++i) pats.push_back(sampler.draw(rng));
      curves[k] = g_function(ReplicatedSample(w, std::move(pats)), distances).values;
    } catch (const Error& e) {
      errors[k] = e.what();
    }
  }
  for (std::size_t k = 0; k < sims; ++k)
    if (!errors[k].empty()) throw EstimationError("envelope simulation " + std::to_string(k) + ": " + errors[k]);

  GEnvelope out;
  out.distances = distances;
  out.level = level;
  out.sims = sims;
  out.lo.resize(m);
  out.hi.resize(m);
  out.mean.resize(m);
  std::vector<double> col(sims);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k < sims; ++k) col[k] = curves[k][j];
    out.lo[j] = quantile7(col, 0.5 * (1.0 - level));
    out.hi[j] = quantile7(col, 1.0 - 0.5 * (1.0 - level));
    out.mean[j] = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(sims);
  }
  if (observed) {
    out.observed = *observed;
    std::size_t inside = 0;
    for (std::size_t j = 0; j < m; ++j) {
      out.pairs.emplace_back(out.mean[j], observed->values[j]);
      inside += observed->values[j] >= out.lo[j] && observed->values[j] <= out.hi[j];
    }
    out.inside_fraction = m ? static_cast<double>(inside) / static_cast<double>(m) : 1.0;
  }
  return out;
}

std::vector<std::pair<double, double>> fpc_qq_data(const ScoreSet& scores, const FpcModel& model,
                                                   std::size_t k) {
  if (k >= model.p_y) throw ValidationError("qq: component index out of range");
  const std::size_t n = scores.replicates.size();
  if (n < 3) throw ValidationError("qq: need at least 3 replicates");
  const double sd = std::sqrt(model.eigenvalues[k]);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = scores.replicates[i].xi(static_cast<Eigen::Index>(k)) / sd;
  const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : z) ss += (v - mean) * (v - mean);
  if (!(ss > 0.0)) throw EstimationError("qq: component " + std::to_string(k) + " scores have zero variance");
  std::sort(z.begin(), z.end());
  const boost::math::normal nd;
  std::vector<std::pair<double, double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    out[i] = {boost::math::quantile(nd, p), z[i]};
  }
  return out;
}

}  // namespace markpoint
