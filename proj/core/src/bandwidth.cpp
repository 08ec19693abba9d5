#include "markpoint/bandwidth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "markpoint/io.hpp"
#include "markpoint/kernel.hpp"
#include "markpoint/parallel.hpp"
#include "markpoint/rng.hpp"
#include "markpoint/smooth.hpp"

namespace markpoint {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> complement(std::size_t n, const std::vector<std::size_t>& held) {
  std::vector<char> out_flag(n, 0);
  for (std::size_t i : held) out_flag[i] = 1;
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < n; ++i)
    if (!out_flag[i]) train.push_back(i);
  return train;
}

// Training data of one fold, centered by the mean fitted on that fold.
struct FoldContext {
  bool ok = true;
  std::optional<ReplicatedSample> train;
  std::vector<std::vector<double>> train_resid;
  std::vector<std::size_t> held;
  std::vector<std::vector<double>> held_resid;
};

std::vector<FoldContext> fold_contexts(const ReplicatedSample& sample,
                                       const std::vector<std::vector<std::size_t>>& folds,
                                       double h_mu) {
  std::vector<FoldContext> out(folds.size());
  for (std::size_t k = 0; k < folds.size(); ++k) {
    FoldContext& c = out[k];
    const auto train_idx = complement(sample.size(), folds[k]);
    c.train = sample.subset(train_idx);
    c.held = folds[k];
    LineSmoother mu(*c.train, marks_of(*c.train), h_mu);
    auto resid_of = [&](const MarkedPattern& p, std::vector<double>& r) {
      r.resize(p.size());
      for (std::size_t e = 0; e < p.size(); ++e) {
        LocalFit f = mu.fit(p.times()[e]);
        if (f.status == FitStatus::no_weight) return false;
        r[e] = p.marks()[e] - f.value;
      }
      return true;
    };
    c.train_resid.resize(c.train->size());
    for (std::size_t i = 0; i < c.train->size() && c.ok; ++i) {
      c.ok = resid_of((*c.train)[i], c.train_resid[i]);
    }
    c.held_resid.resize(c.held.size());
    for (std::size_t j = 0; j < c.held.size() && c.ok; ++j) {
      c.ok = resid_of(sample[c.held[j]], c.held_resid[j]);
    }
  }
  return out;
}

double cv_line(const ReplicatedSample& sample, const std::vector<FoldContext>& ctx, double h) {
  double total = 0.0;
  for (const auto& c : ctx) {
    if (!c.ok) return kNaN;
    auto resp = c.train_resid;
    for (auto& r : resp)
      for (double& v : r) v *= v;
    LineSmoother sm(*c.train, resp, h);
    for (std::size_t j = 0; j < c.held.size(); ++j) {
      const auto& p = sample[c.held[j]];
      for (std::size_t e = 0; e < p.size(); ++e) {
        LocalFit f = sm.fit(p.times()[e]);
        if (f.status == FitStatus::no_weight) return kNaN;
        const double r2 = c.held_resid[j][e] * c.held_resid[j][e];
        const double d = r2 - std::max(f.value, 0.0);
        total += d * d;
      }
    }
  }
  return total;
}

double cv_pairs(const ReplicatedSample& sample, const std::vector<FoldContext>& ctx, double h,
                PairResponse response) {
  double total = 0.0;
  for (const auto& c : ctx) {
    if (!c.ok) return kNaN;
    PairSmoother sm(*c.train, c.train_resid, h, response);
    if (!sm.has_pairs()) return kNaN;
    PairSmoother wide(*c.train, c.train_resid, 1.5 * h, response);
    for (std::size_t j = 0; j < c.held.size(); ++j) {
      const auto times = sample[c.held[j]].times();
      const auto& eps = c.held_resid[j];
      const std::size_t ni = times.size();
      if (ni < 2) continue;
      PairBlock blk = sm.accumulate(times, times);
      for (std::size_t a = 0; a < ni; ++a) {
        for (std::size_t b = 0; b < ni; ++b) {
          if (a == b) continue;
          LocalFit f = blk.solve(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
          if (f.status == FitStatus::no_weight) f = wide.fit(times[a], times[b]);
          if (f.status == FitStatus::no_weight) return kNaN;
          const double target = response == PairResponse::product ? eps[a] * eps[b] : eps[b];
          const double d = target - f.value;
          total += d * d;
        }
      }
    }
  }
  return total;
}

}  // namespace

void Bandwidths::validate(const Window& window) const {
  const double half = 0.5 * window.length();
  const std::pair<const char*, double> all[] = {
      {"h_mu", h_mu},     {"h_y", h_y},   {"h_sigma", h_sigma},           {"h_xy", h_xy},
      {"h_tau", h_tau},   {"h_mu_test", h_mu_test}, {"h_sigma_test", h_sigma_test}};
  for (const auto& [name, h] : all) {
    if (!(h > 0.0) || !(h < half)) {
      throw ValidationError(std::string(name) + " = " + format_double(h) +
                            " must lie in (0, half the window length)");
    }
  }
}

double undersmooth_for_test(double h, std::size_t n) {
  if (n < 3) throw ValidationError("undersmoothing needs n >= 3");
  const double dn = static_cast<double>(n);
  return h / (std::pow(dn, 0.05) * std::log(std::log(dn)));
}

std::vector<double> geometric_grid(double lo_frac, double hi_frac, const Window& window,
                                   std::size_t count) {
  if (count == 0) return {};
  const double lo = lo_frac * window.length();
  const double hi = hi_frac * window.length();
  if (count == 1) return {lo};
  std::vector<double> out(count);
  const double ratio = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t k = 0; k < count; ++k) out[k] = lo * std::exp(ratio * static_cast<double>(k));
  out.back() = hi;
  return out;
}

std::vector<double> default_grid_mu(const Window& w) { return geometric_grid(0.02, 0.30, w); }
std::vector<double> default_grid_y(const Window& w) { return geometric_grid(0.05, 0.40, w); }
std::vector<double> default_grid_tau(const Window& w) { return geometric_grid(0.02, 0.40, w, 15); }

std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("need at least 2 folds");
  if (n < k) throw ValidationError("fewer replicates (" + std::to_string(n) + ") than folds (" +
                                   std::to_string(k) + ")");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_stream(seed, 0, 0x666f6c64);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t p = 0; p < n; ++p) folds[p % k].push_back(order[p]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

double cv_mean(const ReplicatedSample& sample, const std::vector<std::vector<std::size_t>>& folds,
               double h_mu) {
  double total = 0.0;
  for (const auto& held : folds) {
    ReplicatedSample train = sample.subset(complement(sample.size(), held));
    LineSmoother sm(train, marks_of(train), h_mu);
    for (std::size_t i : held) {
      const auto& p = sample[i];
      for (std::size_t e = 0; e < p.size(); ++e) {
        LocalFit f = sm.fit(p.times()[e]);
        if (f.status == FitStatus::no_weight) return kNaN;
        const double d = p.marks()[e] - f.value;
        total += d * d;
      }
    }
  }
  return total;
}

double cv_cov(const ReplicatedSample& sample, const std::vector<std::vector<std::size_t>>& folds,
              double h_mu_hat, double h_y) {
  return cv_pairs(sample, fold_contexts(sample, folds, h_mu_hat), h_y, PairResponse::product);
}

double cv_var(const ReplicatedSample& sample, const std::vector<std::vector<std::size_t>>& folds,
              double h_mu_hat, double h_sigma) {
  return cv_line(sample, fold_contexts(sample, folds, h_mu_hat), h_sigma);
}

double cv_crosscov(const ReplicatedSample& sample,
                   const std::vector<std::vector<std::size_t>>& folds, double h_mu_hat,
                   double h_xy) {
  return cv_pairs(sample, fold_contexts(sample, folds, h_mu_hat), h_xy, PairResponse::second);
}

double cv_rho(const ReplicatedSample& sample, double h, std::size_t quad_points) {
  const std::size_t n = sample.size();
  if (n < 2) throw ValidationError("intensity CV needs at least 2 replicates");
  if (!(h > 0.0)) throw ValidationError("bandwidth must be positive");
  const Window& w = sample.window();
  const Grid grid = Grid::uniform(w, quad_points);
  const std::size_t m = grid.size();

  std::vector<double> pooled;
  for (const auto& p : sample.patterns()) pooled.insert(pooled.end(), p.times().begin(), p.times().end());
  std::sort(pooled.begin(), pooled.end());
  auto kernel_sum = [h](std::span<const double> sorted, double s) {
    double acc = 0.0;
    auto it = std::lower_bound(sorted.begin(), sorted.end(), s - h);
    for (; it != sorted.end() && *it <= s + h; ++it) acc += kernel_h(*it - s, h);
    return acc;
  };

  std::vector<double> total(m), edge(m);
  for (std::size_t j = 0; j < m; ++j) {
    total[j] = kernel_sum(pooled, grid[j]);
    edge[j] = edge_correction(grid[j], h, w);
  }
  const double denom = static_cast<double>(n - 1);
  double score = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = sample[i].times();
    double integral = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double r = (total[j] - kernel_sum(t, grid[j])) / (denom * edge[j]);
      integral += grid.weights()[j] * r * r;
    }
    double own = 0.0;
    for (double u : t) {
      own += (kernel_sum(pooled, u) - kernel_sum(t, u)) / (denom * edge_correction(u, h, w));
    }
    score += integral - 2.0 * own;
  }
  return score;
}

double argmin_bandwidth(const std::string& name, const std::vector<double>& candidates,
                        const std::vector<double>& scores) {
  if (candidates.empty()) throw ValidationError(name + ": empty candidate grid");
  double best = std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (double s : scores) {
    if (!std::isfinite(s)) continue;
    best = std::min(best, s);
    worst = std::max(worst, std::abs(s));
  }
  if (!std::isfinite(best)) {
    std::string msg = name + ": every candidate failed (h =";
    for (double h : candidates) msg += " " + format_double(h);
    throw EstimationError(msg + ")");
  }
  // Differences at rounding level count as ties.
  const double tol = 1e-10 * std::max(std::abs(best), 1e-6 * worst);
  double pick = -1.0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (std::isfinite(scores[k]) && scores[k] <= best + tol) pick = std::max(pick, candidates[k]);
  }
  return pick;
}

double cv_rho2(const ReplicatedSample& sample, double h, std::size_t quad_points) {
  const std::size_t n = sample.size();
  if (n < 3) throw ValidationError("pair intensity CV needs at least 3 replicates");
  if (!(h > 0.0)) throw ValidationError("bandwidth must be positive");
  const Window& w = sample.window();
  const Grid grid = Grid::uniform(w, quad_points);
  const auto m = static_cast<Eigen::Index>(grid.size());
  const auto nn = static_cast<Eigen::Index>(n);
  const double n1 = static_cast<double>(n - 1);

  // Integral part on the grid. With P_i the pair sums of replicate i and P
  // their total, sum_i (P - P_i)^2 = (n - 2) P^2 + sum_i P_i^2.
  std::vector<double> e(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) e[a] = edge_correction(grid[a], h, w);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(m, m);
  Eigen::ArrayXXd sq = Eigen::ArrayXXd::Zero(m, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = sample[i].times();
    Eigen::MatrixXd k(m, static_cast<Eigen::Index>(t.size()));
    for (Eigen::Index c = 0; c < k.cols(); ++c)
      for (Eigen::Index a = 0; a < m; ++a) k(a, c) = kernel_h(t[static_cast<std::size_t>(c)] - grid[static_cast<std::size_t>(a)], h);
    const Eigen::VectorXd f = k.rowwise().sum();
    Eigen::MatrixXd pi = f * f.transpose();
    pi.noalias() -= k * k.transpose();
    p += pi;
    sq += pi.array().square();
  }
  const Eigen::ArrayXXd total = static_cast<double>(n - 2) * p.array().square() + sq;
  Eigen::VectorXd q(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    const double ea = e[static_cast<std::size_t>(a)];
    q(a) = grid.weights()[static_cast<std::size_t>(a)] / (ea * ea);
  }
  const double integral = q.dot(total.matrix() * q) / (n1 * n1);

  // Held-out part at the replicate's own event pairs.
  struct Ev {
    double t;
    std::size_t rep;
  };
  std::vector<Ev> pooled;
  for (std::size_t i = 0; i < n; ++i)
    for (double u : sample[i].times()) pooled.push_back({u, i});
  std::stable_sort(pooled.begin(), pooled.end(), [](const Ev& a, const Ev& b) { return a.t < b.t; });
  std::vector<double> ptimes(pooled.size());
  for (std::size_t k = 0; k < pooled.size(); ++k) ptimes[k] = pooled[k].t;
  const detail::PowerTable table(ptimes, {}, h);

  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  std::vector<std::size_t> offset(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offset[i + 1] = offset[i] + sample[i].size();
  RowMatrix g = RowMatrix::Zero(static_cast<Eigen::Index>(offset[n]), nn);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = sample[i].times();
    for (std::size_t k = 0; k < t.size(); ++k) {
      const auto row = static_cast<Eigen::Index>(offset[i] + k);
      auto it = std::lower_bound(ptimes.begin(), ptimes.end(), t[k] - h);
      for (auto idx = static_cast<std::size_t>(it - ptimes.begin());
           idx < ptimes.size() && ptimes[idx] <= t[k] + h; ++idx) {
        g(row, static_cast<Eigen::Index>(pooled[idx].rep)) += kernel_h(ptimes[idx] - t[k], h);
      }
    }
  }
  double own = 0.0;
  const double h2 = h * h;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = sample[i].times();
    for (std::size_t a = 0; a < t.size(); ++a) {
      const auto ra = static_cast<Eigen::Index>(offset[i] + a);
      for (std::size_t b = a + 1; b < t.size(); ++b) {
        const auto rb = static_cast<Eigen::Index>(offset[i] + b);
        double bb[6], rr[3];
        table.diag(t[a], t[b], bb, rr);
        double own_diag = 0.0;
        for (double u : t) own_diag += kernel_h(u - t[a], h) * kernel_h(u - t[b], h);
        const auto ii = static_cast<Eigen::Index>(i);
        const double pairs = g.row(ra).dot(g.row(rb)) - bb[0] / h2 -
                             (g(ra, ii) * g(rb, ii) - own_diag);
        own += 2.0 * pairs / (n1 * edge_correction(t[a], h, w) * edge_correction(t[b], h, w));
      }
    }
  }
  return integral - 2.0 * own;
}

CvTrace select_rho2_bandwidth(const ReplicatedSample& sample, const std::vector<double>& grid) {
  CvTrace tr;
  tr.candidates = grid.empty() ? default_grid_tau(sample.window()) : grid;
  tr.scores.resize(tr.candidates.size());
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (std::size_t k = 0; k < tr.candidates.size(); ++k) tr.scores[k] = cv_rho2(sample, tr.candidates[k]);
  tr.best = argmin_bandwidth("h2", tr.candidates, tr.scores);
  return tr;
}

CvTrace select_rho_bandwidth(const ReplicatedSample& sample, const std::vector<double>& grid) {
  CvTrace tr;
  tr.candidates = grid.empty() ? default_grid_tau(sample.window()) : grid;
  tr.scores.resize(tr.candidates.size());
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (std::size_t k = 0; k < tr.candidates.size(); ++k) tr.scores[k] = cv_rho(sample, tr.candidates[k]);
  tr.best = argmin_bandwidth("h_tau", tr.candidates, tr.scores);
  return tr;
}

Selection select_bandwidths(const ReplicatedSample& full, const SelectOptions& opts) {
  Selection sel;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (opts.max_events == 0 || full[i].size() <= opts.max_events) keep.push_back(i);
  }
  sel.dropped = full.size() - keep.size();
  const ReplicatedSample sample = full.subset(keep);
  sel.folds = make_folds(sample.size(), opts.folds, opts.seed);
  const Window& w = sample.window();

  auto run = [&](CvTrace& tr, const std::vector<double>& grid, const std::vector<double>& fallback,
                 const char* name, auto&& score) {
    tr.candidates = grid.empty() ? fallback : grid;
    if (tr.candidates.empty()) throw ValidationError(std::string(name) + ": empty candidate grid");
    tr.scores.assign(tr.candidates.size(), kNaN);
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
    for (std::size_t k = 0; k < tr.candidates.size(); ++k) {
      try {
        tr.scores[k] = score(tr.candidates[k]);
      } catch (const Error&) {
        tr.scores[k] = kNaN;
      }
    }
    tr.best = argmin_bandwidth(name, tr.candidates, tr.scores);
  };

  run(sel.mu, opts.grid_mu, default_grid_mu(w), "h_mu",
      [&](double h) { return cv_mean(sample, sel.folds, h); });
  const auto ctx = fold_contexts(sample, sel.folds, sel.mu.best);
  run(sel.y, opts.grid_y, default_grid_y(w), "h_y",
      [&](double h) { return cv_pairs(sample, ctx, h, PairResponse::product); });
  run(sel.sigma, opts.grid_sigma, default_grid_mu(w), "h_sigma",
      [&](double h) { return cv_line(sample, ctx, h); });
  run(sel.xy, opts.grid_xy, default_grid_y(w), "h_xy",
      [&](double h) { return cv_pairs(sample, ctx, h, PairResponse::second); });
  run(sel.tau, opts.grid_tau, default_grid_tau(w), "h_tau",
      [&](double h) { return cv_rho(sample, h); });

  Bandwidths& b = sel.bandwidths;
  b.h_mu = sel.mu.best;
  b.h_y = sel.y.best;
  b.h_sigma = sel.sigma.best;
  b.h_xy = sel.xy.best;
  b.h_tau = sel.tau.best;
  b.h_mu_test = undersmooth_for_test(b.h_mu, full.size());
  b.h_sigma_test = undersmooth_for_test(b.h_sigma, full.size());
  return sel;
}

}  // namespace markpoint
