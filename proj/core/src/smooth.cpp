#include "markpoint/smooth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "markpoint/io.hpp"

namespace markpoint {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Neighborhoods whose weight falls below this fraction of the weight before
// subtracting diagonal or left-out terms are treated as empty.
constexpr double kEmptyRatio = 1e-10;

std::string point_name(double s) { return "s=" + format_double(s); }
std::string point_name(double s, double t) {
  return "(s,t)=(" + format_double(s) + "," + format_double(t) + ")";
}

bool same_points(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

void check_bandwidth(double h) {
  if (!(h > 0.0) || !std::isfinite(h)) {
    throw ValidationError("bandwidth must be positive and finite, got " + format_double(h));
  }
}

void check_shape(const ReplicatedSample& sample, const std::vector<std::vector<double>>& values) {
  if (values.size() != sample.size()) throw ValidationError("response replicate count mismatch");
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (values[i].size() != sample[i].size()) {
      throw ValidationError("response count mismatch in replicate " + std::to_string(i));
    }
  }
}

}  // namespace

std::string to_string(CurveKind kind) {
  switch (kind) {
    case CurveKind::mean_naive: return "mean_naive";
    case CurveKind::var_naive: return "var_naive";
    case CurveKind::mean_corrected: return "mean_corrected";
    case CurveKind::tau: return "tau";
    case CurveKind::rho: return "rho";
    case CurveKind::lambda0: return "lambda0";
  }
  return "unknown";
}

std::string to_string(SurfaceKind kind) {
  switch (kind) {
    case SurfaceKind::cov_naive: return "cov_naive";
    case SurfaceKind::crosscov: return "crosscov";
    case SurfaceKind::cov_corrected: return "cov_corrected";
    case SurfaceKind::cx: return "cx";
    case SurfaceKind::rho2: return "rho2";
  }
  return "unknown";
}

std::vector<double> CurveEstimate::at(std::span<const double> points) const {
  std::vector<double> out(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) out[k] = evaluator(points[k]);
  return out;
}

std::vector<double> SurfaceEstimate::row_major() const {
  std::vector<double> out(static_cast<std::size_t>(values.size()));
  for (Eigen::Index a = 0; a < values.rows(); ++a)
    for (Eigen::Index b = 0; b < values.cols(); ++b)
      out[static_cast<std::size_t>(a * values.cols() + b)] = values(a, b);
  return out;
}

// ---------------------------------------------------------------------------
// 1-D local-linear fits

LineMoments& LineMoments::operator+=(const LineMoments& o) {
  w0 += o.w0;
  w1 += o.w1;
  w2 += o.w2;
  r0 += o.r0;
  r1 += o.r1;
  return *this;
}

LineMoments& LineMoments::operator-=(const LineMoments& o) {
  w0 -= o.w0;
  w1 -= o.w1;
  w2 -= o.w2;
  r0 -= o.r0;
  r1 -= o.r1;
  return *this;
}

LocalFit solve_line(const LineMoments& m, double zero_tol) {
  if (!(m.w0 > zero_tol)) return {kNaN, FitStatus::no_weight};
  const double tr = m.w0 + m.w2;
  const double disc = std::sqrt((m.w0 - m.w2) * (m.w0 - m.w2) + 4.0 * m.w1 * m.w1);
  const double lmax = 0.5 * (tr + disc);
  const double det = m.w0 * m.w2 - m.w1 * m.w1;
  const double lmin = lmax > 0.0 ? det / lmax : 0.0;
  if (!(lmin >= kSingularRatio * lmax)) return {m.r0 / m.w0, FitStatus::fallback};
  return {(m.w2 * m.r0 - m.w1 * m.r1) / det, FitStatus::ok};
}

namespace {

LineMoments line_moments(std::span<const double> times, std::span<const double> resp, double s,
                         double h) {
  LineMoments m;
  auto it = std::lower_bound(times.begin(), times.end(), s - h);
  for (std::size_t e = static_cast<std::size_t>(it - times.begin()); e < times.size(); ++e) {
    const double u = times[e];
    if (u > s + h) break;
    const double x = (u - s) / h;
    const double k = 0.75 * (1.0 - x * x);
    if (k <= 0.0) continue;
    const double kx = k * x;
    m.w0 += k;
    m.w1 += kx;
    m.w2 += kx * x;
    m.r0 += k * resp[e];
    m.r1 += kx * resp[e];
  }
  return m;
}

}  // namespace

LineSmoother::LineSmoother(const ReplicatedSample& sample,
                           const std::vector<std::vector<double>>& responses, double h)
    : h_(h) {
  check_bandwidth(h);
  check_shape(sample, responses);
  std::vector<std::pair<double, double>> pooled;
  pooled.reserve(sample.total_events());
  rep_times_.resize(sample.size());
  rep_resp_.resize(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto t = sample[i].times();
    rep_times_[i].assign(t.begin(), t.end());
    rep_resp_[i] = responses[i];
    for (std::size_t k = 0; k < t.size(); ++k) pooled.emplace_back(t[k], responses[i][k]);
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  times_.reserve(pooled.size());
  resp_.reserve(pooled.size());
  for (const auto& [t, r] : pooled) {
    times_.push_back(t);
    resp_.push_back(r);
  }
}

LineMoments LineSmoother::moments(double s) const { return line_moments(times_, resp_, s, h_); }

LineMoments LineSmoother::replicate_moments(std::size_t i, double s) const {
  return line_moments(rep_times_.at(i), rep_resp_.at(i), s, h_);
}

LocalFit LineSmoother::fit(double s) const { return solve_line(moments(s)); }

LocalFit LineSmoother::fit_without(std::size_t i, double s) const {
  LineMoments m = moments(s);
  const double full = m.w0;
  m -= replicate_moments(i, s);
  return solve_line(m, kEmptyRatio * full);
}

// ---------------------------------------------------------------------------
// 2-D pair accumulators

PairBlock& PairBlock::operator-=(const PairBlock& o) {
  for (int k = 0; k < 6; ++k) b[k] -= o.b[k];
  for (int k = 0; k < 3; ++k) r[k] -= o.r[k];
  return *this;
}

LocalFit PairBlock::solve(Eigen::Index a, Eigen::Index c) const {
  const double b00 = b[0](a, c);
  const double sc = scale(a, c);
  if (!(sc > 0.0) || !(b00 > kEmptyRatio * sc)) return {kNaN, FitStatus::no_weight};
  Eigen::Matrix3d m;
  m << b00, b[1](a, c), b[2](a, c),  //
      b[1](a, c), b[3](a, c), b[4](a, c),  //
      b[2](a, c), b[4](a, c), b[5](a, c);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
  es.computeDirect(m, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues()(0);
  const double lmax = es.eigenvalues()(2);
  if (!(lmin >= kSingularRatio * lmax)) return {r[0](a, c) / b00, FitStatus::fallback};
  Eigen::Vector3d rhs(r[0](a, c), r[1](a, c), r[2](a, c));
  Eigen::Vector3d beta = m.ldlt().solve(rhs);
  return {beta(0), FitStatus::ok};
}

namespace detail {

namespace {

constexpr int kStride = PowerTable::kPowers * 2;

// Coefficients (in z) of K(z + d) (z + d)^p for p = 0, 1, 2.
struct KernelPolys {
  double p0[3];
  double p1[4];
  double p2[5];
  explicit KernelPolys(double d) {
    p0[0] = 0.75 * (1.0 - d * d);
    p0[1] = -1.5 * d;
    p0[2] = -0.75;
    p1[0] = d * p0[0];
    for (int k = 1; k < 3; ++k) p1[k] = d * p0[k] + p0[k - 1];
    p1[3] = p0[2];
    p2[0] = d * p1[0];
    for (int k = 1; k < 4; ++k) p2[k] = d * p1[k] + p1[k - 1];
    p2[4] = p1[3];
  }
};

template <int NA, int NB>
double poly_dot(const double (&a)[NA], const double (&b)[NB], const double* m, int w) {
  double sum = 0.0;
  for (int i = 0; i < NA; ++i) {
    double inner = 0.0;
    for (int j = 0; j < NB; ++j) inner += b[j] * m[(i + j) * 2 + w];
    sum += a[i] * inner;
  }
  return sum;
}

}  // namespace

PowerTable::PowerTable(std::span<const double> sorted_times, std::span<const double> weight,
                       double h)
    : h_(h), times_(sorted_times.begin(), sorted_times.end()) {
  const std::size_t n = times_.size();
  origin_ = n ? times_.front() : 0.0;
  const std::size_t nbins =
      n ? static_cast<std::size_t>(std::floor((times_.back() - origin_) / h_)) + 1 : 0;
  bin_start_.assign(nbins + 1, n);
  prefix_.assign(n * kStride, 0.0);
  total_.assign(nbins * kStride, 0.0);
  double acc[kStride] = {};
  std::size_t cur = 0;
  bool started = false;
  for (std::size_t e = 0; e < n; ++e) {
    std::size_t b = std::min(nbins - 1, static_cast<std::size_t>(std::floor((times_[e] - origin_) / h_)));
    if (!started || b != cur) {
      if (started) std::copy(acc, acc + kStride, total_.begin() + static_cast<std::ptrdiff_t>(cur * kStride));
      for (std::size_t bb = started ? cur + 1 : 0; bb <= b; ++bb) bin_start_[bb] = e;
      std::fill(acc, acc + kStride, 0.0);
      cur = b;
      started = true;
    }
    std::copy(acc, acc + kStride, prefix_.begin() + static_cast<std::ptrdiff_t>(e * kStride));
    const double center = origin_ + (static_cast<double>(b) + 0.5) * h_;
    const double z = (times_[e] - center) / h_;
    const double w = weight.empty() ? 0.0 : weight[e];
    double zk = 1.0;
    for (int k = 0; k < kPowers; ++k) {
      acc[k * 2] += zk;
      acc[k * 2 + 1] += zk * w;
      zk *= z;
    }
  }
  if (started) {
    std::copy(acc, acc + kStride, total_.begin() + static_cast<std::ptrdiff_t>(cur * kStride));
    for (std::size_t bb = cur + 1; bb <= nbins; ++bb) bin_start_[bb] = n;
  }
}

void PowerTable::diag(double s, double t, double b[6], double r[3]) const {
  std::fill(b, b + 6, 0.0);
  std::fill(r, r + 3, 0.0);
  const double lo = std::max(s, t) - h_;
  const double hi = std::min(s, t) + h_;
  if (lo > hi || times_.empty()) return;
  const std::size_t e1 =
      static_cast<std::size_t>(std::lower_bound(times_.begin(), times_.end(), lo) - times_.begin());
  const std::size_t e2 =
      static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), hi) - times_.begin());
  if (e1 >= e2) return;
  const std::size_t nbins = bin_start_.size() - 1;
  auto bin_of = [&](double u) {
    return std::min(nbins - 1, static_cast<std::size_t>(std::floor((u - origin_) / h_)));
  };
  const std::size_t b1 = bin_of(times_[e1]);
  const std::size_t b2 = bin_of(times_[e2 - 1]);
  double m[kStride];
  for (std::size_t bb = b1; bb <= b2; ++bb) {
    const std::size_t start = std::max(e1, bin_start_[bb]);
    const std::size_t end = std::min(e2, bin_start_[bb + 1]);
    if (start >= end) continue;
    const double* top = end == bin_start_[bb + 1] ? &total_[bb * kStride] : &prefix_[end * kStride];
    const double* bottom = &prefix_[start * kStride];
    for (int k = 0; k < kStride; ++k) m[k] = top[k] - bottom[k];
    const double center = origin_ + (static_cast<double>(bb) + 0.5) * h_;
    const KernelPolys x((center - s) / h_);
    const KernelPolys y((center - t) / h_);
    b[0] += poly_dot(x.p0, y.p0, m, 0);
    b[1] += poly_dot(x.p1, y.p0, m, 0);
    b[2] += poly_dot(x.p0, y.p1, m, 0);
    b[3] += poly_dot(x.p2, y.p0, m, 0);
    b[4] += poly_dot(x.p1, y.p1, m, 0);
    b[5] += poly_dot(x.p0, y.p2, m, 0);
    r[0] += poly_dot(x.p0, y.p0, m, 1);
    r[1] += poly_dot(x.p1, y.p0, m, 1);
    r[2] += poly_dot(x.p0, y.p1, m, 1);
  }
}

}  // namespace detail

PairSmoother::PairSmoother(const ReplicatedSample& sample,
                           const std::vector<std::vector<double>>& residuals, double h,
                           PairResponse response)
    : h_(h), response_(response), n_(sample.size()) {
  check_bandwidth(h);
  check_shape(sample, residuals);
  struct Event {
    double t;
    double eps;
    std::size_t rep;
  };
  std::vector<Event> pooled;
  pooled.reserve(sample.total_events());
  rep_times_.resize(n_);
  rep_eps_.resize(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    auto t = sample[i].times();
    if (t.size() >= 2) has_pairs_ = true;
    rep_times_[i].assign(t.begin(), t.end());
    rep_eps_[i] = residuals[i];
    for (std::size_t k = 0; k < t.size(); ++k) pooled.push_back({t[k], residuals[i][k], i});
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  std::vector<double> diag_weight;
  diag_weight.reserve(pooled.size());
  for (const auto& ev : pooled) {
    times_.push_back(ev.t);
    eps_.push_back(ev.eps);
    rep_.push_back(ev.rep);
    // On the diagonal u == v the response is eps^2 (product) or eps (second).
    diag_weight.push_back(response_ == PairResponse::product ? ev.eps * ev.eps : ev.eps);
  }
  table_ = detail::PowerTable(times_, diag_weight, h_);
}

PairSmoother::Features PairSmoother::features(std::span<const double> coords) const {
  const auto m = static_cast<Eigen::Index>(coords.size());
  const auto n = static_cast<Eigen::Index>(n_);
  Features out;
  for (auto& f : out.f) f = RowMatrix::Zero(m, n);
  for (auto& g : out.g) g = RowMatrix::Zero(m, n);
  for (Eigen::Index a = 0; a < m; ++a) {
    const double s = coords[static_cast<std::size_t>(a)];
    auto it = std::lower_bound(times_.begin(), times_.end(), s - h_);
    for (auto e = static_cast<std::size_t>(it - times_.begin()); e < times_.size(); ++e) {
      const double u = times_[e];
      if (u > s + h_) break;
      const double x = (u - s) / h_;
      const double k = 0.75 * (1.0 - x * x);
      if (k <= 0.0) continue;
      const auto j = static_cast<Eigen::Index>(rep_[e]);
      const double kx = k * x;
      out.f[0](a, j) += k;
      out.f[1](a, j) += kx;
      out.f[2](a, j) += kx * x;
      out.g[0](a, j) += k * eps_[e];
      out.g[1](a, j) += kx * eps_[e];
    }
  }
  return out;
}

PairBlock PairSmoother::accumulate(std::span<const double> rows,
                                   std::span<const double> cols) const {
  return assemble(rows, cols, kNoSkip);
}

PairBlock PairSmoother::accumulate_without(std::size_t i, std::span<const double> rows,
                                           std::span<const double> cols) const {
  if (i >= n_) throw ValidationError("replicate index out of range");
  return assemble(rows, cols, i);
}

PairBlock PairSmoother::assemble(std::span<const double> rows, std::span<const double> cols,
                                 std::size_t skip) const {
  const bool same = rows.data() == cols.data() && rows.size() == cols.size();
  Features fr = features(rows);
  Features fc_own = same ? Features{} : features(cols);
  Features& fc = same ? fr : fc_own;

  PairBlock blk;
  Eigen::MatrixXd full_scale;
  if (skip != kNoSkip) {
    // Weight scale of the full data, then drop the replicate's column.
    full_scale.noalias() = fr.f[0] * fc.f[0].transpose();
    const auto j = static_cast<Eigen::Index>(skip);
    for (auto* f : {&fr, &fc_own}) {
      if (f == &fc_own && same) continue;
      for (auto& m : f->f) m.col(j).setZero();
      for (auto& m : f->g) m.col(j).setZero();
    }
  }
  blk.b[0].noalias() = fr.f[0] * fc.f[0].transpose();
  blk.b[1].noalias() = fr.f[1] * fc.f[0].transpose();
  blk.b[2].noalias() = fr.f[0] * fc.f[1].transpose();
  blk.b[3].noalias() = fr.f[2] * fc.f[0].transpose();
  blk.b[4].noalias() = fr.f[1] * fc.f[1].transpose();
  blk.b[5].noalias() = fr.f[0] * fc.f[2].transpose();
  if (response_ == PairResponse::product) {
    blk.r[0].noalias() = fr.g[0] * fc.g[0].transpose();
    blk.r[1].noalias() = fr.g[1] * fc.g[0].transpose();
    blk.r[2].noalias() = fr.g[0] * fc.g[1].transpose();
  } else {
    blk.r[0].noalias() = fr.f[0] * fc.g[0].transpose();
    blk.r[1].noalias() = fr.f[1] * fc.g[0].transpose();
    blk.r[2].noalias() = fr.f[0] * fc.g[1].transpose();
  }
  blk.scale = skip != kNoSkip ? std::move(full_scale) : blk.b[0];

  // Remove the u == v terms.
  const auto nr = static_cast<Eigen::Index>(rows.size());
  const auto nc = static_cast<Eigen::Index>(cols.size());
  double db[6];
  double dr[3];
  for (Eigen::Index a = 0; a < nr; ++a) {
    const Eigen::Index c0 = same ? a : 0;
    for (Eigen::Index c = c0; c < nc; ++c) {
      const double s = rows[static_cast<std::size_t>(a)];
      const double t = cols[static_cast<std::size_t>(c)];
      if (std::abs(s - t) > 2.0 * h_) continue;
      table_.diag(s, t, db, dr);
      for (int k = 0; k < 6; ++k) blk.b[k](a, c) -= db[k];
      for (int k = 0; k < 3; ++k) blk.r[k](a, c) -= dr[k];
      if (same && c != a) {
        // Mirror: swapping the roles of s and t swaps x and y.
        blk.b[0](c, a) -= db[0];
        blk.b[1](c, a) -= db[2];
        blk.b[2](c, a) -= db[1];
        blk.b[3](c, a) -= db[5];
        blk.b[4](c, a) -= db[4];
        blk.b[5](c, a) -= db[3];
        blk.r[0](c, a) -= dr[0];
        blk.r[1](c, a) -= dr[2];
        blk.r[2](c, a) -= dr[1];
      }
    }
  }
  if (skip != kNoSkip) {
    // The table removed the skipped replicate's u == v terms too; put them back.
    const auto& times = rep_times_[skip];
    const auto& eps = rep_eps_[skip];
    for (std::size_t e = 0; e < times.size(); ++e) {
      const double w = response_ == PairResponse::product ? eps[e] * eps[e] : eps[e];
      for (Eigen::Index a = 0; a < nr; ++a) {
        const double x = (times[e] - rows[static_cast<std::size_t>(a)]) / h_;
        if (std::abs(x) > 1.0) continue;
        const double kx = 0.75 * (1.0 - x * x);
        for (Eigen::Index c = 0; c < nc; ++c) {
          const double y = (times[e] - cols[static_cast<std::size_t>(c)]) / h_;
          if (std::abs(y) > 1.0) continue;
          const double kk = kx * 0.75 * (1.0 - y * y);
          blk.b[0](a, c) += kk;
          blk.b[1](a, c) += kk * x;
          blk.b[2](a, c) += kk * y;
          blk.b[3](a, c) += kk * x * x;
          blk.b[4](a, c) += kk * x * y;
          blk.b[5](a, c) += kk * y * y;
          blk.r[0](a, c) += kk * w;
          blk.r[1](a, c) += kk * x * w;
          blk.r[2](a, c) += kk * y * w;
        }
      }
    }
  }
  return blk;
}

PairBlock PairSmoother::replicate_block(std::size_t i, std::span<const double> rows,
                                        std::span<const double> cols) const {
  const auto& times = rep_times_.at(i);
  const auto& eps = rep_eps_.at(i);
  const auto nr = static_cast<Eigen::Index>(rows.size());
  const auto nc = static_cast<Eigen::Index>(cols.size());
  PairBlock blk;
  for (auto& m : blk.b) m = Eigen::MatrixXd::Zero(nr, nc);
  for (auto& m : blk.r) m = Eigen::MatrixXd::Zero(nr, nc);
  // Per-event kernel values on both sides, then all ordered distinct pairs.
  const std::size_t ni = times.size();
  Eigen::MatrixXd kr(nr, static_cast<Eigen::Index>(ni));
  Eigen::MatrixXd xr(nr, static_cast<Eigen::Index>(ni));
  Eigen::MatrixXd kc(nc, static_cast<Eigen::Index>(ni));
  Eigen::MatrixXd yc(nc, static_cast<Eigen::Index>(ni));
  for (std::size_t e = 0; e < ni; ++e) {
    const auto ee = static_cast<Eigen::Index>(e);
    for (Eigen::Index a = 0; a < nr; ++a) {
      const double x = (times[e] - rows[static_cast<std::size_t>(a)]) / h_;
      kr(a, ee) = std::abs(x) <= 1.0 ? 0.75 * (1.0 - x * x) : 0.0;
      xr(a, ee) = x;
    }
    for (Eigen::Index c = 0; c < nc; ++c) {
      const double y = (times[e] - cols[static_cast<std::size_t>(c)]) / h_;
      kc(c, ee) = std::abs(y) <= 1.0 ? 0.75 * (1.0 - y * y) : 0.0;
      yc(c, ee) = y;
    }
  }
  for (std::size_t u = 0; u < ni; ++u) {
    const auto uu = static_cast<Eigen::Index>(u);
    for (std::size_t v = 0; v < ni; ++v) {
      if (u == v) continue;
      const auto vv = static_cast<Eigen::Index>(v);
      const double w = response_ == PairResponse::product ? eps[u] * eps[v] : eps[v];
      for (Eigen::Index a = 0; a < nr; ++a) {
        const double ka = kr(a, uu);
        if (ka == 0.0) continue;
        const double x = xr(a, uu);
        for (Eigen::Index c = 0; c < nc; ++c) {
          const double kk = ka * kc(c, vv);
          if (kk == 0.0) continue;
          const double y = yc(c, vv);
          blk.b[0](a, c) += kk;
          blk.b[1](a, c) += kk * x;
          blk.b[2](a, c) += kk * y;
          blk.b[3](a, c) += kk * x * x;
          blk.b[4](a, c) += kk * x * y;
          blk.b[5](a, c) += kk * y * y;
          blk.r[0](a, c) += kk * w;
          blk.r[1](a, c) += kk * x * w;
          blk.r[2](a, c) += kk * y * w;
        }
      }
    }
  }
  blk.scale = blk.b[0];
  return blk;
}

LocalFit PairSmoother::fit(double s, double t) const {
  const double rows[1] = {s};
  const double cols[1] = {t};
  return accumulate(rows, cols).solve(0, 0);
}

// ---------------------------------------------------------------------------
// tau-hat

TauSmoother::TauSmoother(const ReplicatedSample& sample, double h) : h_(h) {
  check_bandwidth(h);
  std::vector<std::pair<double, double>> pooled;
  rep_times_.resize(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto t = sample[i].times();
    rep_times_[i].assign(t.begin(), t.end());
    const double w = t.empty() ? 0.0 : static_cast<double>(t.size() - 1);
    for (double u : t) pooled.emplace_back(u, w);
  }
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [t, w] : pooled) {
    times_.push_back(t);
    pair_weight_.push_back(w);
  }
}

TauSums TauSmoother::sums(double s) const {
  TauSums out;
  auto it = std::lower_bound(times_.begin(), times_.end(), s - h_);
  for (auto e = static_cast<std::size_t>(it - times_.begin()); e < times_.size(); ++e) {
    if (times_[e] > s + h_) break;
    const double k = kernel_weight(times_[e], s);
    out.num += k * pair_weight_[e];
    out.den += k;
  }
  return out;
}

TauSums TauSmoother::replicate_sums(std::size_t i, double s) const {
  TauSums out;
  const auto& t = rep_times_.at(i);
  const double w = t.empty() ? 0.0 : static_cast<double>(t.size() - 1);
  for (double u : t) {
    const double k = kernel_weight(u, s);
    out.num += k * w;
    out.den += k;
  }
  return out;
}

double TauSmoother::kernel_weight(double u, double s) const {
  const double x = (u - s) / h_;
  return std::abs(x) <= 1.0 ? 0.75 * (1.0 - x * x) : 0.0;
}

double TauSmoother::value(double s) const {
  TauSums t = sums(s);
  if (!(t.den > 0.0)) throw EstimationError("tau: zero kernel weight at " + point_name(s));
  return t.num / t.den;
}

double TauSmoother::value_without(std::size_t i, double s) const {
  TauSums t = sums(s);
  const double full = t.den;
  TauSums r = replicate_sums(i, s);
  t.num -= r.num;
  t.den -= r.den;
  if (!(t.den > kEmptyRatio * full)) {
    throw EstimationError("tau: zero kernel weight at " + point_name(s) + " without replicate " +
                          std::to_string(i));
  }
  return t.num / t.den;
}

// ---------------------------------------------------------------------------
// Estimators

std::vector<std::vector<double>> marks_of(const ReplicatedSample& sample) {
  std::vector<std::vector<double>> out(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto m = sample[i].marks();
    out[i].assign(m.begin(), m.end());
  }
  return out;
}

std::vector<std::vector<double>> residuals(const ReplicatedSample& sample,
                                           const CurveEstimate& curve) {
  std::vector<std::vector<double>> out(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& p = sample[i];
    out[i].resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) out[i][k] = p.marks()[k] - curve(p.times()[k]);
  }
  return out;
}

CurveEstimate smooth_curve(std::shared_ptr<const LineSmoother> smoother, const Grid& grid,
                           CurveKind kind) {
  CurveEstimate out{grid, {}, smoother->bandwidth(), kind, {}, {}, {}};
  out.values.resize(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) {
    LocalFit f = smoother->fit(grid[a]);
    if (f.status == FitStatus::no_weight) {
      throw EstimationError(to_string(kind) + ": zero kernel weight at " + point_name(grid[a]) +
                            " (h=" + format_double(smoother->bandwidth()) + ")");
    }
    if (f.status == FitStatus::fallback) out.fallback_points.push_back(a);
    out.values[a] = f.value;
  }
  out.raw_values = out.values;
  out.evaluator = [smoother, kind](double s) {
    LocalFit f = smoother->fit(s);
    if (f.status == FitStatus::no_weight) {
      throw EstimationError(to_string(kind) + ": zero kernel weight at " + point_name(s) +
                            " (h=" + format_double(smoother->bandwidth()) + ")");
    }
    return f.value;
  };
  return out;
}

CurveEstimate estimate_mean_naive(const ReplicatedSample& sample, double h_mu, const Grid& grid) {
  auto sm = std::make_shared<const LineSmoother>(sample, marks_of(sample), h_mu);
  return smooth_curve(std::move(sm), grid, CurveKind::mean_naive);
}

CurveEstimate estimate_var_naive(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                                 double h_sigma, const Grid& grid) {
  auto resp = residuals(sample, mu_tilde);
  for (auto& r : resp)
    for (double& v : r) v *= v;
  auto sm = std::make_shared<const LineSmoother>(sample, resp, h_sigma);
  CurveEstimate out = smooth_curve(std::move(sm), grid, CurveKind::var_naive);
  for (double& v : out.values) v = std::max(v, 0.0);
  return out;
}

SurfaceEstimate smooth_surface(const ReplicatedSample& sample,
                               const std::vector<std::vector<double>>& resid, double h,
                               PairResponse response, const Grid& grid, SurfaceKind kind) {
  auto sm = std::make_shared<const PairSmoother>(sample, resid, h, response);
  if (!sm->has_pairs()) throw EstimationError(to_string(kind) + ": no pairs");
  auto inflated = std::make_shared<const PairSmoother>(sample, resid, 1.5 * h, response);
  const bool symmetric = response == PairResponse::product;

  SurfaceEstimate out{grid, grid, {}, h, kind, symmetric, {}, {}, {}};
  const auto m = static_cast<Eigen::Index>(grid.size());
  out.values.resize(m, m);
  PairBlock blk = sm->accumulate(grid.points(), grid.points());
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index c = symmetric ? a : 0; c < m; ++c) {
      const double s = grid[static_cast<std::size_t>(a)];
      const double t = grid[static_cast<std::size_t>(c)];
      LocalFit f = blk.solve(a, c);
      const auto node = std::make_pair(static_cast<std::size_t>(a), static_cast<std::size_t>(c));
      if (f.status == FitStatus::no_weight) {
        f = inflated->fit(s, t);
        if (f.status == FitStatus::no_weight) {
          throw EstimationError(to_string(kind) + ": no pairs near " + point_name(s, t) +
                                " even at 1.5x bandwidth");
        }
        out.inflated_points.push_back(node);
      }
      if (f.status == FitStatus::fallback) out.fallback_points.push_back(node);
      out.values(a, c) = f.value;
      if (symmetric) out.values(c, a) = f.value;
    }
  }
  out.evaluator = [sm, inflated, kind](double s, double t) {
    LocalFit f = sm->fit(s, t);
    if (f.status == FitStatus::no_weight) f = inflated->fit(s, t);
    if (f.status == FitStatus::no_weight) {
      throw EstimationError(to_string(kind) + ": no pairs near " + point_name(s, t) +
                            " even at 1.5x bandwidth");
    }
    return f.value;
  };
  return out;
}

SurfaceEstimate estimate_cov_naive(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                                   double h_y, const Grid& grid) {
  return smooth_surface(sample, residuals(sample, mu_tilde), h_y, PairResponse::product, grid,
                        SurfaceKind::cov_naive);
}

SurfaceEstimate estimate_crosscov(const ReplicatedSample& sample, const CurveEstimate& mu_tilde,
                                  double h_xy, const Grid& grid) {
  return smooth_surface(sample, residuals(sample, mu_tilde), h_xy, PairResponse::second, grid,
                        SurfaceKind::crosscov);
}

CurveEstimate estimate_tau(const ReplicatedSample& sample, double h_tau, const Grid& grid) {
  auto sm = std::make_shared<const TauSmoother>(sample, h_tau);
  CurveEstimate out{grid, {}, h_tau, CurveKind::tau, {}, {}, {}};
  out.values.resize(grid.size());
  for (std::size_t a = 0; a < grid.size(); ++a) out.values[a] = sm->value(grid[a]);
  out.raw_values = out.values;
  out.evaluator = [sm](double s) { return sm->value(s); };
  return out;
}

CurveEstimate correct_mean(const CurveEstimate& mu_tilde, const SurfaceEstimate& cxy) {
  if (!same_points(mu_tilde.grid.points(), cxy.grid_s.points()) ||
      !same_points(mu_tilde.grid.points(), cxy.grid_t.points())) {
    throw ValidationError("correct_mean: evaluation points of mean and cross-covariance differ");
  }
  CurveEstimate out = mu_tilde;
  out.kind = CurveKind::mean_corrected;
  out.fallback_points.clear();
  for (std::size_t a = 0; a < out.values.size(); ++a) {
    const auto aa = static_cast<Eigen::Index>(a);
    out.values[a] = mu_tilde.values[a] - cxy.values(aa, aa);
  }
  out.raw_values = out.values;
  auto mu_eval = mu_tilde.evaluator;
  auto cxy_eval = cxy.evaluator;
  out.evaluator = [mu_eval, cxy_eval](double s) { return mu_eval(s) - cxy_eval(s, s); };
  return out;
}

SurfaceEstimate correct_cov(const SurfaceEstimate& cy_tilde, const SurfaceEstimate& cxy) {
  if (!same_points(cy_tilde.grid_s.points(), cxy.grid_s.points()) ||
      !same_points(cy_tilde.grid_t.points(), cxy.grid_t.points()) ||
      !same_points(cxy.grid_s.points(), cxy.grid_t.points())) {
    throw ValidationError("correct_cov: grids of covariance and cross-covariance differ");
  }
  SurfaceEstimate out = cy_tilde;
  out.kind = SurfaceKind::cov_corrected;
  out.symmetric = true;
  out.fallback_points.clear();
  out.inflated_points.clear();
  out.values = cy_tilde.values.array() - cxy.values.array() * cxy.values.transpose().array();
  auto cy_eval = cy_tilde.evaluator;
  auto cxy_eval = cxy.evaluator;
  out.evaluator = [cy_eval, cxy_eval](double s, double t) {
    return cy_eval(s, t) - cxy_eval(s, t) * cxy_eval(t, s);
  };
  return out;
}

MarkEstimates estimate_mark_functions(const ReplicatedSample& sample, double h_mu, double h_sigma,
                                      double h_y, double h_xy, const Grid& grid) {
  CurveEstimate mu = estimate_mean_naive(sample, h_mu, grid);
  CurveEstimate sigma2 = estimate_var_naive(sample, mu, h_sigma, grid);
  SurfaceEstimate cy = estimate_cov_naive(sample, mu, h_y, grid);
  SurfaceEstimate cxy = estimate_crosscov(sample, mu, h_xy, grid);
  CurveEstimate mu_hat = correct_mean(mu, cxy);
  SurfaceEstimate cy_hat = correct_cov(cy, cxy);
  return MarkEstimates{std::move(mu), std::move(sigma2), std::move(cy), std::move(cxy), std::move(mu_hat),
                       std::move(cy_hat)};
}

}  // namespace markpoint
