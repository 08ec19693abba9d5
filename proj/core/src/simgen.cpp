#include "markpoint/simgen.hpp"

#include <cmath>
#include <json.hpp>
#include <numbers>

#include "markpoint/linalg.hpp"
#include "markpoint/parallel.hpp"

namespace markpoint {

using nlohmann::json;

Marginal marginal_from_string(const std::string& name) {
  if (name == "gaussian") return Marginal::gaussian;
  if (name == "exp_centered") return Marginal::exp_centered;
  if (name == "t4_scaled") return Marginal::t4_scaled;
  throw ValidationError("unknown marginal '" + name + "' (gaussian, exp_centered, t4_scaled)");
}

std::string to_string(Marginal m) {
  switch (m) {
    case Marginal::gaussian: return "gaussian";
    case Marginal::exp_centered: return "exp_centered";
    case Marginal::t4_scaled: return "t4_scaled";
  }
  return "unknown";
}

double draw_innovation(Marginal m, Rng& rng) {
  switch (m) {
    case Marginal::gaussian:
      return standard_normal(rng);
    case Marginal::exp_centered:
      return -std::log(uniform01(rng)) - 1.0;
    case Marginal::t4_scaled: {
      const double z = standard_normal(rng);
      double v = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double g = standard_normal(rng);
        v += g * g;
      }
      // t with 4 degrees of freedom has variance 2.
      return z / std::sqrt(v / 4.0) / std::numbers::sqrt2;
    }
  }
  return 0.0;
}

void SimConfig::validate() const {
  if (n < 1) throw ValidationError("n must be at least 1");
  if (!(sigma_x >= 0.0) || !std::isfinite(sigma_x)) throw ValidationError("sigma_x must be >= 0");
  if (!(R > 0.0) || !std::isfinite(R)) throw ValidationError("R must be > 0");
  if (!(q >= 0.0 && q <= 0.8)) throw ValidationError("q must lie in [0, 0.8]");
  if (!(sigma_e >= 0.0) || !std::isfinite(sigma_e)) throw ValidationError("sigma_e must be >= 0");
  if (!(kl_energy > 0.0 && kl_energy <= 1.0)) throw ValidationError("kl_energy must lie in (0, 1]");
  if (max_events < 1) throw ValidationError("max_events must be at least 1");
  if (kl_grid < 3) throw ValidationError("kl_grid must be at least 3");
}

SimConfig sim_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  SimConfig c;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      const json& v = it.value();
      if (key == "n") c.n = v.get<std::size_t>();
      else if (key == "sigma_x") c.sigma_x = v.get<double>();
      else if (key == "R") c.R = v.get<double>();
      else if (key == "q") c.q = v.get<double>();
      else if (key == "marginal_x") c.marginal_x = marginal_from_string(v.get<std::string>());
      else if (key == "marginal_y") c.marginal_y = marginal_from_string(v.get<std::string>());
      else if (key == "sigma_e") c.sigma_e = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "max_events") c.max_events = v.get<std::size_t>();
      else if (key == "kl_energy") c.kl_energy = v.get<double>();
      else if (key == "emit_latents") c.emit_latents = v.get<bool>();
      else if (key == "kl_grid") c.kl_grid = v.get<std::size_t>();
      else throw ValidationError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::string sim_config_to_json(const SimConfig& c) {
  json j{{"n", c.n},
         {"sigma_x", c.sigma_x},
         {"R", c.R},
         {"q", c.q},
         {"marginal_x", to_string(c.marginal_x)},
         {"marginal_y", to_string(c.marginal_y)},
         {"sigma_e", c.sigma_e},
         {"seed", c.seed},
         {"max_events", c.max_events},
         {"kl_energy", c.kl_energy},
         {"emit_latents", c.emit_latents},
         {"kl_grid", c.kl_grid}};
  return j.dump(2);
}

namespace truth {

double mu(double s) {
  const double a = s * s * std::pow(1.0 - s, 6);
  const double b = std::pow(s, 6) * (1.0 - s) * (1.0 - s);
  return 0.5 * 252.0 * (a + b);
}

double phi_y(int k, double s) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  switch (k) {
    case 0: return std::numbers::sqrt2 * std::sin(two_pi * s);
    case 1: return std::numbers::sqrt2 * std::cos(two_pi * s);
    case 2: return std::numbers::sqrt2 * std::sin(2.0 * two_pi * s);
    default: throw ValidationError("phi_y index must be 0, 1 or 2");
  }
}

double cov_y(double s, double t) {
  double sum = 0.0;
  for (int k = 0; k < 3; ++k) sum += kEtaY[static_cast<std::size_t>(k)] * phi_y(k, s) * phi_y(k, t);
  return sum;
}

double cov_x(double s, double t, double sigma_x, double R) {
  const double d = s - t;
  return sigma_x * sigma_x * std::exp(-d * d / (2.0 * R * R));
}

double lambda0(double s, double sigma_x) {
  return 15.0 / 8.0 * (15.0 + 2.0 * s) * std::exp(-0.5 * sigma_x * sigma_x);
}

Window window() { return Window(0.0, 1.0); }

}  // namespace truth

Eigen::Matrix3d coupling_matrix() {
  Eigen::Matrix3d m;
  m << 1.0, -0.5, -0.25,  //
      0.375, 1.0, -0.125,  //
      0.125, 0.0, 1.0;
  return m;
}

KlResult kl_decompose_cx(double sigma_x, double R, const Grid& grid, double energy) {
  if (!(sigma_x > 0.0)) throw ValidationError("kl_decompose_cx requires sigma_x > 0");
  const auto m = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd c(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      c(a, b) = truth::cov_x(grid[static_cast<std::size_t>(a)], grid[static_cast<std::size_t>(b)],
                             sigma_x, R);
  WeightedEigen we = weighted_eigen(c, grid.weights());
  KlResult out;
  out.grid.assign(grid.points().begin(), grid.points().end());
  out.weights.assign(grid.weights().begin(), grid.weights().end());
  for (Eigen::Index k = 0; k < we.values.size(); ++k)
    if (we.values(k) > 0.0) out.total += we.values(k);
  double cum = 0.0;
  Eigen::Index keep = 0;
  while (keep < we.values.size() && we.values(keep) > 0.0) {
    cum += we.values(keep);
    ++keep;
    if (cum >= energy * out.total) break;
  }
  out.eigenfunctions = we.functions.leftCols(keep);
  orient_columns(out.eigenfunctions);
  for (Eigen::Index k = 0; k < keep; ++k) out.eigenvalues.push_back(we.values(k));
  return out;
}

ScoreModel::ScoreModel(std::vector<double> eta_x, double q, Marginal mx, Marginal my)
    : eta_x_(std::move(eta_x)), mx_(mx), my_(my) {
  coupled_ = std::min<std::size_t>(3, eta_x_.size());
  const auto c = static_cast<Eigen::Index>(coupled_);
  const Eigen::Matrix3d mm = coupling_matrix();
  cross_ = Eigen::MatrixXd::Zero(c, 3);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index k = 0; k < 3; ++k)
      cross_(j, k) = q * std::sqrt(eta_x_[static_cast<std::size_t>(j)]) * mm(j, k) *
                     std::sqrt(truth::kEtaY[static_cast<std::size_t>(k)]);
  joint_ = Eigen::MatrixXd::Zero(c + 3, c + 3);
  for (Eigen::Index j = 0; j < c; ++j) joint_(j, j) = eta_x_[static_cast<std::size_t>(j)];
  for (Eigen::Index k = 0; k < 3; ++k) joint_(c + k, c + k) = truth::kEtaY[static_cast<std::size_t>(k)];
  joint_.topRightCorner(c, 3) = cross_;
  joint_.bottomLeftCorner(3, c) = cross_.transpose();
  Eigen::LLT<Eigen::MatrixXd> llt(joint_);
  if (llt.info() != Eigen::Success) throw ValidationError("q too large for given spectra");
  factor_ = llt.matrixL();
  if ((factor_.diagonal().array() <= 0.0).any()) throw ValidationError("q too large for given spectra");
}

void ScoreModel::draw(Rng& rng, std::span<double> xi_x, std::span<double> xi_y) const {
  if (xi_x.size() != eta_x_.size() || xi_y.size() != 3) throw ValidationError("score buffer size");
  const auto c = static_cast<Eigen::Index>(coupled_);
  Eigen::VectorXd eps(c + 3);
  for (Eigen::Index j = 0; j < c; ++j) eps(j) = draw_innovation(mx_, rng);
  for (Eigen::Index k = 0; k < 3; ++k) eps(c + k) = draw_innovation(my_, rng);
  Eigen::VectorXd xi = factor_ * eps;
  for (Eigen::Index j = 0; j < c; ++j) xi_x[static_cast<std::size_t>(j)] = xi(j);
  for (Eigen::Index k = 0; k < 3; ++k) xi_y[static_cast<std::size_t>(k)] = xi(c + k);
  for (std::size_t j = coupled_; j < eta_x_.size(); ++j) {
    xi_x[j] = std::sqrt(eta_x_[j]) * draw_innovation(mx_, rng);
  }
}

JointScores draw_joint_scores(std::size_t n, double q, const std::vector<double>& eta_x,
                              Marginal mx, Marginal my, std::uint64_t seed) {
  ScoreModel model(eta_x, q, mx, my);
  JointScores out;
  out.xi_x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(eta_x.size()));
  out.xi_y.resize(static_cast<Eigen::Index>(n), 3);
  std::vector<double> x(eta_x.size());
  std::vector<double> y(3);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(seed, i, 1);
    model.draw(rng, x, y);
    for (std::size_t j = 0; j < x.size(); ++j) out.xi_x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x[j];
    for (std::size_t k = 0; k < 3; ++k) out.xi_y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = y[k];
  }
  return out;
}

std::vector<double> sample_inhomog_poisson(const std::function<double(double)>& lambda,
                                           double lambda_max, const Window& window, Rng& rng) {
  std::vector<double> out;
  if (!(lambda_max >= 0.0) || !std::isfinite(lambda_max)) {
    throw EstimationError("lambda_max must be finite and nonnegative");
  }
  if (lambda_max == 0.0) return out;
  double t = window.lo();
  while (true) {
    t += -std::log(uniform01(rng)) / lambda_max;
    if (t > window.hi()) break;
    const double l = lambda(t);
    if (l > lambda_max) {
      throw EstimationError("intensity " + std::to_string(l) + " exceeds lambda_max " +
                            std::to_string(lambda_max) + " at t=" + std::to_string(t));
    }
    if (uniform01(rng) * lambda_max < l) out.push_back(t);
  }
  return out;
}

double local_alternative_q(std::size_t n, double gamma) {
  if (n < 1) throw ValidationError("n must be positive");
  if (!(gamma >= 0.0)) throw ValidationError("gamma must be nonnegative");
  const double q = std::sqrt(gamma / std::sqrt(static_cast<double>(n)));
  if (q > 0.8) throw ValidationError("q = " + std::to_string(q) + " exceeds 0.8");
  return q;
}

namespace {

KlResult make_kl(const SimConfig& cfg) {
  cfg.validate();
  if (cfg.sigma_x == 0.0) return KlResult{};
  return kl_decompose_cx(cfg.sigma_x, cfg.R, Grid::uniform(truth::window(), cfg.kl_grid),
                         cfg.kl_energy);
}

}  // namespace

Simulator::Simulator(SimConfig cfg)
    : cfg_(cfg), kl_(make_kl(cfg_)), scores_(kl_.eigenvalues, cfg_.sigma_x > 0.0 ? cfg_.q : 0.0,
                                             cfg_.marginal_x, cfg_.marginal_y) {}

double Simulator::phi_x(std::size_t k, double s) const {
  // Nystrom extension: phi(s) = (1/eta) sum_j w_j C(s, t_j) phi(t_j).
  const auto kk = static_cast<Eigen::Index>(k);
  double sum = 0.0;
  for (std::size_t j = 0; j < kl_.grid.size(); ++j) {
    sum += kl_.weights[j] * truth::cov_x(s, kl_.grid[j], cfg_.sigma_x, cfg_.R) *
           kl_.eigenfunctions(static_cast<Eigen::Index>(j), kk);
  }
  return sum / kl_.eigenvalues.at(k);
}

double Simulator::latent_x(const SimReplicate& r, double s) const {
  if (r.nystrom.empty()) return 0.0;
  const double cutoff = 8.0 * cfg_.R;
  double sum = 0.0;
  for (std::size_t j = 0; j < kl_.grid.size(); ++j) {
    const double d = s - kl_.grid[j];
    if (std::abs(d) > cutoff) continue;
    sum += truth::cov_x(s, kl_.grid[j], cfg_.sigma_x, cfg_.R) * r.nystrom[j];
  }
  return sum;
}

double Simulator::latent_y(const SimReplicate& r, double s) const {
  double y = 0.0;
  for (int k = 0; k < 3; ++k) y += r.xi_y[static_cast<std::size_t>(k)] * truth::phi_y(k, s);
  return y;
}

double Simulator::intensity(const SimReplicate& r, double s) const {
  return truth::lambda0(s, cfg_.sigma_x) * std::exp(latent_x(r, s));
}

double Simulator::cross_cov(double s, double t) const {
  const auto& cr = scores_.cross();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < cr.rows(); ++j) {
    const double px = phi_x(static_cast<std::size_t>(j), s);
    for (Eigen::Index k = 0; k < 3; ++k) sum += cr(j, k) * px * truth::phi_y(static_cast<int>(k), t);
  }
  return sum;
}

double Simulator::mu_star(double s) const { return truth::mu(s) + cross_cov(s, s); }

double Simulator::var_x(double s) const {
  double sum = 0.0;
  for (std::size_t k = 0; k < kl_.eigenvalues.size(); ++k) {
    const double p = phi_x(k, s);
    sum += kl_.eigenvalues[k] * p * p;
  }
  return sum;
}

SimReplicate Simulator::attempt(std::size_t index, std::size_t tag) const {
  Rng rng = make_stream(cfg_.seed, index, tag);
  SimReplicate r;
  r.xi_x.assign(kl_.eigenvalues.size(), 0.0);
  r.xi_y.assign(3, 0.0);
  scores_.draw(rng, r.xi_x, r.xi_y);
  const std::size_t m = kl_.grid.size();
  if (!kl_.eigenvalues.empty()) {
    r.nystrom.assign(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r.xi_x.size(); ++k) {
        acc += r.xi_x[k] * kl_.eigenfunctions(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) /
               kl_.eigenvalues[k];
      }
      r.nystrom[j] = kl_.weights[j] * acc;
    }
  }
  const Window w = truth::window();
  double lmax = 0.0;
  if (r.nystrom.empty()) {
    lmax = std::max(truth::lambda0(w.lo(), cfg_.sigma_x), truth::lambda0(w.hi(), cfg_.sigma_x));
  } else {
    for (double s : kl_.grid) lmax = std::max(lmax, intensity(r, s));
  }
  lmax *= 1.05;
  if (!std::isfinite(lmax)) throw EstimationError("intensity bound overflow");
  auto times = sample_inhomog_poisson([&](double s) { return intensity(r, s); }, lmax, w, rng);
  std::vector<double> marks(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    marks[k] = truth::mu(times[k]) + latent_y(r, times[k]) + cfg_.sigma_e * standard_normal(rng);
  }
  r.pattern = MarkedPattern(std::move(times), std::move(marks));
  return r;
}

SimReplicate Simulator::replicate(std::size_t index) const {
  constexpr std::size_t kMaxAttempts = 10000;
  for (std::size_t tag = 0; tag < kMaxAttempts; ++tag) {
    SimReplicate r;
    try {
      r = attempt(index, tag);
    } catch (const EstimationError&) {
      // Intensity above the grid-based bound between grid nodes; redraw.
      continue;
    }
    if (r.pattern.size() <= cfg_.max_events) {
      r.redraws = tag;
      return r;
    }
  }
  throw EstimationError("replicate " + std::to_string(index) + " exceeded max_events in " +
                        std::to_string(kMaxAttempts) + " attempts");
}

ReplicatedSample Simulator::simulate(std::vector<SimReplicate>* latents,
                                     std::size_t* redraws) const {
  std::vector<SimReplicate> reps(cfg_.n);
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (std::size_t i = 0; i < cfg_.n; ++i) reps[i] = replicate(i);
  std::vector<MarkedPattern> patterns;
  patterns.reserve(cfg_.n);
  std::size_t total = 0;
  for (const auto& r : reps) {
    patterns.push_back(r.pattern);
    total += r.redraws;
  }
  if (redraws) *redraws = total;
  if (latents) *latents = std::move(reps);
  return ReplicatedSample(truth::window(), std::move(patterns));
}

}  // namespace markpoint
