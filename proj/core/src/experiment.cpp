#include "markpoint/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "markpoint/asymtest.hpp"
#include "markpoint/fpcperm.hpp"
#include "markpoint/io.hpp"
#include "markpoint/parallel.hpp"

namespace markpoint {

using nlohmann::json;

namespace {

constexpr std::uint64_t kDataTag = 0x64617461;   // "data"
constexpr std::uint64_t kPermTag = 0x7065726d;   // "perm"
constexpr std::uint64_t kPilotTag = 0x70696c6f;  // "pilo"

double mean_of(const std::vector<RunRow>& rows, double RunRow::*field) {
  double acc = 0.0;
  std::size_t k = 0;
  for (const auto& r : rows) {
    if (!r.error.empty() || std::isnan(r.*field)) continue;
    acc += r.*field;
    ++k;
  }
  return k ? acc / static_cast<double>(k) : kNaN;
}

std::string num(double x) { return std::isnan(x) ? "" : format_double(x); }

std::string label(double x) {
  std::ostringstream o;
  o << x;
  return o.str();
}

json maybe(double x) { return std::isnan(x) ? json(nullptr) : json(x); }

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::size: return "size";
    case ExperimentKind::power: return "power";
    case ExperimentKind::mad_rates: return "mad-rates";
  }
  return "?";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "size") return ExperimentKind::size;
  if (s == "power") return ExperimentKind::power;
  if (s == "mad-rates" || s == "mad_rates") return ExperimentKind::mad_rates;
  throw ValidationError("unknown experiment spec '" + s + "' (size, power, mad-rates)");
}

std::string to_string(TestMethod m) {
  switch (m) {
    case TestMethod::asym: return "asym";
    case TestMethod::perm: return "perm";
    case TestMethod::both: return "both";
  }
  return "?";
}

TestMethod test_method_from_string(const std::string& s) {
  if (s == "asym") return TestMethod::asym;
  if (s == "perm") return TestMethod::perm;
  if (s == "both") return TestMethod::both;
  throw ValidationError("unknown test method '" + s + "' (asym, perm, both)");
}

void ExperimentSpec::validate() const {
  if (n.empty()) throw ValidationError("experiment needs at least one n");
  for (std::size_t v : n)
    if (v < 4) throw ValidationError("experiment n must be at least 4");
  if (sigma_x.empty()) throw ValidationError("experiment needs at least one sigma_x");
  if (kind == ExperimentKind::power ? gamma.empty() : q.empty()) {
    throw ValidationError(kind == ExperimentKind::power ? "power experiment needs gamma values"
                                                        : "experiment needs q values");
  }
  if (runs < 1) throw ValidationError("runs must be at least 1");
  if (alphas.empty()) throw ValidationError("at least one alpha is needed");
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (method != TestMethod::asym && b < 1) throw ValidationError("B must be at least 1");
  if (!bandwidths && pilots < 1) throw ValidationError("pilots must be at least 1 without fixed bandwidths");
  if (grid_points < 3) throw ValidationError("grid_points must be at least 3");
  if (bandwidths) bandwidths->validate(truth::window());
  for (const auto& c : experiment_cells(*this)) {
    SimConfig cfg;
    cfg.n = c.n;
    cfg.sigma_x = c.sigma_x;
    cfg.q = c.q;
    cfg.R = R;
    cfg.sigma_e = sigma_e;
    cfg.validate();
  }
}

std::string experiment_spec_to_json(const ExperimentSpec& s) {
  json j{{"kind", to_string(s.kind)},
         {"n", s.n},
         {"sigma_x", s.sigma_x},
         {"marginal_x", to_string(s.marginal_x)},
         {"marginal_y", to_string(s.marginal_y)},
         {"R", s.R},
         {"sigma_e", s.sigma_e},
         {"runs", s.runs},
         {"seed", s.seed},
         {"alphas", s.alphas},
         {"pilots", s.pilots},
         {"folds", s.folds},
         {"grid_points", s.grid_points}};
  if (s.kind == ExperimentKind::power) j["gamma"] = s.gamma;
  else j["q"] = s.q;
  if (s.kind != ExperimentKind::mad_rates) {
    j["method"] = to_string(s.method);
    if (s.method != TestMethod::asym) j["B"] = s.b;
  }
  j["bandwidths"] = s.bandwidths ? json::parse(bandwidths_to_json(*s.bandwidths)) : json(nullptr);
  return j.dump(2);
}

std::vector<ExperimentCell> experiment_cells(const ExperimentSpec& spec) {
  std::vector<ExperimentCell> out;
  const bool power = spec.kind == ExperimentKind::power;
  const auto& third = power ? spec.gamma : spec.q;
  for (double sx : spec.sigma_x)
    for (double v : third)
      for (std::size_t n : spec.n) {
        ExperimentCell c;
        c.id = out.size();
        c.n = n;
        c.sigma_x = sx;
        if (power) {
          c.gamma = v;
          c.q = local_alternative_q(n, v);
        } else {
          c.q = v;
        }
        out.push_back(c);
      }
  return out;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
  Rng rng = make_stream(master, (a << 32) ^ b, tag);
  return rng();
}

Bandwidths pilot_bandwidths(const SimConfig& cfg, std::size_t pilots, std::size_t folds) {
  if (pilots < 1) throw ValidationError("pilots must be at least 1");
  Bandwidths avg;
  double* out[] = {&avg.h_mu, &avg.h_y, &avg.h_sigma, &avg.h_xy, &avg.h_tau, &avg.h_mu_test, &avg.h_sigma_test};
  for (std::size_t k = 0; k < pilots; ++k) {
    SimConfig c = cfg;
    c.seed = derive_seed(cfg.seed, k, 0, kPilotTag);
    SelectOptions opts;
    opts.folds = std::min(folds, c.n);
    opts.seed = c.seed;
    opts.max_events = c.max_events;
    const Bandwidths b = select_bandwidths(Simulator(c).simulate(), opts).bandwidths;
    const double in[] = {b.h_mu, b.h_y, b.h_sigma, b.h_xy, b.h_tau, b.h_mu_test, b.h_sigma_test};
    for (std::size_t f = 0; f < 7; ++f) *out[f] += in[f] / static_cast<double>(pilots);
  }
  return avg;
}

double mallows_distance(std::vector<double> p) {
  if (p.empty()) return kNaN;
  std::sort(p.begin(), p.end());
  const double m = static_cast<double>(p.size());
  // On ((k-1)/m, k/m] the empirical quantile is p_(k).
  auto piece = [](double c, double a, double b) {
    return ((c - a) * std::abs(c - a) - (c - b) * std::abs(c - b)) / 2.0;
  };
  double acc = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k)
    acc += piece(p[k], static_cast<double>(k) / m, static_cast<double>(k + 1) / m);
  return acc;
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("slope: size mismatch");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  if (lx.size() < 2) return kNaN;
  const double k = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / k;
    my += ly[i] / k;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : kNaN;
}

double mad_curve(const Grid& grid, const std::vector<double>& est, const std::function<double(double)>& truth) {
  double acc = 0.0;
  for (std::size_t a = 0; a < grid.size(); ++a) acc += grid.weights()[a] * std::abs(est[a] - truth(grid[a]));
  return acc;
}

double mad_surface(const Grid& grid, const Eigen::MatrixXd& est,
                   const std::function<double(double, double)>& truth) {
  double acc = 0.0;
  for (std::size_t a = 0; a < grid.size(); ++a)
    for (std::size_t b = 0; b < grid.size(); ++b)
      acc += grid.weights()[a] * grid.weights()[b] *
             std::abs(est(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) - truth(grid[a], grid[b]));
  return acc;
}

RunRow run_one(const ExperimentSpec& spec, const ExperimentCell& cell, std::size_t run) {
  RunRow row;
  row.cell = cell.id;
  row.run = run;
  row.seed = derive_seed(spec.seed, cell.id, run, kDataTag);
  try {
    SimConfig cfg;
    cfg.n = cell.n;
    cfg.sigma_x = cell.sigma_x;
    cfg.q = cell.q;
    cfg.R = spec.R;
    cfg.sigma_e = spec.sigma_e;
    cfg.marginal_x = spec.marginal_x;
    cfg.marginal_y = spec.marginal_y;
    cfg.seed = row.seed;
    const Simulator sim(cfg);
    const ReplicatedSample sample = sim.simulate();
    const Bandwidths& bw = cell.bandwidths;

    if (spec.kind == ExperimentKind::mad_rates) {
      const Grid grid = Grid::uniform(sample.window(), spec.grid_points);
      const MarkEstimates est = estimate_mark_functions(sample, bw.h_mu, bw.h_sigma, bw.h_y, bw.h_xy, grid);
      const double se2 = spec.sigma_e * spec.sigma_e;
      row.mad_mu_naive = mad_curve(grid, est.mu_naive.values, truth::mu);
      row.mad_mu = mad_curve(grid, est.mu_corrected.values, truth::mu);
      row.mad_sigma2 = mad_curve(grid, est.sigma2.values, [se2](double s) { return truth::cov_y(s, s) + se2; });
      row.mad_cy_naive = mad_surface(grid, est.cy_naive.values, truth::cov_y);
      row.mad_cy = mad_surface(grid, est.cy_corrected.values, truth::cov_y);
      row.mad_cxy = mad_surface(grid, est.cxy.values, [&sim](double s, double t) { return sim.cross_cov(s, t); });
      return row;
    }
    if (spec.method != TestMethod::perm) {
      const TestReport r = asymptotic_test(sample, bw);
      row.t_n = r.t_n;
      row.omega = r.omega_hat;
      row.z = r.z;
      row.p_asym = r.p_two_sided;
    }
    if (spec.method != TestMethod::asym) {
      const PermutationResult r =
          permutation_test(sample, bw, spec.b, derive_seed(spec.seed, cell.id, run, kPermTag));
      row.t_n = r.report.t_n;
      row.p_perm = *r.report.p_permutation;
    }
  } catch (const std::exception& e) {
    row.error = e.what();
  }
  return row;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentResult out;
  out.spec = spec;
  std::vector<ExperimentCell> cells = experiment_cells(spec);
  for (auto& c : cells) {
    if (spec.bandwidths) {
      c.bandwidths = *spec.bandwidths;
      continue;
    }
    SimConfig cfg;
    cfg.n = c.n;
    cfg.sigma_x = c.sigma_x;
    cfg.q = c.q;
    cfg.R = spec.R;
    cfg.sigma_e = spec.sigma_e;
    cfg.marginal_x = spec.marginal_x;
    cfg.marginal_y = spec.marginal_y;
    cfg.seed = derive_seed(spec.seed, c.id, 0, kPilotTag);
    c.bandwidths = pilot_bandwidths(cfg, spec.pilots, spec.folds);
  }

  const std::size_t per = spec.runs;
  out.rows.resize(cells.size() * per);
  const auto total = static_cast<long>(out.rows.size());
#pragma omp parallel for schedule(dynamic) num_threads(worker_count())
  for (long k = 0; k < total; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    out.rows[uk] = run_one(spec, cells[uk / per], uk % per);
  }

  for (const auto& c : cells) {
    CellSummary s;
    s.cell = c;
    std::vector<RunRow> rows(out.rows.begin() + static_cast<long>(c.id * per),
                             out.rows.begin() + static_cast<long>((c.id + 1) * per));
    std::vector<double> pa, pp;
    for (const auto& r : rows) {
      if (!r.error.empty()) {
        ++s.failed;
        continue;
      }
      ++s.ok;
      if (!std::isnan(r.p_asym)) pa.push_back(r.p_asym);
      if (!std::isnan(r.p_perm)) pp.push_back(r.p_perm);
    }
    if (spec.kind != ExperimentKind::mad_rates) {
      for (double a : spec.alphas) {
        auto rate = [a](const std::vector<double>& p) {
          if (p.empty()) return kNaN;
          return static_cast<double>(std::count_if(p.begin(), p.end(), [a](double v) { return v < a; })) /
                 static_cast<double>(p.size());
        };
        s.reject_asym.push_back(rate(pa));
        s.reject_perm.push_back(rate(pp));
      }
      s.mallows_asym = mallows_distance(pa);
      s.mallows_perm = mallows_distance(pp);
    } else {
      s.mad_mu_naive = mean_of(rows, &RunRow::mad_mu_naive);
      s.mad_mu = mean_of(rows, &RunRow::mad_mu);
      s.mad_sigma2 = mean_of(rows, &RunRow::mad_sigma2);
      s.mad_cy_naive = mean_of(rows, &RunRow::mad_cy_naive);
      s.mad_cy = mean_of(rows, &RunRow::mad_cy);
      s.mad_cxy = mean_of(rows, &RunRow::mad_cxy);
    }
    out.cells.push_back(std::move(s));
  }

  if (spec.kind == ExperimentKind::mad_rates && spec.n.size() >= 2) {
    const std::pair<const char*, double CellSummary::*> quantities[] = {
        {"mu_naive", &CellSummary::mad_mu_naive}, {"mu", &CellSummary::mad_mu},
        {"sigma2", &CellSummary::mad_sigma2},     {"cy_naive", &CellSummary::mad_cy_naive},
        {"cy", &CellSummary::mad_cy},             {"cxy", &CellSummary::mad_cxy}};
    for (double sx : spec.sigma_x)
      for (double q : spec.q)
        for (const auto& [name, field] : quantities) {
          std::vector<double> xs, ys;
          for (const auto& s : out.cells) {
            if (s.cell.sigma_x != sx || s.cell.q != q) continue;
            xs.push_back(static_cast<double>(s.cell.n));
            ys.push_back(s.*field);
          }
          out.slopes.push_back(RateSlope{name, sx, q, log_log_slope(xs, ys)});
        }
  }
  return out;
}

std::string experiment_rows_csv(const ExperimentResult& r) {
  std::ostringstream o;
  const bool mad = r.spec.kind == ExperimentKind::mad_rates;
  o << "cell,run,seed,n,sigma_x,q,";
  if (mad) o << "mad_mu_naive,mad_mu,mad_sigma2,mad_cy_naive,mad_cy,mad_cxy";
  else o << "t_n,omega,z,p_asym,p_perm";
  o << ",error\n";
  for (const auto& row : r.rows) {
    const auto& c = r.cells[row.cell].cell;
    o << row.cell << ',' << row.run << ',' << row.seed << ',' << c.n << ',' << format_double(c.sigma_x) << ','
      << format_double(c.q) << ',';
    if (mad) {
      o << num(row.mad_mu_naive) << ',' << num(row.mad_mu) << ',' << num(row.mad_sigma2) << ','
        << num(row.mad_cy_naive) << ',' << num(row.mad_cy) << ',' << num(row.mad_cxy);
    } else {
      o << num(row.t_n) << ',' << num(row.omega) << ',' << num(row.z) << ',' << num(row.p_asym) << ','
        << num(row.p_perm);
    }
    std::string err = row.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    o << ',' << err << '\n';
  }
  return o.str();
}

std::string experiment_summary_csv(const ExperimentResult& r) {
  std::ostringstream o;
  const bool mad = r.spec.kind == ExperimentKind::mad_rates;
  o << "cell,n,sigma_x,q,gamma,ok,failed";
  if (mad) {
    o << ",mad_mu_naive,mad_mu,mad_sigma2,mad_cy_naive,mad_cy,mad_cxy";
  } else {
    for (double a : r.spec.alphas) o << ",reject_asym_" << label(a);
    for (double a : r.spec.alphas) o << ",reject_perm_" << label(a);
    o << ",mallows_asym,mallows_perm";
  }
  o << '\n';
  for (const auto& s : r.cells) {
    o << s.cell.id << ',' << s.cell.n << ',' << format_double(s.cell.sigma_x) << ',' << format_double(s.cell.q)
      << ',' << (s.cell.gamma ? format_double(*s.cell.gamma) : "") << ',' << s.ok << ',' << s.failed;
    if (mad) {
      for (double v : {s.mad_mu_naive, s.mad_mu, s.mad_sigma2, s.mad_cy_naive, s.mad_cy, s.mad_cxy})
        o << ',' << num(v);
    } else {
      for (double v : s.reject_asym) o << ',' << num(v);
      for (double v : s.reject_perm) o << ',' << num(v);
      o << ',' << num(s.mallows_asym) << ',' << num(s.mallows_perm);
    }
    o << '\n';
  }
  return o.str();
}

std::string experiment_summary_json(const ExperimentResult& r) {
  json cells = json::array();
  for (const auto& s : r.cells) {
    json c{{"cell", s.cell.id},
           {"n", s.cell.n},
           {"sigma_x", s.cell.sigma_x},
           {"q", s.cell.q},
           {"gamma", s.cell.gamma ? json(*s.cell.gamma) : json(nullptr)},
           {"ok", s.ok},
           {"failed", s.failed},
           {"bandwidths", json::parse(bandwidths_to_json(s.cell.bandwidths))}};
    if (r.spec.kind == ExperimentKind::mad_rates) {
      c["mad"] = json{{"mu_naive", maybe(s.mad_mu_naive)}, {"mu", maybe(s.mad_mu)},
                      {"sigma2", maybe(s.mad_sigma2)},     {"cy_naive", maybe(s.mad_cy_naive)},
                      {"cy", maybe(s.mad_cy)},             {"cxy", maybe(s.mad_cxy)}};
    } else {
      json ra = json::array(), rp = json::array();
      for (std::size_t k = 0; k < r.spec.alphas.size(); ++k) {
        ra.push_back(json{{"alpha", r.spec.alphas[k]}, {"rate", maybe(s.reject_asym[k])}});
        rp.push_back(json{{"alpha", r.spec.alphas[k]}, {"rate", maybe(s.reject_perm[k])}});
      }
      c["reject_asym"] = ra;
      c["reject_perm"] = rp;
      c["mallows_asym"] = maybe(s.mallows_asym);
      c["mallows_perm"] = maybe(s.mallows_perm);
    }
    cells.push_back(c);
  }
  json slopes = json::array();
  for (const auto& s : r.slopes)
    slopes.push_back(json{{"quantity", s.quantity}, {"sigma_x", s.sigma_x}, {"q", s.q}, {"slope", maybe(s.slope)}});
  json j{{"spec", json::parse(experiment_spec_to_json(r.spec))}, {"cells", cells}, {"slopes", slopes}};
  return j.dump(2);
}

}  // namespace markpoint
