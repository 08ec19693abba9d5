#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "markpoint/asymtest.hpp"
#include "markpoint/bandwidth.hpp"
#include "markpoint/diagnose.hpp"
#include "markpoint/experiment.hpp"
#include "markpoint/fpcperm.hpp"
#include "markpoint/io.hpp"
#include "markpoint/parallel.hpp"
#include "markpoint/poisson_ext.hpp"
#include "markpoint/simgen.hpp"

#ifndef MARKPOINT_VERSION
#define MARKPOINT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace markpoint;

namespace {

// Files written by one invocation. On failure everything is removed again,
// including the directory if this run created it.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    if (dir_.empty()) dir_ = ".";
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_);
      created_ = true;
    } else if (!fs::is_directory(dir_)) {
      throw IoError("output path is not a directory: " + dir_.string());
    }
  }

  fs::path file(const std::string& name) {
    fs::path p = dir_ / name;
    written_.push_back(p);
    return p;
  }

  // For outputs whose name the user chose, outside the managed directory.
  fs::path external(const fs::path& p) {
    written_.push_back(p);
    return p;
  }

  const fs::path& dir() const { return dir_; }
  const std::vector<fs::path>& written() const { return written_; }

  void rollback() noexcept {
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
    if (created_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

 private:
  fs::path dir_;
  bool created_ = false;
  std::vector<fs::path> written_;
};

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Manifest {
  std::string command;
  json options = json::object();
  std::vector<fs::path> inputs;
  std::optional<std::uint64_t> seed;
  std::optional<Bandwidths> bandwidths;
  json extra = json::object();
};

void write_manifest(Outputs& out, const Manifest& m, double seconds) {
  std::uint64_t h = fnv1a(m.command);
  h = fnv1a(m.options.dump(), h);
  for (const auto& p : m.inputs) h = fnv1a(read_file(p), h);
  json outputs = json::array();
  for (const auto& p : out.written()) outputs.push_back(p.string());
  json inputs = json::array();
  for (const auto& p : m.inputs) inputs.push_back(p.string());
  json j{{"command", m.command},
         {"options", m.options},
         {"config_hash", hex(h)},
         {"seed", m.seed ? json(*m.seed) : json(nullptr)},
         {"bandwidths", m.bandwidths ? json::parse(bandwidths_to_json(*m.bandwidths)) : json(nullptr)},
         {"inputs", inputs},
         {"outputs", outputs},
         {"library_version", MARKPOINT_VERSION},
         {"threads", worker_count()},
         {"wall_time_seconds", seconds}};
  for (auto it = m.extra.begin(); it != m.extra.end(); ++it) j[it.key()] = it.value();
  write_text(out.file("manifest.json"), j.dump(2) + "\n");
}

Window parse_window(const std::vector<double>& w) {
  if (w.size() != 2) throw ValidationError("--window takes two numbers: lo,hi");
  return Window(w[0], w[1]);
}

ReplicatedSample load(const fs::path& data, const std::vector<double>& window) {
  LoadResult r = load_dataset(data, parse_window(window));
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  return std::move(r.sample);
}

void write_curve_est(const fs::path& p, const CurveEstimate& c) { write_curve(p, c.grid.points(), c.values); }

void write_surface_est(const fs::path& p, const SurfaceEstimate& s) {
  write_surface(p, s.grid_s.points(), s.grid_t.points(), s.row_major());
}

void write_matrix(const fs::path& p, const Grid& g, const Eigen::MatrixXd& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index a = 0; a < m.rows(); ++a)
    for (Eigen::Index b = 0; b < m.cols(); ++b) v.push_back(m(a, b));
  write_surface(p, g.points(), g.points(), v);
}

Bandwidths read_bandwidths(const fs::path& p) { return bandwidths_from_json(read_file(p)); }

// Runs a command body with timing, manifest and rollback on failure.
template <class Body>
void run(Outputs& out, Manifest& m, Body&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out, m, secs);
  } catch (...) {
    out.rollback();
    throw;
  }
}

// ---- simulate -------------------------------------------------------------

struct SimulateArgs {
  std::string config;
  std::string out;
  std::string latents;
  std::optional<std::size_t> n;
  std::optional<double> sigma_x, q, R, sigma_e;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> marginal_x, marginal_y;
  bool poisson_marks = false;
};

void cmd_simulate(const SimulateArgs& a) {
  SimConfig cfg = a.config.empty() ? SimConfig{} : sim_config_from_json(read_file(a.config));
  if (a.n) cfg.n = *a.n;
  if (a.sigma_x) cfg.sigma_x = *a.sigma_x;
  if (a.q) cfg.q = *a.q;
  if (a.R) cfg.R = *a.R;
  if (a.sigma_e) cfg.sigma_e = *a.sigma_e;
  if (a.seed) cfg.seed = *a.seed;
  if (a.marginal_x) cfg.marginal_x = marginal_from_string(*a.marginal_x);
  if (a.marginal_y) cfg.marginal_y = marginal_from_string(*a.marginal_y);
  if (!a.latents.empty()) cfg.emit_latents = true;
  cfg.validate();

  const fs::path data(a.out);
  Outputs out(data.parent_path());
  json opts = json::parse(sim_config_to_json(cfg));
  opts["poisson_marks"] = a.poisson_marks;
  Manifest m{"simulate", opts, {}, cfg.seed, {}, {}};
  if (!a.config.empty()) m.inputs.push_back(a.config);
  run(out, m, [&] {
    const Simulator sim(cfg);
    std::vector<SimReplicate> latents;
    std::size_t redraws = 0;
    const ReplicatedSample sample =
        a.poisson_marks ? simulate_poisson_marks(sim, cfg.seed) : sim.simulate(&latents, &redraws);
    if (a.poisson_marks && !a.latents.empty()) sim.simulate(&latents, &redraws);
    write_dataset(out.external(data), sample);
    if (!a.latents.empty()) {
      std::ostringstream o;
      o << "replicate,s,x,y,lambda\n";
      const Grid g = Grid::uniform(sample.window(), 101);
      for (std::size_t i = 0; i < latents.size(); ++i)
        for (double s : g.points())
          o << i + 1 << ',' << format_double(s) << ',' << format_double(sim.latent_x(latents[i], s)) << ','
            << format_double(sim.latent_y(latents[i], s)) << ',' << format_double(sim.intensity(latents[i], s))
            << '\n';
      write_text(out.external(a.latents), o.str());
    }
    m.extra["redraws"] = redraws;
    m.extra["total_events"] = sample.total_events();
  });
}

// ---- validate ---------------------------------------------------------------

void cmd_validate(const std::string& data, const std::vector<double>& window, const std::string& out_dir) {
  const ReplicatedSample sample = load(data, window);
  const ValidationReport r = validate_dataset(sample);
  json j{{"n", r.n},
         {"total_events", r.total_events},
         {"min_events", r.min_events},
         {"max_events", r.max_events},
         {"fewer_than_two", r.fewer_than_two},
         {"duplicate_times", r.duplicate_times},
         {"no_events", r.no_events},
         {"counts", r.counts},
         {"warnings", r.warnings}};
  if (out_dir.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  Outputs out(out_dir);
  Manifest m{"validate", json{{"window", window}}, {data}, {}, {}, {}};
  run(out, m, [&] { write_text(out.file("validation.json"), j.dump(2) + "\n"); });
}

// ---- select -----------------------------------------------------------------

struct SelectArgs {
  std::string data, out;
  std::vector<double> window{0.0, 1.0};
  std::size_t folds = 10;
  std::uint64_t seed = 1;
  std::size_t max_events = 200;
  std::vector<double> grid_mu, grid_y, grid_sigma, grid_xy, grid_tau;
};

json trace_json(const CvTrace& t) {
  json scores = json::array();
  for (double s : t.scores) scores.push_back(std::isfinite(s) ? json(s) : json(nullptr));
  return json{{"candidates", t.candidates}, {"scores", scores}, {"best", t.best}};
}

void cmd_select(const SelectArgs& a) {
  const ReplicatedSample sample = load(a.data, a.window);
  Outputs out(a.out);
  SelectOptions opts;
  opts.folds = a.folds;
  opts.seed = a.seed;
  opts.max_events = a.max_events;
  opts.grid_mu = a.grid_mu;
  opts.grid_y = a.grid_y;
  opts.grid_sigma = a.grid_sigma;
  opts.grid_xy = a.grid_xy;
  opts.grid_tau = a.grid_tau;
  Manifest m{"select",
             json{{"window", a.window},
                  {"k_folds", a.folds},
                  {"max_events", a.max_events},
                  {"h_grid_mu", a.grid_mu},
                  {"h_grid_y", a.grid_y},
                  {"h_grid_sigma", a.grid_sigma},
                  {"h_grid_xy", a.grid_xy},
                  {"h_grid_tau", a.grid_tau}},
             {a.data},
             a.seed,
             {},
             {}};
  run(out, m, [&] {
    const Selection sel = select_bandwidths(sample, opts);
    m.bandwidths = sel.bandwidths;
    write_text(out.file("bandwidths.json"), bandwidths_to_json(sel.bandwidths) + "\n");
    json cv{{"h_mu", trace_json(sel.mu)},
            {"h_y", trace_json(sel.y)},
            {"h_sigma", trace_json(sel.sigma)},
            {"h_xy", trace_json(sel.xy)},
            {"h_tau", trace_json(sel.tau)},
            {"dropped_replicates", sel.dropped}};
    write_text(out.file("cv_trace.json"), cv.dump(2) + "\n");
  });
}

// ---- estimate ---------------------------------------------------------------

struct EstimateArgs {
  std::string data, out, bandwidths;
  std::vector<double> window{0.0, 1.0};
  std::size_t grid_points = 101;
  bool no_bias_correct = false;
  std::uint64_t seed = 1;
};

Bandwidths bandwidths_or_select(const std::string& path, const ReplicatedSample& sample, std::uint64_t seed,
                                Manifest& m) {
  if (!path.empty()) {
    m.inputs.push_back(path);
    return read_bandwidths(path);
  }
  SelectOptions opts;
  opts.seed = seed;
  m.seed = seed;
  return select_bandwidths(sample, opts).bandwidths;
}

void cmd_estimate(const EstimateArgs& a) {
  const ReplicatedSample sample = load(a.data, a.window);
  Outputs out(a.out);
  Manifest m{"estimate",
             json{{"window", a.window}, {"grid_points", a.grid_points}, {"no_bias_correct", a.no_bias_correct}},
             {a.data},
             {},
             {},
             {}};
  run(out, m, [&] {
    const Bandwidths bw = bandwidths_or_select(a.bandwidths, sample, a.seed, m);
    bw.validate(sample.window());
    m.bandwidths = bw;
    const Grid grid = Grid::uniform(sample.window(), a.grid_points);
    const MarkEstimates e = estimate_mark_functions(sample, bw.h_mu, bw.h_sigma, bw.h_y, bw.h_xy, grid);
    write_curve_est(out.file("mean_naive.csv"), e.mu_naive);
    write_curve_est(out.file("mean_corrected.csv"), e.mu_corrected);
    write_curve_est(out.file("var_naive.csv"), e.sigma2);
    write_surface_est(out.file("cov_naive.csv"), e.cy_naive);
    write_surface_est(out.file("cov_corrected.csv"), e.cy_corrected);
    write_surface_est(out.file("crosscov.csv"), e.cxy);
    write_curve_est(out.file("mean.csv"), a.no_bias_correct ? e.mu_naive : e.mu_corrected);
    write_surface_est(out.file("cov.csv"), a.no_bias_correct ? e.cy_naive : e.cy_corrected);
    m.extra["fallback_points"] = json{{"mean_naive", e.mu_naive.fallback_points.size()},
                                      {"var_naive", e.sigma2.fallback_points.size()},
                                      {"cov_naive", e.cy_naive.fallback_points.size()},
                                      {"crosscov", e.cxy.fallback_points.size()}};
    m.extra["variance_floor_points"] = e.cy_naive.inflated_points.size();
    if (a.no_bias_correct) return;
    const FpcModel model = fpc_decompose(e.cy_corrected, noise_variance(e.sigma2, e.cy_corrected));
    json fpc{{"eigenvalues", model.eigenvalues},
             {"p_y", model.p_y},
             {"sigma_e2", model.sigma_e2},
             {"explained_fraction", model.explained_fraction},
             {"positive_rank", model.positive_rank}};
    write_text(out.file("fpc.json"), fpc.dump(2) + "\n");
    std::ostringstream o;
    o << "s";
    for (std::size_t k = 0; k < model.p_y; ++k) o << ",phi" << k + 1;
    o << '\n';
    for (std::size_t g = 0; g < grid.size(); ++g) {
      o << format_double(grid[g]);
      for (std::size_t k = 0; k < model.p_y; ++k)
        o << ',' << format_double(model.eigenfunctions(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(k)));
      o << '\n';
    }
    write_text(out.file("fpc_eigenfunctions.csv"), o.str());
  });
}

// ---- test -------------------------------------------------------------------

struct TestArgs {
  std::string data, out, bandwidths;
  std::vector<double> window{0.0, 1.0};
  std::string method = "asym";
  std::size_t b = 500;
  std::uint64_t seed = 1;
};

void cmd_test(const TestArgs& a) {
  const TestMethod method = test_method_from_string(a.method);
  const ReplicatedSample sample = load(a.data, a.window);
  Outputs out(a.out);
  Manifest m{"test", json{{"window", a.window}, {"method", a.method}, {"B", a.b}}, {a.data}, a.seed, {}, {}};
  run(out, m, [&] {
    const Bandwidths bw = bandwidths_or_select(a.bandwidths, sample, a.seed, m);
    bw.validate(sample.window());
    m.bandwidths = bw;
    TestReport report;
    if (method != TestMethod::perm) report = asymptotic_test(sample, bw);
    if (method != TestMethod::asym) {
      const PermutationResult pr = permutation_test(sample, bw, a.b, a.seed);
      if (method == TestMethod::perm) {
        report = pr.report;
      } else {
        report.p_permutation = pr.report.p_permutation;
        report.b = pr.report.b;
        for (const auto& n : pr.report.notes) report.notes.push_back(n);
      }
      std::ostringstream o;
      o << "k,t_n\n";
      for (std::size_t k = 0; k < pr.permuted_tn.size(); ++k) o << k + 1 << ',' << format_double(pr.permuted_tn[k]) << '\n';
      write_text(out.file("permuted_tn.csv"), o.str());
    }
    report.seed = a.seed;
    write_text(out.file("report.json"), report_to_json(report) + "\n");
    std::cout << report_to_json(report) << "\n";
  });
}

// ---- diagnose ---------------------------------------------------------------

struct DiagnoseArgs {
  std::string data, out, bandwidths;
  std::vector<double> window{0.0, 1.0};
  std::optional<double> h1, h2;
  std::size_t sims = 1000;
  double level = 0.95;
  std::uint64_t seed = 1;
  std::size_t grid_points = 101;
  double d_max = 0.1;
  std::size_t d_points = 50;
  bool skip_qq = false;
};

void cmd_diagnose(const DiagnoseArgs& a) {
  const ReplicatedSample sample = load(a.data, a.window);
  Outputs out(a.out);
  Manifest m{"diagnose",
             json{{"window", a.window},
                  {"h1", a.h1 ? json(*a.h1) : json(nullptr)},
                  {"h2", a.h2 ? json(*a.h2) : json(nullptr)},
                  {"sims", a.sims},
                  {"level", a.level},
                  {"grid_points", a.grid_points},
                  {"d_max", a.d_max},
                  {"d_points", a.d_points},
                  {"skip_qq", a.skip_qq}},
             {a.data},
             a.seed,
             {},
             {}};
  run(out, m, [&] {
    const Window& w = sample.window();
    const double h1 = a.h1 ? *a.h1 : select_rho_bandwidth(sample, default_grid_tau(w)).best;
    const double h2 = a.h2 ? *a.h2 : select_rho2_bandwidth(sample, default_grid_tau(w)).best;
    const Grid grid = Grid::uniform(w, a.grid_points);
    const LgcpFit fit = fit_lgcp(sample, h1, h2, grid);
    write_curve_est(out.file("rho.csv"), fit.rho);
    write_curve_est(out.file("lambda0.csv"), fit.lambda0);
    write_surface_est(out.file("cx.csv"), fit.cx);
    write_matrix(out.file("cx_raw.csv"), grid, fit.cx_raw);

    if (!(a.d_max > 0.0) || a.d_points < 1) throw ValidationError("distance grid needs d_max > 0 and d_points >= 1");
    std::vector<double> d;
    for (std::size_t k = 1; k <= a.d_points; ++k) d.push_back(a.d_max * static_cast<double>(k) / static_cast<double>(a.d_points));
    const GCurve obs = g_function(sample, d);
    write_curve(out.file("g_observed.csv"), obs.distances, obs.values);
    const LgcpSampler sampler(fit);
    const GEnvelope env = g_envelope(sampler, sample.size(), d, a.sims, a.level, a.seed, &obs);
    std::ostringstream o;
    o << "d,lo,hi,mean,observed\n";
    for (std::size_t k = 0; k < d.size(); ++k)
      o << format_double(d[k]) << ',' << format_double(env.lo[k]) << ',' << format_double(env.hi[k]) << ','
        << format_double(env.mean[k]) << ',' << format_double(obs.values[k]) << '\n';
    write_text(out.file("g_envelope.csv"), o.str());

    json summary{{"h1", h1},
                 {"h2", h2},
                 {"factor_method", sampler.factor_method()},
                 {"ridge", sampler.ridge()},
                 {"expected_count_per_replicate", sampler.expected_count()},
                 {"replicates_used", obs.used},
                 {"replicates_skipped", obs.skipped},
                 {"inside_fraction", env.inside_fraction ? json(*env.inside_fraction) : json(nullptr)},
                 {"sims", env.sims},
                 {"level", env.level}};

    if (!a.skip_qq) {
      const Bandwidths bw = bandwidths_or_select(a.bandwidths, sample, a.seed, m);
      bw.validate(w);
      m.bandwidths = bw;
      const MarkEstimates e = estimate_mark_functions(sample, bw.h_mu, bw.h_sigma, bw.h_y, bw.h_xy, grid);
      const FpcModel model = fpc_decompose(e.cy_corrected, noise_variance(e.sigma2, e.cy_corrected));
      const ScoreSet scores = estimate_scores(sample, model, e.mu_corrected.evaluator);
      std::ostringstream q;
      q << "component,theoretical,sample\n";
      for (std::size_t k = 0; k < model.p_y; ++k)
        for (const auto& [t, v] : fpc_qq_data(scores, model, k))
          q << k + 1 << ',' << format_double(t) << ',' << format_double(v) << '\n';
      write_text(out.file("qq.csv"), q.str());
      summary["qq_components"] = model.p_y;
    }
    write_text(out.file("diagnose.json"), summary.dump(2) + "\n");
  });
}

// ---- experiment ---------------------------------------------------------------

struct ExperimentArgs {
  std::string spec = "size";
  std::string out, bandwidths;
  std::vector<std::size_t> n{300};
  std::vector<double> sigma_x{1.0}, q{0.0}, gamma{5.0}, alphas{0.05, 0.10};
  std::size_t runs = 100, b = 199, pilots = 3, folds = 10, grid_points = 51;
  std::uint64_t seed = 1;
  std::string method = "asym";
  std::string marginal_x = "gaussian", marginal_y = "gaussian";
  double R = 0.1, sigma_e = 1.0;
};

void cmd_experiment(const ExperimentArgs& a) {
  ExperimentSpec spec;
  spec.kind = experiment_kind_from_string(a.spec);
  spec.n = a.n;
  spec.sigma_x = a.sigma_x;
  spec.q = a.q;
  spec.gamma = a.gamma;
  spec.alphas = a.alphas;
  spec.runs = a.runs;
  spec.b = a.b;
  spec.pilots = a.pilots;
  spec.folds = a.folds;
  spec.grid_points = a.grid_points;
  spec.seed = a.seed;
  spec.method = test_method_from_string(a.method);
  spec.marginal_x = marginal_from_string(a.marginal_x);
  spec.marginal_y = marginal_from_string(a.marginal_y);
  spec.R = a.R;
  spec.sigma_e = a.sigma_e;
  Manifest m{"experiment", {}, {}, a.seed, {}, {}};
  if (!a.bandwidths.empty()) {
    spec.bandwidths = read_bandwidths(a.bandwidths);
    m.inputs.push_back(a.bandwidths);
    m.bandwidths = spec.bandwidths;
  }
  spec.validate();
  m.options = json::parse(experiment_spec_to_json(spec));
  Outputs out(a.out);
  run(out, m, [&] {
    const ExperimentResult r = run_experiment(spec);
    write_text(out.file("runs.csv"), experiment_rows_csv(r));
    write_text(out.file("summary.csv"), experiment_summary_csv(r));
    write_text(out.file("summary.json"), experiment_summary_json(r) + "\n");
    std::size_t failed = 0;
    for (const auto& c : r.cells) failed += c.failed;
    m.extra["failed_runs"] = failed;
    std::cout << experiment_summary_csv(r);
  });
}

// ---- poisson-fit --------------------------------------------------------------

struct PoissonArgs {
  std::string data, out;
  std::vector<double> window{0.0, 1.0};
  std::optional<double> h;
  std::size_t grid_points = 101;
};

void cmd_poisson(const PoissonArgs& a) {
  const ReplicatedSample sample = load(a.data, a.window);
  Outputs out(a.out);
  Manifest m{"poisson-fit",
             json{{"window", a.window}, {"h", a.h ? json(*a.h) : json(nullptr)}, {"grid_points", a.grid_points}},
             {a.data},
             {},
             {},
             {}};
  run(out, m, [&] {
    const double h = a.h ? *a.h : select_rho_bandwidth(sample, default_grid_tau(sample.window())).best;
    const Grid grid = Grid::uniform(sample.window(), a.grid_points);
    const PoissonMarkFit fit = estimate_poisson_mark_model(sample, h, grid);
    write_curve_est(out.file("mu.csv"), fit.mu);
    write_surface_est(out.file("cx.csv"), fit.cx);
    write_surface_est(out.file("cxy.csv"), fit.cxy);
    write_surface_est(out.file("cy.csv"), fit.cy);
    std::ostringstream o;
    o << "s,a,b\n";
    for (std::size_t k = 0; k < grid.size(); ++k)
      o << format_double(grid[k]) << ',' << format_double(fit.acc.a[k]) << ',' << format_double(fit.acc.b[k]) << '\n';
    write_text(out.file("accumulators_ab.csv"), o.str());
    write_matrix(out.file("accumulator_c.csv"), grid, fit.acc.c);
    write_matrix(out.file("accumulator_d.csv"), grid, fit.acc.d);
    write_matrix(out.file("accumulator_e.csv"), grid, fit.acc.e);
    m.extra["h"] = h;
  });
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const EstimationError*>(&e)) return "estimation";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  return "internal";
}

void fail_line(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

void add_window(CLI::App* sub, std::vector<double>& w) {
  sub->add_option("--window", w, "Observation window lo,hi")->delimiter(',')->expected(2)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mark-point dependence: simulation, estimation, testing and diagnostics"};
  app.set_version_flag("--version", MARKPOINT_VERSION);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a replicated marked point process dataset");
  s->add_option("--config", sim.config, "SimConfig JSON")->check(CLI::ExistingFile);
  s->add_option("--out", sim.out, "Output data CSV")->required();
  s->add_option("--latents", sim.latents, "Also write latent X, Y and intensity curves to this CSV");
  s->add_option("--n", sim.n, "Number of replicates (overrides config)");
  s->add_option("--sigma-x", sim.sigma_x, "Latent field standard deviation");
  s->add_option("--q", sim.q, "Mark-point coupling strength in [0, 0.8]");
  s->add_option("--R", sim.R, "Latent field range");
  s->add_option("--sigma-e", sim.sigma_e, "Measurement error standard deviation");
  s->add_option("--seed", sim.seed, "Random seed");
  s->add_option("--marginal-x", sim.marginal_x, "gaussian | exp_centered | t4_scaled");
  s->add_option("--marginal-y", sim.marginal_y, "gaussian | exp_centered | t4_scaled");
  s->add_flag("--poisson-marks", sim.poisson_marks, "Draw count marks Poisson(exp(mu + Y)) instead of Gaussian marks");

  std::string v_data, v_out;
  std::vector<double> v_window{0.0, 1.0};
  auto* v = app.add_subcommand("validate", "Check a dataset and report event-count statistics");
  v->add_option("--data", v_data, "Data CSV (replicate,time,mark)")->required()->check(CLI::ExistingFile);
  v->add_option("--out", v_out, "Output directory (prints to stdout if omitted)");
  add_window(v, v_window);

  SelectArgs sel;
  auto* se = app.add_subcommand("select", "Cross-validated bandwidth selection");
  se->add_option("--data", sel.data, "Data CSV")->required()->check(CLI::ExistingFile);
  se->add_option("--out", sel.out, "Output directory")->required();
  se->add_option("--k-folds", sel.folds, "Number of CV folds")->capture_default_str();
  se->add_option("--seed", sel.seed, "Fold assignment seed")->capture_default_str();
  se->add_option("--max-events", sel.max_events, "Drop replicates with more events (0 keeps all)")->capture_default_str();
  se->add_option("--h-grid-mu", sel.grid_mu, "Candidates for h_mu")->delimiter(',');
  se->add_option("--h-grid-y", sel.grid_y, "Candidates for h_y")->delimiter(',');
  se->add_option("--h-grid-sigma", sel.grid_sigma, "Candidates for h_sigma")->delimiter(',');
  se->add_option("--h-grid-xy", sel.grid_xy, "Candidates for h_xy")->delimiter(',');
  se->add_option("--h-grid-tau", sel.grid_tau, "Candidates for h_tau")->delimiter(',');
  add_window(se, sel.window);

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Naive and bias-corrected mean and covariance estimates");
  e->add_option("--data", est.data, "Data CSV")->required()->check(CLI::ExistingFile);
  e->add_option("--out", est.out, "Output directory")->required();
  e->add_option("--bandwidths", est.bandwidths, "Bandwidths JSON (selected by CV if omitted)")->check(CLI::ExistingFile);
  e->add_option("--grid-points", est.grid_points, "Evaluation grid size")->capture_default_str();
  e->add_option("--seed", est.seed, "Seed for CV folds when bandwidths are selected")->capture_default_str();
  e->add_flag("--no-bias-correct", est.no_bias_correct, "Use the naive fits for mean.csv and cov.csv");
  add_window(e, est.window);

  TestArgs tst;
  auto* t = app.add_subcommand("test", "Test mark-point independence");
  t->add_option("--data", tst.data, "Data CSV")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tst.out, "Output directory")->required();
  t->add_option("--bandwidths", tst.bandwidths, "Bandwidths JSON (selected by CV if omitted)")->check(CLI::ExistingFile);
  t->add_option("--method", tst.method, "asym | perm | both")->capture_default_str();
  t->add_option("--B", tst.b, "Number of permutations")->capture_default_str();
  t->add_option("--seed", tst.seed, "Permutation seed")->capture_default_str();
  add_window(t, tst.window);

  DiagnoseArgs dg;
  auto* d = app.add_subcommand("diagnose", "LGCP fit, G-function envelope and FPC score QQ data");
  d->add_option("--data", dg.data, "Data CSV")->required()->check(CLI::ExistingFile);
  d->add_option("--out", dg.out, "Output directory")->required();
  d->add_option("--h1", dg.h1, "Bandwidth for rho (CV if omitted)");
  d->add_option("--h2", dg.h2, "Bandwidth for rho2 (CV if omitted)");
  d->add_option("--sims", dg.sims, "Simulated datasets for the envelope")->capture_default_str();
  d->add_option("--level", dg.level, "Envelope level")->capture_default_str();
  d->add_option("--seed", dg.seed, "Envelope seed")->capture_default_str();
  d->add_option("--grid-points", dg.grid_points, "Grid size for the LGCP fit")->capture_default_str();
  d->add_option("--d-max", dg.d_max, "Largest nearest-neighbor distance")->capture_default_str();
  d->add_option("--d-points", dg.d_points, "Number of distances")->capture_default_str();
  d->add_option("--bandwidths", dg.bandwidths, "Bandwidths JSON for the QQ scores")->check(CLI::ExistingFile);
  d->add_flag("--skip-qq", dg.skip_qq, "Do not compute FPC score QQ data");
  add_window(d, dg.window);

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "Monte Carlo size, power or MAD-rate study");
  x->add_option("--spec", ex.spec, "size | power | mad-rates")->capture_default_str();
  x->add_option("--out", ex.out, "Output directory")->required();
  x->add_option("--n", ex.n, "Sample sizes")->delimiter(',')->capture_default_str();
  x->add_option("--sigma-x", ex.sigma_x, "Latent standard deviations")->delimiter(',')->capture_default_str();
  x->add_option("--q", ex.q, "Coupling strengths (size, mad-rates)")->delimiter(',')->capture_default_str();
  x->add_option("--gamma", ex.gamma, "Local alternative constants (power)")->delimiter(',')->capture_default_str();
  x->add_option("--alpha", ex.alphas, "Significance levels")->delimiter(',')->capture_default_str();
  x->add_option("--runs", ex.runs, "Datasets per cell")->capture_default_str();
  x->add_option("--method", ex.method, "asym | perm | both")->capture_default_str();
  x->add_option("--B", ex.b, "Permutations per dataset")->capture_default_str();
  x->add_option("--seed", ex.seed, "Master seed")->capture_default_str();
  x->add_option("--pilots", ex.pilots, "Pilot datasets for the fixed bandwidths")->capture_default_str();
  x->add_option("--k-folds", ex.folds, "CV folds for the pilots")->capture_default_str();
  x->add_option("--grid-points", ex.grid_points, "Grid size for MADs")->capture_default_str();
  x->add_option("--bandwidths", ex.bandwidths, "Fixed bandwidths JSON (skips pilots)")->check(CLI::ExistingFile);
  x->add_option("--marginal-x", ex.marginal_x, "Latent score marginal")->capture_default_str();
  x->add_option("--marginal-y", ex.marginal_y, "Mark score marginal")->capture_default_str();
  x->add_option("--R", ex.R, "Latent field range")->capture_default_str();
  x->add_option("--sigma-e", ex.sigma_e, "Measurement error standard deviation")->capture_default_str();

  PoissonArgs pf;
  auto* p = app.add_subcommand("poisson-fit", "Log-ratio fit of the count-mark model");
  p->set_help_flag("--help", "Print this help message and exit");  // -h would clash with --h
  p->add_option("--data", pf.data, "Data CSV with integer marks")->required()->check(CLI::ExistingFile);
  p->add_option("--out", pf.out, "Output directory")->required();
  p->add_option("--h", pf.h, "Shared bandwidth (CV for rho if omitted)");
  p->add_option("--grid-points", pf.grid_points, "Grid size")->capture_default_str();
  add_window(p, pf.window);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    fail_line("usage", err.what());
    return 1;
  }

  try {
    if (s->parsed()) cmd_simulate(sim);
    else if (v->parsed()) cmd_validate(v_data, v_window, v_out);
    else if (se->parsed()) cmd_select(sel);
    else if (e->parsed()) cmd_estimate(est);
    else if (t->parsed()) cmd_test(tst);
    else if (d->parsed()) cmd_diagnose(dg);
    else if (x->parsed()) cmd_experiment(ex);
    else if (p->parsed()) cmd_poisson(pf);
  } catch (const std::exception& err) {
    std::string msg = err.what();
    for (char& c : msg)
      if (c == '\n') c = ' ';
    fail_line(error_kind(err), msg);
    return 1;
  }
  return 0;
}
