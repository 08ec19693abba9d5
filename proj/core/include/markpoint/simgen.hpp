#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "markpoint/rng.hpp"
#include "markpoint/types.hpp"

namespace markpoint {

enum class Marginal { gaussian, exp_centered, t4_scaled };

Marginal marginal_from_string(const std::string& name);
std::string to_string(Marginal m);

// Mean-zero, unit-variance innovation with the given shape.
double draw_innovation(Marginal m, Rng& rng);

struct SimConfig {
  std::size_t n = 100;
  double sigma_x = 1.0;
  double R = 0.1;
  double q = 0.0;
  Marginal marginal_x = Marginal::gaussian;
  Marginal marginal_y = Marginal::gaussian;
  double sigma_e = 1.0;
  std::uint64_t seed = 1;
  std::size_t max_events = 200;
  double kl_energy = 0.999;
  bool emit_latents = false;
  std::size_t kl_grid = 201;

  void validate() const;
};

SimConfig sim_config_from_json(const std::string& text);
std::string sim_config_to_json(const SimConfig& cfg);

// Ground truth of the simulation design on the window [0, 1].
namespace truth {
inline constexpr std::array<double, 3> kEtaY{1.0, 0.6, 0.4};
double mu(double s);
double phi_y(int k, double s);
double cov_y(double s, double t);
double cov_x(double s, double t, double sigma_x, double R);
double lambda0(double s, double sigma_x);
Window window();
}  // namespace truth

// Correlation pattern between the first three X and Y scores, scaled by q.
Eigen::Matrix3d coupling_matrix();

struct KlResult {
  std::vector<double> grid;
  std::vector<double> weights;
  std::vector<double> eigenvalues;   // retained, decreasing
  Eigen::MatrixXd eigenfunctions;    // grid x retained
  double total = 0.0;                // sum of all positive eigenvalues
};

// Karhunen-Loeve decomposition of C_X on the grid, truncated at the first k
// whose cumulative share of the positive spectrum reaches `energy`. Signs:
// positive at the window midpoint, or at the left end if zero at the midpoint.
KlResult kl_decompose_cx(double sigma_x, double R, const Grid& grid, double energy = 0.999);

// Joint law of (xi^X, xi^Y): the first three X scores and the three Y scores
// share a 6x6 covariance with cross block q diag(sqrt eta^X) M diag(sqrt eta^Y);
// further X scores are independent.
class ScoreModel {
 public:
  ScoreModel(std::vector<double> eta_x, double q, Marginal mx, Marginal my);

  void draw(Rng& rng, std::span<double> xi_x, std::span<double> xi_y) const;
  std::size_t x_count() const { return eta_x_.size(); }
  // Cov(xi^X_j, xi^Y_k) for j < 3.
  const Eigen::MatrixXd& cross() const { return cross_; }
  const Eigen::MatrixXd& joint_cov() const { return joint_; }

 private:
  std::vector<double> eta_x_;
  std::size_t coupled_ = 0;
  Marginal mx_, my_;
  Eigen::MatrixXd joint_;
  Eigen::MatrixXd factor_;
  Eigen::MatrixXd cross_;
};

struct JointScores {
  Eigen::MatrixXd xi_x;  // n x K
  Eigen::MatrixXd xi_y;  // n x 3
};
JointScores draw_joint_scores(std::size_t n, double q, const std::vector<double>& eta_x,
                              Marginal mx, Marginal my, std::uint64_t seed);

// Thinning sampler; throws if lambda exceeds lambda_max at a proposal.
std::vector<double> sample_inhomog_poisson(const std::function<double(double)>& lambda,
                                           double lambda_max, const Window& window, Rng& rng);

double local_alternative_q(std::size_t n, double gamma);

struct SimReplicate {
  MarkedPattern pattern;
  std::vector<double> xi_x;
  std::vector<double> xi_y;
  std::vector<double> nystrom;  // per KL grid node: w_j sum_k xi_k phi_k(t_j) / eta_k
  std::size_t redraws = 0;
};

class Simulator {
 public:
  explicit Simulator(SimConfig cfg);

  const SimConfig& config() const { return cfg_; }
  const KlResult& kl() const { return kl_; }
  const ScoreModel& scores() const { return scores_; }

  // Replicate `index`, deterministic in (seed, index).
  SimReplicate replicate(std::size_t index) const;
  ReplicatedSample simulate(std::vector<SimReplicate>* latents = nullptr,
                            std::size_t* redraws = nullptr) const;

  double phi_x(std::size_t k, double s) const;
  double latent_x(const SimReplicate& r, double s) const;
  double latent_y(const SimReplicate& r, double s) const;
  double intensity(const SimReplicate& r, double s) const;

  // Truth: C_XY(s, t) = sum_jk Cov(xi^X_j, xi^Y_k) phi^X_j(s) phi^Y_k(t).
  double cross_cov(double s, double t) const;
  // Mean of marks at events: mu(s) + C_XY(s, s).
  double mu_star(double s) const;
  // Var X(s) under the truncated expansion.
  double var_x(double s) const;

 private:
  SimReplicate attempt(std::size_t index, std::size_t tag) const;

  SimConfig cfg_;
  KlResult kl_;
  ScoreModel scores_;
};

}  // namespace markpoint
