#include "markpoint/linalg.hpp"

#include <cmath>

#include "markpoint/types.hpp"

namespace markpoint {

WeightedEigen weighted_eigen(const Eigen::MatrixXd& c, std::span<const double> weights) {
  const auto m = c.rows();
  if (c.cols() != m || static_cast<std::size_t>(m) != weights.size()) {
    throw ValidationError("weighted_eigen: size mismatch");
  }
  Eigen::VectorXd sw(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    if (!(weights[static_cast<std::size_t>(k)] > 0.0)) {
      throw ValidationError("weighted_eigen: quadrature weights must be positive");
    }
    sw(k) = std::sqrt(weights[static_cast<std::size_t>(k)]);
  }
  Eigen::MatrixXd a = sw.asDiagonal() * c * sw.asDiagonal();
  a = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw EstimationError("eigensolver failed");
  WeightedEigen out;
  out.values = es.eigenvalues().reverse();
  out.functions = sw.cwiseInverse().asDiagonal() * es.eigenvectors().rowwise().reverse();
  return out;
}

void orient_columns(Eigen::MatrixXd& f) {
  const Eigen::Index m = f.rows();
  if (m == 0) return;
  const Eigen::Index mid = m / 2;
  for (Eigen::Index k = 0; k < f.cols(); ++k) {
    auto col = f.col(k);
    const double scale = col.cwiseAbs().maxCoeff();
    const double at_mid = (m % 2 == 1) ? col(mid) : 0.5 * (col(mid - 1) + col(mid));
    const double ref = std::abs(at_mid) > 1e-6 * scale ? at_mid : col(0);
    if (ref < 0.0) col = -col;
  }
}

double bilinear(const Grid& g, const Eigen::MatrixXd& v, double s, double t) {
  auto locate = [&g](double x, std::size_t& i, double& f) {
    const auto pts = g.points();
    if (pts.size() == 1 || x <= pts.front()) {
      i = 0;
      f = 0.0;
      return;
    }
    if (x >= pts.back()) {
      i = pts.size() - 2;
      f = 1.0;
      return;
    }
    i = static_cast<std::size_t>(std::upper_bound(pts.begin(), pts.end(), x) - pts.begin()) - 1;
    f = (x - pts[i]) / (pts[i + 1] - pts[i]);
  };
  std::size_t i = 0, j = 0;
  double fs = 0.0, ft = 0.0;
  locate(s, i, fs);
  locate(t, j, ft);
  if (g.size() == 1) return v(0, 0);
  const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
  return (1 - fs) * ((1 - ft) * v(a, b) + ft * v(a, b + 1)) +
         fs * ((1 - ft) * v(a + 1, b) + ft * v(a + 1, b + 1));
}


}  // namespace markpoint
