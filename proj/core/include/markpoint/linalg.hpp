#pragma once

#include <Eigen/Dense>
#include <span>

#include "markpoint/types.hpp"

namespace markpoint {

// Eigenpairs of the integral operator with kernel C on a quadrature grid:
// solves W^{1/2} C W^{1/2} x = eta x and returns phi = W^{-1/2} x, so that
// sum_k w_k phi_j(s_k) phi_l(s_k) = delta_jl. Eigenvalues are in decreasing
// order; eigenfunctions are the matching columns.
struct WeightedEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd functions;
};

WeightedEigen weighted_eigen(const Eigen::MatrixXd& c, std::span<const double> weights);

// Sign convention for eigenfunctions sampled on a grid: each column is made
// positive at the middle row, or at the first row if it vanishes there.
void orient_columns(Eigen::MatrixXd& f);

// Bilinear interpolation of values(a, b) given at (grid[a], grid[b]); constant
// beyond the grid ends.
double bilinear(const Grid& grid, const Eigen::MatrixXd& values, double s, double t);

}  // namespace markpoint
