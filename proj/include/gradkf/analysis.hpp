#pragma once

#include <vector>

#include "gradkf/model.hpp"

namespace gradkf {

/// Closed-loop structure behind the stability argument for the diagonal
/// covariance filter: L = A P C^T (C P C^T + R)^-1 with P = diag(exp(beta)),
/// so A - L C = A (I - N) and N is diagonal.
struct StabilityReport {
  double rho_A = 0.0;
  double rho_closed = 0.0;
  Vector N_diag;
  bool stable = false;  // rho_closed < 1 - 1e-12
};

double spectral_radius(const Matrix& M);

/// N^(ii) = e^beta_i c_i^2 / (e^beta_i c_i^2 + r_i) for read states, 0 otherwise.
Vector closed_loop_n_diag(const SelectorOutputMap& C, const Vector& R, const Vector& beta);

StabilityReport closed_loop_check(const Matrix& A, const SelectorOutputMap& C, const Vector& R,
                                  const Vector& beta);

/// Mean of ||estimate_k - truth_k||_2 over samples with k dt in [t_a, t_b].
double steady_state_error(const std::vector<Vector>& estimates, const std::vector<Vector>& truth, double t_a,
                          double t_b, double dt);

/// max_{i,j} ||x_i - x_j||_2; 0 for a single estimate.
double disagreement(const std::vector<Vector>& estimates);

/// Least-squares slope of log(y) against log(x); NaN with fewer than two points.
double fit_growth_exponent(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace gradkf
