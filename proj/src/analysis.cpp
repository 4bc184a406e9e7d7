#include "gradkf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Eigenvalues>

#include "gradkf/errors.hpp"

namespace gradkf {

double spectral_radius(const Matrix& M) {
  if (M.rows() != M.cols()) throw ConfigError("spectral_radius: matrix must be square");
  if (M.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(M, false);
  if (es.info() != Eigen::Success) throw NumericalError("spectral_radius: eigen-solver did not converge");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Vector closed_loop_n_diag(const SelectorOutputMap& C, const Vector& R, const Vector& beta) {
  if (beta.size() != C.state_dim() || R.size() != C.output_dim())
    throw ConfigError("closed_loop_check: dimension mismatch");
  Vector N = Vector::Zero(C.state_dim());
  for (Index r = 0; r < C.output_dim(); ++r) {
    const double ec2 = std::exp(beta[C.index(r)]) * C.gain(r) * C.gain(r);
    N[C.index(r)] = ec2 / (ec2 + R[r]);
  }
  return N;
}

StabilityReport closed_loop_check(const Matrix& A, const SelectorOutputMap& C, const Vector& R,
                                  const Vector& beta) {
  if (A.rows() != A.cols() || A.rows() != C.state_dim())
    throw ConfigError("closed_loop_check: A must be n x n with n = " + std::to_string(C.state_dim()));
  StabilityReport rep;
  rep.N_diag = closed_loop_n_diag(C, R, beta);
  for (Index i = 0; i < rep.N_diag.size(); ++i)
    if (!(rep.N_diag[i] >= 0.0 && rep.N_diag[i] < 1.0))
      throw NumericalError("closed_loop_check: N(" + std::to_string(i) + ") outside [0, 1)");
  const Vector keep = Vector::Ones(rep.N_diag.size()) - rep.N_diag;
  rep.rho_A = spectral_radius(A);
  rep.rho_closed = spectral_radius(A * keep.asDiagonal());
  rep.stable = rep.rho_closed < 1.0 - 1e-12;
  return rep;
}

double steady_state_error(const std::vector<Vector>& estimates, const std::vector<Vector>& truth, double t_a,
                          double t_b, double dt) {
  if (!(dt > 0.0)) throw ConfigError("steady_state_error: dt must be > 0");
  if (!(t_b >= t_a)) throw ConfigError("steady_state_error: window end precedes start");
  const std::size_t count = std::min(estimates.size(), truth.size());
  const double tol = 1e-9 * std::max(1.0, std::abs(t_b));
  if (count == 0 || t_b > static_cast<double>(count - 1) * dt + tol)
    throw ConfigError("steady_state_error: window extends past the trace");
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (t < t_a - tol || t > t_b + tol) continue;
    sum += (estimates[k] - truth[k]).norm();
    ++used;
  }
  if (used == 0) throw ConfigError("steady_state_error: empty window");
  return sum / static_cast<double>(used);
}

double disagreement(const std::vector<Vector>& estimates) {
  if (estimates.empty()) throw ConfigError("disagreement: no estimates");
  double worst = 0.0;
  for (std::size_t i = 0; i < estimates.size(); ++i)
    for (std::size_t j = i + 1; j < estimates.size(); ++j)
      worst = std::max(worst, (estimates[i] - estimates[j]).norm());
  return worst;
}

double fit_growth_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ConfigError("fit_growth_exponent: length mismatch");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace gradkf
