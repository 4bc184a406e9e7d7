#include "gradkf/filters.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "gradkf/errors.hpp"

namespace gradkf {

// ---------------------------------------------------------------------------
// Standard Kalman filter

Matrix kalman_gain(const LinearSystem& sys, const Matrix& P) {
  const Matrix CP = sys.C() * P;                        // p x n
  Matrix S = CP * sys.C().transpose();                  // p x p
  S.diagonal() += sys.R();
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    throw NumericalError("kalman filter: innovation covariance C P C^T + R is singular (condition " +
                         std::to_string(hi / lo) + ")");
  // K^T = S^-1 C P since P and S are symmetric.
  return S.ldlt().solve(CP).transpose();
}

KalmanState kf_step(const LinearSystem& sys, const KalmanState& st, const Vector& y, const Vector& u) {
  if (st.x_hat.size() != sys.n() || st.P.rows() != sys.n() || st.P.cols() != sys.n())
    throw ConfigError("kf_step: state dimensions do not match the system");
  if (y.size() != sys.p() || u.size() != sys.m())
    throw ConfigError("kf_step: measurement or input has the wrong length");

  const Matrix K = kalman_gain(sys, st.P);
  KalmanState next;
  next.k = st.k + 1;
  next.x_filtered = st.x_hat + K * (y - sys.C() * st.x_hat);
  next.x_hat = sys.A() * next.x_filtered + sys.B() * u;

  const Matrix P_post = st.P - K * (sys.C() * st.P);
  const Matrix AP = sys.A() * P_post;
  Matrix P = (sys.A() * AP.transpose()).transpose();
  const Matrix UQ = sys.Upsilon() * sys.Q();
  P += (sys.Upsilon() * UQ.transpose()).transpose();
  next.P = 0.5 * (P + P.transpose());
  if (!next.x_hat.allFinite() || !next.P.allFinite())
    throw NumericalError("kalman filter: non-finite state at step " + std::to_string(next.k));
  return next;
}

// ---------------------------------------------------------------------------
// Gradient-descent covariance building blocks

GradCovState initial_grad_cov_state(const Vector& x0, const Vector& P0_diag, double mu0) {
  if (x0.size() != P0_diag.size()) throw ConfigError("initial state: x0 and P0 differ in length");
  if ((P0_diag.array() <= 0.0).any() || !P0_diag.allFinite())
    throw ConfigError("initial state: P0 diagonal must be positive");
  if (!(mu0 > 0.0)) throw ConfigError("initial state: learning rate must be positive");
  GradCovState st;
  st.beta = P0_diag.array().log().cwiseMax(-kBetaClamp).cwiseMin(kBetaClamp).matrix();
  st.beta_prev = st.beta;
  st.alpha_prev = st.beta;
  st.h = Vector::Zero(x0.size());
  st.grad_prev = Vector::Zero(x0.size());
  st.mu = mu0;
  st.x_hat = x0;
  st.k = 0;
  return st;
}

Vector grad_of_objective(const Vector& delta, const SelectorOutputMap& C, const Vector& h) {
  Vector g = Vector::Zero(h.size());
  for (Index r = 0; r < C.output_dim(); ++r) {
    const Index i = C.index(r);
    g[i] = -2.0 * (delta[r] * C.gain(r)) * h[i];
  }
  return g;
}

Vector h_update(const Vector& h, const Vector& kappa, const SelectorOutputMap& C, const Vector& delta) {
  Vector next = h;
  for (Index r = 0; r < C.output_dim(); ++r) {
    const Index i = C.index(r);
    const double kc = kappa[i] * C.gain(r);
    next[i] = h[i] * std::max(0.0, 1.0 - kc) + (kappa[i] - kappa[i] * kc) * delta[r];
  }
  return next;
}

double bb_rate(const Vector& delta_beta, const Vector& delta_grad, double mu_prev) {
  const double gg = delta_grad.squaredNorm();
  if (!(gg > 0.0) || !std::isfinite(gg)) return mu_prev;
  const double mu = 2.0 * delta_grad.dot(delta_beta) / gg;
  if (!std::isfinite(mu) || mu <= 0.0) return mu_prev;
  return std::clamp(mu, kMuMin, kMuMax);
}

double momentum_coefficient(long k, MomentumSchedule schedule) {
  const double kd = static_cast<double>(k);
  switch (schedule) {
    case MomentumSchedule::shifted:
      return (kd + 1.0) / (kd + 2.0);
    case MomentumSchedule::standard:
    default:
      return (kd - 1.0) / (kd + 2.0);
  }
}

Vector nesterov_alpha(const Vector& beta, const Vector& beta_prev, long k, MomentumSchedule schedule) {
  if (k < 1) throw ConfigError("nesterov_alpha: k must be >= 1");
  return beta + momentum_coefficient(k, schedule) * (beta - beta_prev);
}

Eigen::DiagonalMatrix<double, Eigen::Dynamic> covariance_estimate(const GradCovState& st) {
  return Eigen::DiagonalMatrix<double, Eigen::Dynamic>(st.beta.array().exp().matrix());
}

CovarianceUpdate advance_covariance(const SelectorOutputMap& C, const Vector& R, const GradCovState& st,
                                    const Vector& delta, const GradientOptions& opts) {
  const long k = st.k + 1;
  CovarianceUpdate out;
  out.eval_point = opts.accelerated ? nesterov_alpha(st.beta, st.beta_prev, k, opts.schedule) : st.beta;
  // Extrapolation can leave the beta box; clamp it so exp() stays finite.
  out.eval_point = out.eval_point.cwiseMax(-kBetaClamp).cwiseMin(kBetaClamp);

  // Gain columns evaluated at the look-ahead point; D uses the current P-hat.
  Vector kappa = Vector::Zero(st.beta.size());
  for (Index r = 0; r < C.output_dim(); ++r) {
    const Index i = C.index(r);
    const double c = C.gain(r);
    const double D = R[r] + std::exp(st.beta[i]) * c * c;
    kappa[i] = std::exp(out.eval_point[i]) * c / D;
  }

  out.grad = grad_of_objective(delta, C, st.h);
  if (opts.adaptive) {
    out.mu = k >= 2 ? bb_rate(st.beta - st.alpha_prev, out.grad - st.grad_prev, st.mu) : st.mu;
  } else {
    out.mu = opts.fixed_mu;
  }
  const Vector& from = opts.base == StepBase::lookahead ? out.eval_point : st.beta;
  out.beta = (from - 0.5 * out.mu * out.grad).cwiseMax(-kBetaClamp).cwiseMin(kBetaClamp);
  out.h = h_update(st.h, kappa, C, delta);
  return out;
}

void check_finite(const GradCovState& st, const char* who) {
  if (!st.x_hat.allFinite() || !st.beta.allFinite() || !st.h.allFinite() || !std::isfinite(st.mu))
    throw NumericalError(std::string(who) + ": non-finite state at step " + std::to_string(st.k));
}

// ---------------------------------------------------------------------------
// GradientKalmanFilter

namespace {

SelectorOutputMap require_selector(const LinearSystem& sys) {
  auto C = sys.selector();
  if (!C)
    throw ConfigError(
        "gradient filter: C must be a selector output map (one nonzero per row, no state read twice)");
  return *C;
}

}  // namespace

GradientKalmanFilter::GradientKalmanFilter(LinearSystem sys, GradientOptions opts)
    : sys_(std::move(sys)), C_(require_selector(sys_)), opts_(opts) {
  if (!opts_.adaptive && !(opts_.fixed_mu > 0.0)) throw ConfigError("gradient filter: fixed_mu must be > 0");
  if (opts_.adaptive && !(opts_.initial_mu > 0.0)) throw ConfigError("gradient filter: initial_mu must be > 0");
}

GradCovState GradientKalmanFilter::step(const GradCovState& st, const Vector& y, const Vector& u) const {
  if (st.x_hat.size() != sys_.n() || st.beta.size() != sys_.n())
    throw ConfigError("gradient filter: state dimension does not match the system");
  if (y.size() != sys_.p() || u.size() != sys_.m())
    throw ConfigError("gradient filter: measurement or input has the wrong length");

  const Vector delta = y - C_.apply(st.x_hat);
  CovarianceUpdate upd = advance_covariance(C_, sys_.R(), st, delta, opts_);

  GradCovState next;
  next.x_filtered = st.x_hat;
  for (Index r = 0; r < C_.output_dim(); ++r) {
    const Index i = C_.index(r);
    const double c = C_.gain(r);
    const double e = std::exp(st.beta[i]);
    const double D = sys_.R()[r] + e * c * c;
    next.x_filtered[i] += (e * c / D) * delta[r];
  }
  next.x_hat = sys_.A() * next.x_filtered + sys_.B() * u;
  next.beta_prev = st.beta;
  next.alpha_prev = std::move(upd.eval_point);
  next.grad_prev = std::move(upd.grad);
  next.beta = std::move(upd.beta);
  next.h = std::move(upd.h);
  next.mu = upd.mu;
  next.k = st.k + 1;
  check_finite(next, "gradient filter");
  return next;
}

GradCovState gdkf_step(const LinearSystem& sys, const GradCovState& st, const Vector& y, const Vector& u,
                       const GradientOptions& opts) {
  return GradientKalmanFilter(sys, opts).step(st, y, u);
}

}  // namespace gradkf
