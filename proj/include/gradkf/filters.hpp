#pragma once

#include "gradkf/model.hpp"

namespace gradkf {

// ---------------------------------------------------------------------------
// Standard Kalman filter (baseline)

/// Prior estimate and covariance at step k. x_filtered holds the corrected
/// estimate of the step that produced this state (empty before the first step).
struct KalmanState {
  Vector x_hat;
  Matrix P;
  long k = 0;
  Vector x_filtered;
};

/// One predictor-form Kalman step:
///   K = P C^T (C P C^T + R)^-1
///   x+ = A (x + K (y - C x)) + B u
///   P+ = A (I - K C) P A^T + Upsilon Q Upsilon^T
/// Throws NumericalError if C P C^T + R has condition number above 1e12.
KalmanState kf_step(const LinearSystem& sys, const KalmanState& st, const Vector& y, const Vector& u);

/// The gain the step above would use.
Matrix kalman_gain(const LinearSystem& sys, const Matrix& P);

// ---------------------------------------------------------------------------
// Gradient-descent diagonal covariance filter

inline constexpr double kBetaClamp = 30.0;
inline constexpr double kMuMin = 1e-8;
inline constexpr double kMuMax = 1e2;
inline constexpr double kInitialMu = 1e-2;

/// Momentum coefficient sequence for the Nesterov look-ahead point.
enum class MomentumSchedule {
  standard,  ///< (k-1)/(k+2), zero at k = 1
  shifted,   ///< (k+1)/(k+2)
};

/// Point the accelerated beta step starts from. `current` steps from beta_k
/// with the gradient taken at the look-ahead gain; `lookahead` steps from
/// alpha_k itself (classic Nesterov), which drifts to the clamp under noisy
/// gradients because the objective flattens as beta -> -inf.
enum class StepBase { current, lookahead };

struct GradientOptions {
  bool accelerated = true;
  bool adaptive = true;
  /// Learning rate when adaptive is off.
  double fixed_mu = kInitialMu;
  /// Rate used by the adaptive filter before the first secant step (k < 2).
  double initial_mu = kInitialMu;
  MomentumSchedule schedule = MomentumSchedule::standard;
  StepBase base = StepBase::current;
};

/// Filter state with P-hat = diag(exp(beta)).
///
/// h tracks d x_hat^(i) / d beta^(i); alpha_prev and grad_prev are the
/// previous look-ahead point and gradient needed by the secant rate.
struct GradCovState {
  Vector beta;
  Vector beta_prev;
  Vector alpha_prev;
  Vector h;
  Vector grad_prev;
  double mu = kInitialMu;
  Vector x_hat;
  Vector x_filtered;
  long k = 0;
};

/// beta = log(P0_diag), h = 0, grad_prev = 0, previous parameters equal to beta.
GradCovState initial_grad_cov_state(const Vector& x0, const Vector& P0_diag, double mu0 = kInitialMu);

/// g^(i) = -2 (delta^T C^[i]) h^(i); zero for states C does not read.
Vector grad_of_objective(const Vector& delta, const SelectorOutputMap& C, const Vector& h);

/// Sensitivity recursion
///   h+^(i) = h^(i) max(0, 1 - k^(i)T C^[i]) + (k^(i) - k^(i) k^(i)T C^[i])^T delta.
/// For a selector map the gain column k^(i) has a single nonzero entry, in the
/// row that reads state i; `kappa[i]` is that entry (0 for unread states).
Vector h_update(const Vector& h, const Vector& kappa, const SelectorOutputMap& C, const Vector& delta);

/// Secant learning rate 2 (dg^T db)/(dg^T dg), restricted to [kMuMin, kMuMax].
/// Returns mu_prev when dg = 0 or the ratio is non-finite or non-positive.
double bb_rate(const Vector& delta_beta, const Vector& delta_grad, double mu_prev);

/// Look-ahead point beta + c_k (beta - beta_prev).
Vector nesterov_alpha(const Vector& beta, const Vector& beta_prev, long k,
                      MomentumSchedule schedule = MomentumSchedule::standard);

double momentum_coefficient(long k, MomentumSchedule schedule);

/// diag(exp(beta)).
Eigen::DiagonalMatrix<double, Eigen::Dynamic> covariance_estimate(const GradCovState& st);

/// New beta, h, gradient and rate after one innovation.
struct CovarianceUpdate {
  Vector beta;
  Vector h;
  Vector grad;
  Vector eval_point;
  double mu = kInitialMu;
};

/// The beta/h/mu block of one filter iteration for output map C with noise
/// diagonal R and pre-correction innovation delta = y - C x_hat. Costs O(n)
/// and divides only by the p diagonal entries of D = R + C P-hat C^T.
CovarianceUpdate advance_covariance(const SelectorOutputMap& C, const Vector& R, const GradCovState& st,
                                    const Vector& delta, const GradientOptions& opts);

/// Throws NumericalError if any state component is non-finite.
void check_finite(const GradCovState& st, const char* who);

/// Kalman filter whose covariance is a diagonal exp(beta) tuned online by
/// gradient descent on the squared innovation, optionally with Nesterov
/// look-ahead and a Barzilai-Borwein rate. Requires a selector output map.
class GradientKalmanFilter {
 public:
  explicit GradientKalmanFilter(LinearSystem sys, GradientOptions opts = {});

  GradCovState step(const GradCovState& st, const Vector& y, const Vector& u) const;

  const LinearSystem& system() const { return sys_; }
  const SelectorOutputMap& output_map() const { return C_; }
  const GradientOptions& options() const { return opts_; }

 private:
  LinearSystem sys_;
  SelectorOutputMap C_;
  GradientOptions opts_;
};

/// Free-function form of GradientKalmanFilter::step; validates C every call.
GradCovState gdkf_step(const LinearSystem& sys, const GradCovState& st, const Vector& y, const Vector& u,
                       const GradientOptions& opts);

}  // namespace gradkf
