#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace gradkf {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Output map that reads individual states without redundancy.
///
/// Row r has a single nonzero entry gains[r] in column indices[r], and no two
/// rows read the same state. The default construction reads the first p
/// states, i.e. C = [diag(gains) | 0]. With this structure C P C^T is
/// diagonal for any diagonal P, so gains reduce to scalar divisions.
class SelectorOutputMap {
 public:
  /// Reads states 0..p-1 where p = gains.size().
  SelectorOutputMap(Index state_dim, Vector gains);
  SelectorOutputMap(Index state_dim, std::vector<Index> indices, Vector gains);

  static SelectorOutputMap identity(Index n);
  /// Recovers the selector structure of C, or nullopt if C is not a selector.
  static std::optional<SelectorOutputMap> from_matrix(const SparseMatrix& C);

  Index state_dim() const { return state_dim_; }
  Index output_dim() const { return gains_.size(); }
  const std::vector<Index>& indices() const { return indices_; }
  const Vector& gains() const { return gains_; }
  Index index(Index row) const { return indices_[static_cast<std::size_t>(row)]; }
  double gain(Index row) const { return gains_[row]; }

  /// C x.
  Vector apply(const Vector& x) const;
  /// C^T y, a length-n vector.
  Vector apply_transpose(const Vector& y) const;
  /// Length-n vector with gains at measured states and 0 elsewhere.
  Vector column_gains() const;

  SparseMatrix to_sparse() const;
  Matrix to_dense() const { return Matrix(to_sparse()); }

 private:
  Index state_dim_;
  std::vector<Index> indices_;
  Vector gains_;
};

/// Noisy discrete-time LTI plant
///   x_{k+1} = A x_k + B u_k + Upsilon w_k,   w_k ~ N(0, Q)
///   y_k     = C x_k + v_k,                   v_k ~ N(0, R)
/// with R diagonal positive definite (stored as its diagonal).
///
/// A, C and Upsilon are sparse so the diffusion plant can scale to thousands
/// of states; the dense factory covers small hand-written systems.
class LinearSystem {
 public:
  LinearSystem(SparseMatrix A, Matrix B, SparseMatrix C, Matrix Q, Vector R_diag,
               SparseMatrix Upsilon);

  /// Dense convenience constructor. R must be diagonal.
  static LinearSystem dense(const Matrix& A, const Matrix& B, const Matrix& C, const Matrix& Q,
                            const Matrix& R, const Matrix& Upsilon);

  const SparseMatrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const SparseMatrix& C() const { return C_; }
  const Matrix& Q() const { return Q_; }
  const Vector& R() const { return R_; }
  const SparseMatrix& Upsilon() const { return Upsilon_; }
  Matrix R_matrix() const { return R_.asDiagonal(); }

  Index n() const { return A_.rows(); }
  Index m() const { return B_.cols(); }
  Index p() const { return C_.rows(); }
  Index q() const { return Q_.rows(); }

  /// Same plant with a different output map and measurement noise.
  LinearSystem with_output(SparseMatrix C, Vector R_diag) const;
  /// Same plant with a different process-noise covariance.
  LinearSystem with_process_noise(SparseMatrix Upsilon, Matrix Q) const;

  std::optional<SelectorOutputMap> selector() const { return SelectorOutputMap::from_matrix(C_); }

 private:
  void validate() const;

  SparseMatrix A_;
  Matrix B_;
  SparseMatrix C_;
  Matrix Q_;
  Vector R_;
  SparseMatrix Upsilon_;
};

/// One simulated trajectory. states has one more entry than measurements.
struct SimTrace {
  std::vector<Vector> states;
  std::vector<Vector> measurements;
  std::vector<Vector> inputs;
  double dt = 1.0;
  std::uint64_t seed = 0;
};

/// Simulates `steps` transitions. measurements[k] is taken at states[k].
///
/// `inputs` must hold `steps` vectors, or be empty for u = 0. Each step draws
/// q process-noise normals then p measurement normals from one NormalSource,
/// so scaling R or Q leaves the underlying standard-normal draws unchanged.
SimTrace simulate(const LinearSystem& sys, const Vector& x0, const std::vector<Vector>& inputs,
                  int steps, std::uint64_t seed, double dt = 1.0);

/// Matrix F with F F^T = Q for symmetric PSD Q (eigen-decomposition, negative
/// eigenvalues from round-off truncated to zero).
Matrix psd_factor(const Matrix& Q);

/// Second-difference matrix: -2 on the diagonal, 1 on the off-diagonals, and
/// with periodic set, D(0, n-1) = D(n-1, 0) = 1.
Matrix build_tridiagonal(int n, bool periodic);

struct DiffusionSpec {
  int grid_n = 10;
  double alpha = 1.0;
  double beta = 1.0;
  double dx = 1.0;
  double dt = 0.01;
  bool periodic = true;
  int taylor_order = 10;
};

/// Grid point (row, col) maps to state row + col * grid_n (column-major vec).
/// Under that ordering I (x) (alpha D) acts along rows and (beta D) (x) I along
/// columns: A_ct vec(U) = (2/dx^2) vec(alpha D U + beta U D^T).
inline Index grid_index(int row, int col, int grid_n) {
  return static_cast<Index>(row) + static_cast<Index>(col) * grid_n;
}

/// Continuous-time generator (2/dx^2) [I (x) alpha D + beta D (x) I].
SparseMatrix diffusion_generator(const DiffusionSpec& spec);

/// Discrete diffusion plant: A = sum_{j<=order} (A_ct dt)^j / j!, B = 0 (one
/// zero input column), C = I, R = I, no process noise. Sensors are attached
/// later through the network module.
LinearSystem build_diffusion(const DiffusionSpec& spec);

struct GaussianBump {
  double cx = 0.0;  // row coordinate, in grid units
  double cy = 0.0;  // column coordinate, in grid units
  double amplitude = 1.0;
  double width = 1.0;
};

/// Sum of Gaussian bumps sampled at integer grid points, in grid_index order.
Vector gaussian_bumps_initial(int grid_n, const std::vector<GaussianBump>& bumps);

}  // namespace gradkf
