#include "gradkf/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "gradkf/errors.hpp"
#include "gradkf/rng.hpp"

namespace gradkf {

namespace {

std::string dims(Index rows, Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

// ---------------------------------------------------------------------------
// SelectorOutputMap

SelectorOutputMap::SelectorOutputMap(Index state_dim, Vector gains)
    : state_dim_(state_dim), gains_(std::move(gains)) {
  indices_.resize(static_cast<std::size_t>(gains_.size()));
  for (Index r = 0; r < gains_.size(); ++r) indices_[static_cast<std::size_t>(r)] = r;
  require(gains_.size() >= 1 && gains_.size() <= state_dim_,
          "selector output map needs 1 <= p <= n, got p=" + std::to_string(gains_.size()) +
              " n=" + std::to_string(state_dim_));
  for (Index r = 0; r < gains_.size(); ++r)
    require(gains_[r] != 0.0 && std::isfinite(gains_[r]), "selector gains must be finite and nonzero");
}

SelectorOutputMap::SelectorOutputMap(Index state_dim, std::vector<Index> indices, Vector gains)
    : state_dim_(state_dim), indices_(std::move(indices)), gains_(std::move(gains)) {
  require(static_cast<Index>(indices_.size()) == gains_.size(),
          "selector output map: indices and gains differ in length");
  require(gains_.size() >= 1 && gains_.size() <= state_dim_,
          "selector output map needs 1 <= p <= n");
  std::vector<char> seen(static_cast<std::size_t>(state_dim_), 0);
  for (Index r = 0; r < gains_.size(); ++r) {
    const Index i = indices_[static_cast<std::size_t>(r)];
    require(i >= 0 && i < state_dim_, "selector index out of range: " + std::to_string(i));
    require(!seen[static_cast<std::size_t>(i)], "selector reads state " + std::to_string(i) + " twice");
    seen[static_cast<std::size_t>(i)] = 1;
    require(gains_[r] != 0.0 && std::isfinite(gains_[r]), "selector gains must be finite and nonzero");
  }
}

SelectorOutputMap SelectorOutputMap::identity(Index n) { return SelectorOutputMap(n, Vector::Ones(n)); }

std::optional<SelectorOutputMap> SelectorOutputMap::from_matrix(const SparseMatrix& C) {
  if (C.rows() < 1 || C.rows() > C.cols()) return std::nullopt;
  std::vector<Index> indices(static_cast<std::size_t>(C.rows()), -1);
  Vector gains = Vector::Zero(C.rows());
  std::vector<char> seen(static_cast<std::size_t>(C.cols()), 0);
  for (Index col = 0; col < C.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(C, col); it; ++it) {
      if (it.value() == 0.0) continue;
      const auto row = static_cast<std::size_t>(it.row());
      if (indices[row] != -1 || seen[static_cast<std::size_t>(col)]) return std::nullopt;
      indices[row] = col;
      gains[it.row()] = it.value();
      seen[static_cast<std::size_t>(col)] = 1;
    }
  }
  for (Index i : indices)
    if (i < 0) return std::nullopt;
  return SelectorOutputMap(C.cols(), std::move(indices), std::move(gains));
}

Vector SelectorOutputMap::apply(const Vector& x) const {
  Vector y(output_dim());
  for (Index r = 0; r < output_dim(); ++r) y[r] = gains_[r] * x[index(r)];
  return y;
}

Vector SelectorOutputMap::apply_transpose(const Vector& y) const {
  Vector x = Vector::Zero(state_dim_);
  for (Index r = 0; r < output_dim(); ++r) x[index(r)] = gains_[r] * y[r];
  return x;
}

Vector SelectorOutputMap::column_gains() const {
  Vector c = Vector::Zero(state_dim_);
  for (Index r = 0; r < output_dim(); ++r) c[index(r)] = gains_[r];
  return c;
}

SparseMatrix SelectorOutputMap::to_sparse() const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(indices_.size());
  for (Index r = 0; r < output_dim(); ++r) t.emplace_back(r, index(r), gains_[r]);
  SparseMatrix C(output_dim(), state_dim_);
  C.setFromTriplets(t.begin(), t.end());
  return C;
}

// ---------------------------------------------------------------------------
// LinearSystem

LinearSystem::LinearSystem(SparseMatrix A, Matrix B, SparseMatrix C, Matrix Q, Vector R_diag,
                           SparseMatrix Upsilon)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), Q_(std::move(Q)), R_(std::move(R_diag)),
      Upsilon_(std::move(Upsilon)) {
  A_.makeCompressed();
  C_.makeCompressed();
  Upsilon_.makeCompressed();
  validate();
}

LinearSystem LinearSystem::dense(const Matrix& A, const Matrix& B, const Matrix& C, const Matrix& Q,
                                 const Matrix& R, const Matrix& Upsilon) {
  require(R.rows() == R.cols(), "R must be square, got " + dims(R.rows(), R.cols()));
  for (Index i = 0; i < R.rows(); ++i)
    for (Index j = 0; j < R.cols(); ++j)
      require(i == j || R(i, j) == 0.0, "R must be diagonal (uncorrelated sensor noise)");
  return LinearSystem(A.sparseView(), B, C.sparseView(), Q, R.diagonal(), Upsilon.sparseView());
}

void LinearSystem::validate() const {
  const Index n = A_.rows();
  require(n >= 1 && A_.cols() == n, "A must be square and non-empty, got " + dims(A_.rows(), A_.cols()));
  require(B_.rows() == n, "B must have n=" + std::to_string(n) + " rows, got " + dims(B_.rows(), B_.cols()));
  require(C_.cols() == n && C_.rows() >= 1,
          "C must be p x n with n=" + std::to_string(n) + ", got " + dims(C_.rows(), C_.cols()));
  require(R_.size() == C_.rows(), "R must be " + dims(C_.rows(), C_.rows()) + ", got diagonal of length " +
                                      std::to_string(R_.size()));
  for (Index i = 0; i < R_.size(); ++i)
    require(R_[i] > 0.0 && std::isfinite(R_[i]), "R must be positive definite: R(" + std::to_string(i) + "," +
                                                     std::to_string(i) + ") = " + std::to_string(R_[i]));
  require(Q_.rows() == Q_.cols() && Q_.rows() >= 1, "Q must be square, got " + dims(Q_.rows(), Q_.cols()));
  require(Upsilon_.rows() == n && Upsilon_.cols() == Q_.rows(),
          "Upsilon must be " + dims(n, Q_.rows()) + ", got " + dims(Upsilon_.rows(), Upsilon_.cols()));
  const double scale = std::max(1.0, Q_.cwiseAbs().maxCoeff());
  require((Q_ - Q_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale, "Q must be symmetric");
  if (Q_.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(Q_, Eigen::EigenvaluesOnly);
    require(es.eigenvalues().minCoeff() >= -1e-12 * scale, "Q must be positive semidefinite");
  }
  for (Index k = 0; k < A_.nonZeros(); ++k)
    require(std::isfinite(A_.valuePtr()[k]), "A has non-finite entries");
}

LinearSystem LinearSystem::with_output(SparseMatrix C, Vector R_diag) const {
  return LinearSystem(A_, B_, std::move(C), Q_, std::move(R_diag), Upsilon_);
}

LinearSystem LinearSystem::with_process_noise(SparseMatrix Upsilon, Matrix Q) const {
  return LinearSystem(A_, B_, C_, std::move(Q), R_, std::move(Upsilon));
}

// ---------------------------------------------------------------------------
// Simulation

Matrix psd_factor(const Matrix& Q) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(Q);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

SimTrace simulate(const LinearSystem& sys, const Vector& x0, const std::vector<Vector>& inputs, int steps,
                  std::uint64_t seed, double dt) {
  require(steps >= 1, "simulate: steps must be >= 1");
  require(x0.size() == sys.n(), "simulate: x0 has length " + std::to_string(x0.size()) + ", expected " +
                                    std::to_string(sys.n()));
  require(inputs.empty() || static_cast<int>(inputs.size()) == steps,
          "simulate: expected " + std::to_string(steps) + " input vectors, got " + std::to_string(inputs.size()));
  for (const auto& u : inputs)
    require(u.size() == sys.m(), "simulate: input has length " + std::to_string(u.size()) + ", expected " +
                                     std::to_string(sys.m()));

  const Matrix noise_factor = psd_factor(sys.Q());
  const Vector r_std = sys.R().cwiseSqrt();
  NormalSource normal(seed);

  SimTrace trace;
  trace.dt = dt;
  trace.seed = seed;
  trace.states.reserve(static_cast<std::size_t>(steps) + 1);
  trace.measurements.reserve(static_cast<std::size_t>(steps));
  trace.inputs = inputs.empty() ? std::vector<Vector>(static_cast<std::size_t>(steps), Vector::Zero(sys.m()))
                                : inputs;
  trace.states.push_back(x0);

  Vector z_w(sys.q());
  Vector z_v(sys.p());
  for (int k = 0; k < steps; ++k) {
    for (Index i = 0; i < z_w.size(); ++i) z_w[i] = normal();
    for (Index i = 0; i < z_v.size(); ++i) z_v[i] = normal();
    const Vector& x = trace.states.back();
    trace.measurements.push_back(sys.C() * x + r_std.cwiseProduct(z_v));
    Vector next = sys.A() * x + sys.B() * trace.inputs[static_cast<std::size_t>(k)];
    next += sys.Upsilon() * (noise_factor * z_w);
    trace.states.push_back(std::move(next));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Diffusion plant

Matrix build_tridiagonal(int n, bool periodic) {
  require(n >= 2, "build_tridiagonal: n must be >= 2, got " + std::to_string(n));
  Matrix D = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    D(i, i) = -2.0;
    if (i + 1 < n) D(i, i + 1) = D(i + 1, i) = 1.0;
  }
  if (periodic) D(0, n - 1) = D(n - 1, 0) = 1.0;
  return D;
}

namespace {

void validate(const DiffusionSpec& s) {
  require(s.grid_n >= 2, "diffusion: grid_n must be >= 2");
  require(s.dx > 0.0, "diffusion: dx must be > 0");
  require(s.dt >= 0.0, "diffusion: dt must be >= 0");
  require(s.taylor_order >= 0, "diffusion: taylor_order must be >= 0");
  require(std::isfinite(s.alpha) && std::isfinite(s.beta), "diffusion: coefficients must be finite");
}

}  // namespace

SparseMatrix diffusion_generator(const DiffusionSpec& spec) {
  validate(spec);
  const int n = spec.grid_n;
  const SparseMatrix D = build_tridiagonal(n, spec.periodic).sparseView();
  SparseMatrix I(n, n);
  I.setIdentity();
  // Kronecker sum assembled entry-wise: (I (x) aD)(r + c n, r' + c n) = a D(r, r')
  // and (bD (x) I)(r + c n, r + c' n) = b D(c, c').
  std::vector<Eigen::Triplet<double>> t;
  const double scale = 2.0 / (spec.dx * spec.dx);
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < n; ++r) {
      const Index row = grid_index(r, c, n);
      for (SparseMatrix::InnerIterator it(D, r); it; ++it)
        t.emplace_back(row, grid_index(static_cast<int>(it.row()), c, n), scale * spec.alpha * it.value());
      for (SparseMatrix::InnerIterator it(D, c); it; ++it)
        t.emplace_back(row, grid_index(r, static_cast<int>(it.row()), n), scale * spec.beta * it.value());
    }
  }
  SparseMatrix A_ct(static_cast<Index>(n) * n, static_cast<Index>(n) * n);
  A_ct.setFromTriplets(t.begin(), t.end());
  A_ct.prune(0.0);
  return A_ct;
}

LinearSystem build_diffusion(const DiffusionSpec& spec) {
  const SparseMatrix A_ct = diffusion_generator(spec);
  const Index states = A_ct.rows();
  SparseMatrix step = A_ct * spec.dt;
  SparseMatrix A(states, states);
  A.setIdentity();
  SparseMatrix term = A;
  for (int j = 1; j <= spec.taylor_order; ++j) {
    term = (term * step) / static_cast<double>(j);
    term.prune(0.0);
    A += term;
  }
  A.prune(0.0);
  SparseMatrix I(states, states);
  I.setIdentity();
  return LinearSystem(A, Matrix::Zero(states, 1), I, Matrix::Zero(1, 1), Vector::Ones(states),
                      SparseMatrix(states, 1));
}

Vector gaussian_bumps_initial(int grid_n, const std::vector<GaussianBump>& bumps) {
  require(grid_n >= 1, "gaussian_bumps_initial: grid_n must be >= 1");
  Vector u = Vector::Zero(static_cast<Index>(grid_n) * grid_n);
  for (const auto& b : bumps) {
    require(b.cx >= 0.0 && b.cx <= grid_n - 1 && b.cy >= 0.0 && b.cy <= grid_n - 1,
            "gaussian bump center lies outside the grid");
    require(b.width > 0.0, "gaussian bump width must be > 0");
    const double denom = 2.0 * b.width * b.width;
    for (int c = 0; c < grid_n; ++c)
      for (int r = 0; r < grid_n; ++r) {
        const double dr = r - b.cx;
        const double dc = c - b.cy;
        u[grid_index(r, c, grid_n)] += b.amplitude * std::exp(-(dr * dr + dc * dc) / denom);
      }
  }
  return u;
}

}  // namespace gradkf
