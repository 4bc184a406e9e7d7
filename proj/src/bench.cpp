#include "gradkf/bench.hpp"

#include <algorithm>
#include <chrono>
#include <string>

#include "gradkf/analysis.hpp"
#include "gradkf/csv.hpp"
#include "gradkf/errors.hpp"
#include "gradkf/filters.hpp"
#include "gradkf/rng.hpp"
#include "gradkf/scenario.hpp"

namespace gradkf {

LinearSystem bench_system(int n) {
  if (n < 2) throw ConfigError("bench: dimension must be >= 2");
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < n; ++i) {
    t.emplace_back(i, i, 0.9);
    if (i + 1 < n) {
      t.emplace_back(i, i + 1, 0.04);
      t.emplace_back(i + 1, i, 0.04);
    }
  }
  SparseMatrix A(n, n);
  A.setFromTriplets(t.begin(), t.end());
  SparseMatrix I(n, n);
  I.setIdentity();
  const SelectorOutputMap C(n, Vector::Ones(n / 2));
  return LinearSystem(A, Matrix::Constant(n, 1, 0.01), C.to_sparse(), 0.01 * Matrix::Identity(n, n),
                      Vector::Ones(n / 2), I);
}

namespace {

using Clock = std::chrono::steady_clock;

/// Runs `step` until at least `min_seconds` have elapsed; returns seconds per call.
template <class Step>
double time_per_step(Step&& step, double min_seconds) {
  long calls = 0;
  const auto start = Clock::now();
  double elapsed = 0.0;
  do {
    step();
    ++calls;
    elapsed = std::chrono::duration<double>(Clock::now() - start).count();
  } while (elapsed < min_seconds);
  return elapsed / static_cast<double>(calls);
}

}  // namespace

BenchResult bench_step_cost(const std::vector<int>& dims, int trials) {
  if (trials < 1) throw ConfigError("bench: trials must be >= 1");
  if (dims.empty()) throw ConfigError("bench: no dimensions given");
  if (!std::is_sorted(dims.begin(), dims.end())) throw ConfigError("bench: dimensions must be ascending");

  BenchResult res;
  res.dims = dims;
  for (int n : dims) {
    const LinearSystem sys = bench_system(n);
    const SimTrace trace = simulate(sys, Vector::Zero(n), {}, 64, 7, 1.0);
    const Vector u = Vector::Zero(1);

    KalmanState kf{Vector::Zero(n), Matrix::Identity(n, n), 0, {}};
    const GradientKalmanFilter filter(sys, GradientOptions{});
    GradCovState gd = initial_grad_cov_state(Vector::Zero(n), Vector::Ones(n));

    std::vector<double> kf_times;
    std::vector<double> gd_times;
    std::size_t k = 0;
    for (int t = 0; t < trials; ++t) {
      kf_times.push_back(time_per_step(
          [&] { kf = kf_step(sys, kf, trace.measurements[k++ % trace.measurements.size()], u); }, 0.005));
      gd_times.push_back(time_per_step(
          [&] { gd = filter.step(gd, trace.measurements[k++ % trace.measurements.size()], u); }, 0.005));
    }
    res.standard_seconds.push_back(median_of(kf_times));
    res.gradient_seconds.push_back(median_of(gd_times));
  }
  const std::vector<double> xs(dims.begin(), dims.end());
  res.standard_exponent = fit_growth_exponent(xs, res.standard_seconds);
  res.gradient_exponent = fit_growth_exponent(xs, res.gradient_seconds);
  return res;
}

std::string BenchResult::csv() const {
  std::string out = "kind,n,filter,value\n";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    out += "timing," + std::to_string(dims[i]) + ",standard," + format_double(standard_seconds[i]) + "\n";
    out += "timing," + std::to_string(dims[i]) + ",gradient," + format_double(gradient_seconds[i]) + "\n";
  }
  out += "exponent,,standard," + format_double(standard_exponent) + "\n";
  out += "exponent,,gradient," + format_double(gradient_exponent) + "\n";
  return out;
}

}  // namespace gradkf
