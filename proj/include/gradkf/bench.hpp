#pragma once

#include <string>
#include <vector>

#include "gradkf/model.hpp"

namespace gradkf {

struct BenchResult {
  std::vector<int> dims;
  std::vector<double> standard_seconds;  // median per-step wall time
  std::vector<double> gradient_seconds;
  double standard_exponent = 0.0;        // NaN when fewer than two dims
  double gradient_exponent = 0.0;

  /// `kind,n,filter,value` rows: one `timing` row per (n, filter), then one
  /// `exponent` row per filter with an empty n field.
  std::string csv() const;
};

/// Stable sparse test plant for timing: tridiagonal A, one input, unit R,
/// process noise 0.01 I, and a selector reading the first n/2 states.
LinearSystem bench_system(int n);

/// Median per-step wall time of the standard and accelerated adaptive
/// gradient filters on bench_system(n) for each n, plus fitted growth exponents.
BenchResult bench_step_cost(const std::vector<int>& dims, int trials);

}  // namespace gradkf
