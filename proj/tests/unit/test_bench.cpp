#include <doctest.h>

#include <cmath>

#include "gradkf/bench.hpp"
#include "gradkf/errors.hpp"

using namespace gradkf;

TEST_CASE("bench plant shape") {
  const auto sys = bench_system(40);
  CHECK(sys.n() == 40);
  CHECK(sys.p() == 20);
  REQUIRE(sys.selector().has_value());
  CHECK(sys.selector()->index(19) == 19);
}

TEST_CASE("bench input validation and single-dimension output") {
  CHECK_THROWS_AS(bench_step_cost({10, 20}, 0), ConfigError);
  CHECK_THROWS_AS(bench_step_cost({20, 10}, 1), ConfigError);
  const auto res = bench_step_cost({16}, 1);
  REQUIRE(res.standard_seconds.size() == 1);
  CHECK(res.standard_seconds[0] > 0.0);
  CHECK(std::isnan(res.standard_exponent));
  CHECK(res.csv().find("kind,n,filter,value\ntiming,16,standard,") == 0);
  CHECK(res.csv().find("exponent,,gradient,nan") != std::string::npos);
}
