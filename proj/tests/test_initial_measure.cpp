#include <catch2/catch_amalgamated.hpp>

#include "rankflux/initial_measure.hpp"

using namespace rankflux;

TEST_CASE("normal quantile inverts the normal cdf") {
  for (double p : {1e-8, 1e-4, 0.02, 0.3, 0.5, 0.71, 0.999, 1.0 - 1e-9}) {
    CHECK(normal_cdf(normal_quantile(p)) == Catch::Approx(p).margin(1e-12));
  }
  CHECK(normal_quantile(0.5) == Catch::Approx(0.0).margin(1e-14));
  CHECK_THROWS_AS(normal_quantile(0.0), std::domain_error);
  CHECK_THROWS_AS(normal_quantile(1.0), std::domain_error);
  CHECK_THROWS_AS(normal_quantile(-0.2), std::domain_error);
}

TEST_CASE("normal law basics") {
  auto law = InitialLaw::normal(2.0, 0.5);
  CHECK(law.cdf(2.0) == Catch::Approx(0.5).margin(1e-15));
  CHECK(law.quantile(0.5) == Catch::Approx(2.0).margin(1e-13));
  // density integrates to 1
  double mass = 0.0;
  int cells = 4000;
  double lo = -2.0, hi = 6.0, h = (hi - lo) / cells;
  for (int i = 0; i < cells; ++i) {
    double a = lo + i * h;
    mass += h / 6.0 *
            (law.density(a) + 4.0 * law.density(a + 0.5 * h) + law.density(a + h));
  }
  CHECK(mass == Catch::Approx(1.0).margin(1e-10));
  CHECK_THROWS_AS(InitialLaw::normal(0.0, -1.0), std::invalid_argument);
}

TEST_CASE("logistic quantile is the exact inverse") {
  auto law = InitialLaw::logistic(1.0, 0.3);
  for (double u : {0.01, 0.2, 0.5, 0.9, 0.999})
    CHECK(law.cdf(law.quantile(u)) == Catch::Approx(u).margin(1e-13));
  CHECK_THROWS_AS(law.quantile(0.0), std::domain_error);
}

TEST_CASE("uniform law is the identity pair") {
  auto law = InitialLaw::uniform01();
  CHECK(law.cdf(0.3) == 0.3);
  CHECK(law.quantile(0.3) == 0.3);
  CHECK(law.cdf(-1.0) == 0.0);
  CHECK(law.cdf(2.0) == 1.0);
}

TEST_CASE("truncated normal is confined and normalized") {
  auto law = InitialLaw::truncated_normal(0.0, 1.0, -1.0, 2.0);
  CHECK(law.cdf(-1.0) == 0.0);
  CHECK(law.cdf(2.0) == 1.0);
  CHECK(law.density(-1.5) == 0.0);
  CHECK(law.density(2.5) == 0.0);
  double q = law.quantile(0.5);
  CHECK(q > -1.0);
  CHECK(q < 2.0);
  CHECK(law.cdf(q) == Catch::Approx(0.5).margin(1e-12));
  CHECK_THROWS_AS(InitialLaw::truncated_normal(0, 1, 2, 1), std::invalid_argument);
}

TEST_CASE("iid sampling is deterministic and matches moments") {
  auto law = InitialLaw::normal();
  RngStream s1(77, "sample"), s2(77, "sample"), s3(78, "sample");
  auto a = sample_iid(law, 2000, s1);
  auto b = sample_iid(law, 2000, s2);
  auto c = sample_iid(law, 2000, s3);
  CHECK(a == b);
  CHECK(a != c);

  RngStream big(1234, "sample-moments");
  auto xs = sample_iid(law, 20000, big);
  double mean = 0, var = 0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= xs.size();
  CHECK(mean == Catch::Approx(0.0).margin(0.03));
  CHECK(var == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("bridge sampling honors the pinning and the grid contract") {
  auto law = InitialLaw::uniform01();
  RngStream stream(5, "bridge");
  SECTION("strictly increasing grid required") {
    CHECK_THROWS_AS(sample_bridge(law, {0.1, 0.1, 0.2}, stream), std::invalid_argument);
    CHECK_THROWS_AS(sample_bridge(law, {0.3, 0.2}, stream), std::invalid_argument);
  }
  SECTION("pinned to zero outside the mass") {
    auto path = sample_bridge(law, {-2.0, 0.5, 3.0}, stream);
    CHECK(path.values.front() == 0.0);  // F = 0
    CHECK(path.values.back() == 0.0);   // F = 1
  }
}

TEST_CASE("bridge covariance matches min(u,v) - uv") {
  auto law = InitialLaw::uniform01();
  std::vector<double> grid = {0.2, 0.5, 0.7};
  const int reps = 20000;
  std::vector<std::array<double, 3>> draws(reps);
  RngStream stream(99, "bridge-cov");
  for (int r = 0; r < reps; ++r) {
    auto path = sample_bridge(law, grid, stream);
    for (int i = 0; i < 3; ++i) draws[r][i] = path.values[i];
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double cov = 0, mi = 0, mj = 0;
      for (const auto& d : draws) {
        mi += d[i];
        mj += d[j];
      }
      mi /= reps;
      mj /= reps;
      for (const auto& d : draws) cov += (d[i] - mi) * (d[j] - mj);
      cov /= reps;
      double expect = std::min(grid[i], grid[j]) - grid[i] * grid[j];
      CHECK(cov == Catch::Approx(expect).margin(0.01));
    }
}

TEST_CASE("law spec parsing") {
  CHECK(parse_initial_law("uniform", {}).name == "uniform");
  CHECK(parse_initial_law("normal", {1.0, 2.0}).cdf(1.0) == Catch::Approx(0.5));
  CHECK(parse_initial_law("logistic", {}).name == "logistic");
  CHECK(parse_initial_law("truncated-normal", {0, 1, -1, 1}).cdf(-1.0) == 0.0);
  CHECK_THROWS_AS(parse_initial_law("cauchy", {}), std::invalid_argument);
  CHECK_THROWS_AS(parse_initial_law("truncated-normal", {0, 1}), std::invalid_argument);
}
