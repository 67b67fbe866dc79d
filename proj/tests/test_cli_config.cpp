#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "rankflux/config.hpp"

using namespace rankflux;
using nlohmann::json;

TEST_CASE("defaults survive an empty config") {
  auto c = parse_config(json::object());
  CHECK(c.coefficients == "constant");
  CHECK(c.initial_law == "normal");
  CHECK(c.horizon == 1.0);
  CHECK(c.seed == 20260823ull);
  CHECK(c.n_list == std::vector<std::size_t>{50, 100, 200, 400, 800});
  CHECK(c.clt_n == 2000);
  CHECK(c.wass_p == 2.0);
}

TEST_CASE("overrides are honored and validated") {
  json j = {{"coefficients", "linear"},
            {"horizon", 0.5},
            {"seed", 42},
            {"n_list", {10, 20}},
            {"chaos_p", 1.5}};
  auto c = parse_config(j);
  CHECK(c.coefficients == "linear");
  CHECK(c.horizon == 0.5);
  CHECK(c.seed == 42);
  CHECK(c.n_list == std::vector<std::size_t>{10, 20});
  CHECK(c.chaos_p == 1.5);

  CHECK_THROWS_MATCHES(parse_config(json{{"horizon", "fast"}}), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("horizon")));
  CHECK_THROWS_AS(parse_config(json{{"horizon", -1.0}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"chaos_p", 0.5}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"n_list", json::array()}}), ConfigError);
  CHECK_THROWS_AS(parse_config(json{{"n_list", {"a", "b"}}}), ConfigError);
}

TEST_CASE("config hash is stable under key order and omitted defaults") {
  auto a = parse_config(json{{"horizon", 1.0}, {"seed", 20260823}});
  auto b = parse_config(json::object());
  auto c = parse_config(json{{"seed", 20260823}, {"horizon", 1.0}});
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) == config_hash(c));

  auto d = parse_config(json{{"seed", 43}});
  CHECK(config_hash(a) != config_hash(d));
  auto e = parse_config(json{{"dx", 0.1}});
  CHECK(config_hash(a) != config_hash(e));
}

TEST_CASE("config files load with actionable errors") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "rankflux-config-test";
  fs::create_directories(dir);

  fs::path good = dir / "good.json";
  std::ofstream(good) << R"({"coefficients": "affine:0.2,1.0", "horizon": 0.25})";
  auto c = load_config(good.string());
  CHECK(c.coefficients == "affine:0.2,1.0");
  CHECK(c.horizon == 0.25);

  fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{not json";
  CHECK_THROWS_MATCHES(load_config(bad.string()), ConfigError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("parse")));
  CHECK_THROWS_AS(load_config((dir / "absent.json").string()), ConfigError);
}

TEST_CASE("problem resolution fills grids and coefficients") {
  auto c = parse_config(json{{"coefficients", "constant"}, {"horizon", 1.0}});
  auto p = resolve_problem(c);
  CHECK(p.coeffs.b(0.3) == 0.0);
  CHECK(p.coeffs.sigma(0.3) == 1.0);
  CHECK(p.x_min == Catch::Approx(-13.0));
  CHECK(p.x_max == Catch::Approx(13.0));
  CHECK(p.dx == Catch::Approx(26.0 / 400.0));
  CHECK(p.dt <= cfl_dt_max(p.coeffs, p.dx));
  CHECK(p.horizon == 1.0);
}

TEST_CASE("law specs with parameters resolve") {
  auto c = parse_config(json{{"initial_law", "normal:1,2"}});
  auto p = resolve_problem(c);
  CHECK(p.law.cdf(1.0) == Catch::Approx(0.5));
  CHECK(p.law.quantile(0.5) == Catch::Approx(1.0).margin(1e-12));

  auto bad = parse_config(json{{"initial_law", "cauchy"}});
  CHECK_THROWS_AS(resolve_problem(bad), std::invalid_argument);
}

TEST_CASE("configured dt above the stability bound is rejected with advice") {
  auto c = parse_config(json{{"dx", 0.05}, {"dt", 0.5}});
  CHECK_THROWS_MATCHES(resolve_problem(c), CflError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("suggested")));
}
