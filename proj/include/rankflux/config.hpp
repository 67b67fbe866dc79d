#ifndef RANKFLUX_CONFIG_HPP
#define RANKFLUX_CONFIG_HPP

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rankflux/coefficients.hpp"
#include "rankflux/common.hpp"
#include "rankflux/initial_measure.hpp"
#include "rankflux/pme.hpp"

namespace rankflux {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One experiment configuration as loaded from JSON. Every field has a default
// so partial configs are usable; the hash covers the effective values.
struct ExperimentConfig {
  std::string coefficients = "constant";
  std::string initial_law = "normal";
  double horizon = 1.0;
  double dx = 0.0;  // 0: choose from the horizon
  double dt = 0.0;  // 0: 0.9 * CFL bound
  std::uint64_t seed = 20260823ull;
  int threads = 0;

  // particle experiments
  std::vector<std::size_t> n_list = {50, 100, 200, 400, 800};
  std::size_t replications = 200;
  double particle_dt = 5e-3;
  double chaos_p = 2.0;

  // CLT
  std::size_t clt_n = 2000;
  std::size_t clt_replications = 2000;

  // kernel cache
  double mollifier_width = 0.0;  // 0: 2 dx
  std::size_t kernel_sources_s = 32;
  std::size_t kernel_sources_y = 48;
  std::size_t kernel_targets_t = 33;

  // Wasserstein rate
  std::vector<std::size_t> wass_n_list = {64, 128, 256, 512, 1024, 2048};
  std::size_t wass_replications = 400;
  double wass_p = 2.0;

  nlohmann::json raw;
};

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  c.raw = j;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) {
      try {
        field = j.at(key).get<std::decay_t<decltype(field)>>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config field '") + key + "': " + e.what());
      }
    }
  };
  get("coefficients", c.coefficients);
  get("initial_law", c.initial_law);
  get("horizon", c.horizon);
  get("dx", c.dx);
  get("dt", c.dt);
  get("seed", c.seed);
  get("threads", c.threads);
  get("n_list", c.n_list);
  get("replications", c.replications);
  get("particle_dt", c.particle_dt);
  get("chaos_p", c.chaos_p);
  get("clt_n", c.clt_n);
  get("clt_replications", c.clt_replications);
  get("mollifier_width", c.mollifier_width);
  get("kernel_sources_s", c.kernel_sources_s);
  get("kernel_sources_y", c.kernel_sources_y);
  get("kernel_targets_t", c.kernel_targets_t);
  get("wass_n_list", c.wass_n_list);
  get("wass_replications", c.wass_replications);
  get("wass_p", c.wass_p);
  if (!(c.horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (c.chaos_p < 1.0 || c.wass_p < 1.0) throw ConfigError("order p must be >= 1");
  if (c.n_list.empty() || c.wass_n_list.empty()) throw ConfigError("empty n list");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

// Stable hash over the effective configuration. Keys are emitted in sorted
// order by the serializer, so equal configs hash equally regardless of input
// key order or omitted defaults.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j;
  j["coefficients"] = c.coefficients;
  j["initial_law"] = c.initial_law;
  j["horizon"] = c.horizon;
  j["dx"] = c.dx;
  j["dt"] = c.dt;
  j["seed"] = c.seed;
  j["n_list"] = c.n_list;
  j["replications"] = c.replications;
  j["particle_dt"] = c.particle_dt;
  j["chaos_p"] = c.chaos_p;
  j["clt_n"] = c.clt_n;
  j["clt_replications"] = c.clt_replications;
  j["mollifier_width"] = c.mollifier_width;
  j["kernel_sources_s"] = c.kernel_sources_s;
  j["kernel_sources_y"] = c.kernel_sources_y;
  j["kernel_targets_t"] = c.kernel_targets_t;
  j["wass_n_list"] = c.wass_n_list;
  j["wass_replications"] = c.wass_replications;
  j["wass_p"] = c.wass_p;
  return hash_hex(fnv1a(j.dump()));
}

// Resolved numerical problem shared by the subcommands.
struct Problem {
  CoefficientPair coeffs;
  AntiderivativePair anti;
  InitialLaw law;
  double x_min = 0.0, x_max = 0.0;
  double dx = 0.0, dt = 0.0;
  double horizon = 0.0;
};

inline Problem resolve_problem(const ExperimentConfig& c) {
  Problem p;
  p.coeffs = parse_coefficient_name(c.coefficients);
  p.anti = antiderivatives(p.coeffs);
  // law spec is "name" or "name:p1,p2,..."
  std::string law_name = c.initial_law;
  std::vector<double> law_params;
  if (auto colon = law_name.find(':'); colon != std::string::npos) {
    std::string rest = law_name.substr(colon + 1);
    law_name = law_name.substr(0, colon);
    std::size_t pos = 0;
    while (pos < rest.size()) {
      std::size_t comma = rest.find(',', pos);
      if (comma == std::string::npos) comma = rest.size();
      law_params.push_back(std::stod(rest.substr(pos, comma - pos)));
      pos = comma + 1;
    }
  }
  p.law = parse_initial_law(law_name, law_params);
  p.horizon = c.horizon;
  auto [lo, hi] = padded_domain(p.law, p.coeffs, c.horizon);
  p.x_min = lo;
  p.x_max = hi;
  p.dx = c.dx > 0.0 ? c.dx : (hi - lo) / 400.0;
  double dt_max = cfl_dt_max(p.coeffs, p.dx);
  p.dt = c.dt > 0.0 ? c.dt : 0.9 * dt_max;
  if (p.dt > dt_max * (1.0 + 1e-12))
    throw CflError("configured dt = " + std::to_string(p.dt) +
                   " violates the CFL bound " + std::to_string(dt_max) +
                   "; suggested dt = " + std::to_string(0.95 * dt_max));
  return p;
}

}  // namespace rankflux

#endif  // RANKFLUX_CONFIG_HPP
