// Batch front end: solve -> simulate -> analyze pipelines over one config.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rankflux/config.hpp"
#include "rankflux/experiments.hpp"
#include "rankflux/mild_spde.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rankflux;

namespace {

struct RunContext {
  ExperimentConfig cfg;
  Problem prob;
  std::string hash;
  fs::path out_root, cache_dir;

  fs::path subdir(const std::string& name) const {
    fs::path d = out_root / hash / name;
    fs::create_directories(d);
    return d;
  }

  std::string provenance() const {
    return std::string("rankflux ") + kVersion + " config=" + hash +
           " seed=" + std::to_string(cfg.seed);
  }

  json artifact_header() const {
    json j;
    j["tool_version"] = kVersion;
    j["config_hash"] = hash;
    j["seed"] = cfg.seed;
    return j;
  }
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  os << j.dump(2) << "\n";
}

std::ofstream open_csv(const fs::path& path, const RunContext& ctx,
                       const std::string& header) {
  std::ofstream os(path);
  os << "# " << ctx.provenance() << "\n" << header << "\n";
  return os;
}

// Hydrodynamic limit grid, resolved through the on-disk cache.
SolutionGrid get_grid(const RunContext& ctx) {
  const Problem& p = ctx.prob;
  std::uint64_t key = fnv1a(ctx.prob.coeffs.name);
  key = fnv1a(ctx.prob.law.name, key);
  double desc[5] = {p.x_min, p.x_max, p.dx, p.dt, p.horizon};
  key = fnv1a(desc, sizeof(desc), key);
  fs::path path = ctx.cache_dir / ("grid_" + hash_hex(key) + ".bin");
  if (fs::exists(path)) {
    std::cerr << "cache: reused " << path.filename().string() << "\n";
    return SolutionGrid::read_binary(path.string());
  }
  SolutionGrid g =
      solve_pme(p.law, p.coeffs, p.anti, p.x_min, p.x_max, p.horizon, p.dx, p.dt);
  g.write_binary(path.string());
  std::cerr << "cache: wrote " << path.filename().string() << "\n";
  return g;
}

// Source/target grids for the transition-kernel cache: uniform over the bulk
// of the initial mass, padded for drift transport and diffusive spread.
struct KernelLayout {
  std::vector<double> s_nodes, y_nodes, t_nodes, x_nodes;
};

KernelLayout kernel_layout(const RunContext& ctx) {
  const Problem& p = ctx.prob;
  double pad = p.coeffs.sup_abs_b() * p.horizon +
               3.0 * p.coeffs.sup_sigma() * std::sqrt(p.horizon);
  double lo = p.law.quantile(1e-3) - pad;
  double hi = p.law.quantile(1.0 - 1e-3) + pad;
  KernelLayout kl;
  std::size_t ns = ctx.cfg.kernel_sources_s, ny = ctx.cfg.kernel_sources_y;
  std::size_t nt = ctx.cfg.kernel_targets_t;
  for (std::size_t j = 0; j < ns; ++j)
    kl.s_nodes.push_back(p.horizon * static_cast<double>(j) / static_cast<double>(ns));
  for (std::size_t j = 0; j < ny; ++j)
    kl.y_nodes.push_back(lo + (hi - lo) * static_cast<double>(j) /
                                  static_cast<double>(ny - 1));
  for (std::size_t k = 0; k < nt; ++k)
    kl.t_nodes.push_back(p.horizon * static_cast<double>(k) /
                         static_cast<double>(nt - 1));
  kl.x_nodes = kl.y_nodes;
  return kl;
}

KernelCache get_kernel_cache(const RunContext& ctx, const SolutionGrid& grid) {
  KernelLayout kl = kernel_layout(ctx);
  std::uint64_t key = grid.content_hash();
  key = fnv1a(kl.s_nodes, key);
  key = fnv1a(kl.y_nodes, key);
  key = fnv1a(kl.t_nodes, key);
  fs::path path = ctx.cache_dir / ("kernel_" + hash_hex(key) + ".bin");
  if (fs::exists(path)) {
    KernelCache c = KernelCache::read_binary(path.string());
    if (c.key == key) {
      std::cerr << "cache: reused " << path.filename().string() << "\n";
      return c;
    }
  }
  double mw = ctx.cfg.mollifier_width > 0.0 ? ctx.cfg.mollifier_width : 2.0 * grid.dx;
  KernelCache c = build_kernel_cache(grid, ctx.prob.coeffs, kl.s_nodes, kl.y_nodes,
                                     kl.t_nodes, kl.x_nodes, mw, ctx.cfg.threads);
  c.key = key;
  c.write_binary(path.string());
  std::cerr << "cache: wrote " << path.filename().string() << "\n";
  return c;
}

// Probe observables used by clt: bumps placed by quantiles of the law.
std::vector<ObservableSpec> default_observables(const RunContext& ctx) {
  const InitialLaw& law = ctx.prob.law;
  double hw = 0.5 * (law.quantile(0.84) - law.quantile(0.16));
  double t_mid = 0.5 * ctx.prob.horizon;
  std::vector<ObservableSpec> specs;
  specs.push_back({smooth_bump_1d(law.quantile(0.5), hw), ObservableSpec::Kind::Gn, 0.0});
  specs.push_back({smooth_bump_1d(law.quantile(0.5), hw), ObservableSpec::Kind::Gn, t_mid});
  specs.push_back({smooth_bump_1d(law.quantile(0.8), hw), ObservableSpec::Kind::Gn, t_mid});
  return specs;
}

int run_solve_pme(const RunContext& ctx) {
  SolutionGrid g = get_grid(ctx);
  fs::path dir = ctx.subdir("solve-pme");
  {
    std::ofstream os(dir / "solution.csv");
    g.write_csv(os, ctx.provenance());
  }
  g.write_binary((dir / "solution.bin").string());
  json j = ctx.artifact_header();
  j["nx"] = g.nx;
  j["nt"] = g.nt;
  j["dx"] = g.dx;
  j["dt"] = g.dt;
  j["x_min"] = g.x_min;
  j["sup_Rx"] = g.sup_Rx();
  j["content_hash"] = hash_hex(g.content_hash());
  write_json(dir / "summary.json", j);
  return 0;
}

int run_kernel(const RunContext& ctx) {
  SolutionGrid g = get_grid(ctx);
  KernelCache cache = get_kernel_cache(ctx, g);
  fs::path dir = ctx.subdir("kernel");

  double y0 = ctx.prob.law.quantile(0.5);
  double mw = cache.mollifier_width;
  KernelSlice slice = kernel_forward(g, ctx.prob.coeffs, 0.0, y0, mw, ctx.prob.horizon);
  GaussianBoundFit fit = check_gaussian_bounds(slice, ctx.prob.horizon);
  double ck = chapman_kolmogorov_residual(g, ctx.prob.coeffs, 0.0, y0,
                                          0.5 * ctx.prob.horizon, ctx.prob.horizon, mw);

  // transport identity: density propagated by the kernel reproduces R_x
  double dy = cache.y_nodes[1] - cache.y_nodes[0];
  std::size_t tk = cache.t_nodes.size() - 1;
  double t_last = cache.t_nodes[tk];
  double transport_sup = 0.0;
  for (std::size_t xl = 0; xl < cache.x_nodes.size(); ++xl) {
    double lhs = 0.0;
    for (std::size_t yj = 0; yj < cache.y_nodes.size(); ++yj)
      lhs += g.interp_Rx(0.0, cache.y_nodes[yj]) *
             cache_p(cache, g, ctx.prob.coeffs, 0, yj, tk, xl) * dy;
    double rhs = g.interp_Rx(t_last, cache.x_nodes[xl]);
    transport_sup = std::max(transport_sup, std::abs(lhs - rhs));
  }

  {
    auto os = open_csv(dir / "slice.csv", ctx, "t,x,p");
    char buf[96];
    for (std::size_t ti = 0; ti < slice.t_nodes.size(); ti += 16)
      for (std::size_t i = 0; i < slice.nx; ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", slice.t_nodes[ti],
                      slice.x(i), slice.at(ti, i));
        os << buf;
      }
  }
  json j = ctx.artifact_header();
  j["source"] = {{"s", 0.0}, {"y", y0}};
  j["mollifier_width"] = mw;
  j["leak"] = slice.leak;
  j["gaussian_bounds"] = {
      {"C_lower", fit.C_lower}, {"C_upper", fit.C_upper}, {"pass", fit.pass}};
  j["chapman_kolmogorov_residual"] = ck;
  j["transport_identity_sup_error"] = transport_sup;
  write_json(dir / "kernel_summary.json", j);
  return 0;
}

int run_simulate(const RunContext& ctx) {
  SolutionGrid g = get_grid(ctx);
  std::size_t n = ctx.cfg.n_list.back();
  double dt = ctx.cfg.particle_dt;
  std::size_t steps = static_cast<std::size_t>(std::llround(ctx.prob.horizon / dt));
  std::size_t every = std::max<std::size_t>(1, steps / 20);
  RngStream stream(ctx.cfg.seed, "simulate");
  CoupledPaths paths =
      simulate_coupled(ctx.prob.law, ctx.prob.coeffs, g, n, ctx.prob.horizon, dt, stream,
                       every, false);
  fs::path dir = ctx.subdir("simulate");
  {
    auto os = open_csv(dir / "trajectories.csv", ctx, "t,i,x,xbar");
    char buf[96];
    std::size_t shown = std::min<std::size_t>(n, 32);
    for (std::size_t k = 0; k < paths.times.size(); ++k)
      for (std::size_t i = 0; i < shown; ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%zu,%.17g,%.17g\n", paths.times[k], i,
                      paths.interacting[k][i], paths.surrogate[k][i]);
        os << buf;
      }
  }
  // terminal-time coupling error in the p-norms used downstream
  double sup2 = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    sup2 += std::pow(paths.interacting.back()[i] - paths.surrogate.back()[i], 2.0);
  json j = ctx.artifact_header();
  j["n"] = n;
  j["dt"] = dt;
  j["snapshots"] = paths.times.size();
  j["increments_checksum"] = hash_hex(paths.increments_checksum);
  j["terminal_mean_square_gap"] = sup2 / static_cast<double>(n);
  write_json(dir / "summary.json", j);
  return 0;
}

int run_chaos(const RunContext& ctx) {
  SolutionGrid g = get_grid(ctx);
  ChaosRateResult res =
      chaos_rate(ctx.prob.law, ctx.prob.coeffs, g, ctx.cfg.chaos_p, ctx.cfg.n_list,
                 ctx.prob.horizon, ctx.cfg.particle_dt, ctx.cfg.replications,
                 ctx.cfg.seed, ctx.cfg.threads);
  fs::path dir = ctx.subdir("chaos");
  {
    auto os = open_csv(dir / "chaos.csv", ctx, "n,mean_sup_particle,mean_sup_wass");
    char buf[96];
    for (std::size_t i = 0; i < res.n_list.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", res.n_list[i],
                    res.mean_particle[i], res.mean_wass[i]);
      os << buf;
    }
  }
  json j = ctx.artifact_header();
  j["p"] = res.p;
  j["T"] = res.T;
  j["dt"] = res.dt;
  j["replications"] = res.replications;
  j["n_list"] = res.n_list;
  j["mean_particle"] = res.mean_particle;
  j["mean_wass"] = res.mean_wass;
  j["slope_particle"] = res.slope_particle;
  j["slope_wass"] = res.slope_wass;
  j["slope_particle_ci"] = {res.slope_particle_lo, res.slope_particle_hi};
  j["pathwise_ok"] = res.pathwise_ok;
  write_json(dir / "report.json", j);
  return 0;
}

int run_clt(const RunContext& ctx) {
  SolutionGrid g = get_grid(ctx);
  KernelCache cache = get_kernel_cache(ctx, g);
  std::vector<ObservableSpec> specs = default_observables(ctx);
  CltResult res =
      clt_experiment(ctx.prob.law, ctx.prob.coeffs, g, cache, specs, ctx.cfg.clt_n,
                     ctx.cfg.clt_replications, ctx.cfg.particle_dt, ctx.cfg.seed,
                     ctx.cfg.threads);
  fs::path dir = ctx.subdir("clt");
  {
    auto os = open_csv(dir / "samples.csv", ctx, "spec,rep,value");
    char buf[64];
    for (std::size_t sp = 0; sp < res.samples.size(); ++sp)
      for (std::size_t r = 0; r < res.samples[sp].size(); ++r) {
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%.17g\n", sp, r, res.samples[sp][r]);
        os << buf;
      }
  }
  json j = ctx.artifact_header();
  j["n"] = res.n;
  j["replications"] = res.replications;
  json per = json::array();
  for (const auto& st : res.per_spec) {
    per.push_back({{"time", st.time},
                   {"mean", st.moments.mean},
                   {"variance", st.moments.var},
                   {"skewness", st.moments.skewness},
                   {"excess_kurtosis", st.moments.excess_kurtosis},
                   {"exact_variance", st.exact_variance},
                   {"variance_ratio", st.variance_ratio},
                   {"normality_pvalue", st.normality_pvalue}});
  }
  j["observables"] = per;
  j["empirical_correlation_01"] = res.empirical_correlation_01;
  j["exact_correlation_01"] = res.exact_correlation_01;
  write_json(dir / "report.json", j);
  return 0;
}

int run_identity(const RunContext& ctx) {
  SolutionGrid g = get_grid(ctx);
  double t = std::min(0.5, ctx.prob.horizon);
  TestFunction2D gamma =
      separable_bump(ctx.prob.law.quantile(0.5),
                     ctx.prob.law.quantile(0.9) - ctx.prob.law.quantile(0.1), 1.0, 1.0,
                     0.5);
  std::vector<double> dt_list = {1e-2, 5e-3, 2.5e-3};
  std::vector<double> residuals = identity_refinement_study(
      ctx.prob.law, ctx.prob.coeffs, ctx.prob.anti, g, gamma, t, 200, dt_list,
      ctx.cfg.seed);
  fs::path dir = ctx.subdir("identity");
  json j = ctx.artifact_header();
  j["n"] = 200;
  j["t"] = t;
  j["dt_list"] = dt_list;
  j["residuals"] = residuals;
  bool dec = true;
  for (std::size_t i = 1; i < residuals.size(); ++i)
    if (residuals[i] > residuals[i - 1] * 1.1) dec = false;
  j["decreasing"] = dec;
  write_json(dir / "report.json", j);
  return 0;
}

int run_wasserstein_rate(const RunContext& ctx) {
  RngStream stream(ctx.cfg.seed, "wasserstein-rate");
  UniformRateResult res = uniform_rate_experiment(ctx.cfg.wass_p, ctx.cfg.wass_n_list,
                                                  ctx.cfg.wass_replications, stream);
  fs::path dir = ctx.subdir("wasserstein-rate");
  {
    auto os = open_csv(dir / "rate.csv", ctx, "n,p,estimate,stderr,slope");
    char buf[128];
    for (const auto& row : res.rows) {
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", row.n, res.p,
                    row.estimate, row.stderr_pp, res.slope);
      os << buf;
    }
  }
  json j = ctx.artifact_header();
  j["p"] = res.p;
  j["slope"] = res.slope;
  json rows = json::array();
  for (const auto& row : res.rows)
    rows.push_back({{"n", row.n}, {"estimate", row.estimate}, {"stderr", row.stderr_pp}});
  j["rows"] = rows;
  write_json(dir / "report.json", j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rank-based interacting diffusion laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  int threads = -1;
  std::int64_t seed_override = -1;

  const std::vector<std::string> names = {"solve-pme", "kernel",   "simulate",
                                          "chaos",     "clt",      "identity",
                                          "wasserstein-rate", "all"};
  for (const auto& name : names) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "artifact root directory");
    sub->add_option("--threads", threads, "worker thread count");
    sub->add_option("--seed", seed_override, "master seed override");
  }

  CLI11_PARSE(app, argc, argv);
  std::string sub = app.get_subcommands().at(0)->get_name();

  try {
    RunContext ctx;
    ctx.cfg = load_config(config_path);
    if (seed_override >= 0) ctx.cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (threads >= 0) ctx.cfg.threads = threads;
    ctx.prob = resolve_problem(ctx.cfg);
    ctx.hash = config_hash(ctx.cfg);
    ctx.out_root = out_dir;
    ctx.cache_dir = ctx.out_root / ctx.hash / "cache";
    fs::create_directories(ctx.cache_dir);

    if (sub == "solve-pme") return run_solve_pme(ctx);
    if (sub == "kernel") return run_kernel(ctx);
    if (sub == "simulate") return run_simulate(ctx);
    if (sub == "chaos") return run_chaos(ctx);
    if (sub == "clt") return run_clt(ctx);
    if (sub == "identity") return run_identity(ctx);
    if (sub == "wasserstein-rate") return run_wasserstein_rate(ctx);
    int rc = 0;
    rc |= run_solve_pme(ctx);
    rc |= run_kernel(ctx);
    rc |= run_simulate(ctx);
    rc |= run_chaos(ctx);
    rc |= run_clt(ctx);
    rc |= run_identity(ctx);
    rc |= run_wasserstein_rate(ctx);
    return rc;
  } catch (const std::exception& e) {
    std::cerr << "rankflux " << sub << ": " << e.what() << "\n";
    return 1;
  }
}
