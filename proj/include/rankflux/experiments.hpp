#ifndef RANKFLUX_EXPERIMENTS_HPP
#define RANKFLUX_EXPERIMENTS_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/kernel.hpp"
#include "rankflux/mild_spde.hpp"
#include "rankflux/particle.hpp"
#include "rankflux/test_function.hpp"
#include "rankflux/wasserstein.hpp"

namespace rankflux {

struct SampleMoments {
  double mean = 0, var = 0, skewness = 0, excess_kurtosis = 0;
  std::size_t count = 0;
};

inline SampleMoments sample_moments(const std::vector<double>& v) {
  SampleMoments m;
  m.count = v.size();
  if (v.empty()) return m;
  double n = static_cast<double>(v.size());
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double x : v) {
    double d = x - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  m.var = m2;
  if (m2 > 0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

// Jarque-Bera moment test; p-value from the chi-square(2) tail.
inline double jarque_bera_pvalue(const SampleMoments& m) {
  double n = static_cast<double>(m.count);
  double jb = n / 6.0 * (m.skewness * m.skewness +
                         0.25 * m.excess_kurtosis * m.excess_kurtosis);
  return std::exp(-0.5 * jb);
}

// ---------------------------------------------------------------------------
// propagation of chaos

struct ChaosRateResult {
  double p = 2.0, T = 1.0, dt = 0.0;
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> n_list;
  // per n, per replication
  std::vector<std::vector<double>> particle_stats;  // sup_t |X_1 - Xbar_1|^p
  std::vector<std::vector<double>> wass_stats;      // sup_t W_p(rho, rhobar)^p
  std::vector<double> mean_particle, mean_wass;
  double slope_particle = 0, slope_wass = 0;
  double slope_particle_lo = 0, slope_particle_hi = 0;  // bootstrap 95% CI
  bool pathwise_ok = true;  // W_p^p stat <= mean-over-particles stat, all reps
};

inline ChaosRateResult chaos_rate(const InitialLaw& law, const CoefficientPair& coeffs,
                                  const SolutionGrid& R, double p,
                                  const std::vector<std::size_t>& n_list, double T,
                                  double dt, std::size_t replications,
                                  std::uint64_t seed, int threads = 0) {
  ChaosRateResult res;
  res.p = p;
  res.T = T;
  res.dt = dt;
  res.replications = replications;
  res.seed = seed;
  res.n_list = n_list;
  res.particle_stats.assign(n_list.size(), std::vector<double>(replications, 0.0));
  res.wass_stats.assign(n_list.size(), std::vector<double>(replications, 0.0));
  std::vector<char> pathwise(n_list.size() * replications, 1);

  std::size_t steps = static_cast<std::size_t>(std::llround(T / dt));
  const double sdt = std::sqrt(dt);
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    std::size_t n = n_list[ni];
    parallel_for(
        replications,
        [&, ni, n](std::size_t rep) {
          RngStream stream(seed, "chaos", ni * 1000000ull + rep);
          ParticleEnsemble x, xbar;
          x.positions = sample_iid(law, n, stream);
          xbar = x;
          double sup_p1 = 0.0, sup_wpp = 0.0, sup_meanp = 0.0;
          std::vector<double> db(n), sx(n), sxb(n);
          for (std::size_t k = 0; k < steps; ++k) {
            for (auto& v : db) v = sdt * stream.normal();
            x = step_interacting(x, coeffs, dt, db);
            xbar = step_surrogate(xbar, coeffs, R, dt, db);
            double meanp = 0.0;
            for (std::size_t i = 0; i < n; ++i)
              meanp += std::pow(std::abs(x.positions[i] - xbar.positions[i]), p);
            meanp /= static_cast<double>(n);
            sx = x.positions;
            sxb = xbar.positions;
            std::sort(sx.begin(), sx.end());
            std::sort(sxb.begin(), sxb.end());
            double wpp = wp_sorted_pow(sx, sxb, p);
            sup_p1 = std::max(sup_p1, std::abs(x.positions[0] - xbar.positions[0]));
            sup_wpp = std::max(sup_wpp, wpp);
            sup_meanp = std::max(sup_meanp, meanp);
          }
          res.particle_stats[ni][rep] = std::pow(sup_p1, p);
          res.wass_stats[ni][rep] = sup_wpp;
          if (sup_wpp > sup_meanp * (1.0 + 1e-12) + 1e-300)
            pathwise[ni * replications + rep] = 0;
        },
        threads);
  }

  for (char ok : pathwise)
    if (!ok) res.pathwise_ok = false;

  std::vector<double> logn, logp, logw;
  bool degenerate = false;
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    auto mp = sample_moments(res.particle_stats[ni]);
    auto mw = sample_moments(res.wass_stats[ni]);
    res.mean_particle.push_back(mp.mean);
    res.mean_wass.push_back(mw.mean);
    if (!(mp.mean > 0.0) || !(mw.mean > 0.0)) degenerate = true;
    logn.push_back(std::log(static_cast<double>(n_list[ni])));
    logp.push_back(mp.mean > 0.0 ? std::log(mp.mean) : 0.0);
    logw.push_back(mw.mean > 0.0 ? std::log(mw.mean) : 0.0);
  }
  // identically-zero statistics (perfectly coupled systems) carry no rate
  res.slope_particle = degenerate ? 0.0 : fit_slope(logn, logp);
  res.slope_wass = degenerate ? 0.0 : fit_slope(logn, logw);
  if (degenerate) return res;

  // percentile bootstrap over replications, fixed stream
  RngStream boot(seed, "chaos-bootstrap");
  std::vector<double> slopes;
  for (int b = 0; b < 200; ++b) {
    std::vector<double> logpb;
    for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
      double s = 0;
      for (std::size_t r = 0; r < replications; ++r) {
        std::size_t j = static_cast<std::size_t>(boot.uniform() * replications);
        s += res.particle_stats[ni][std::min(j, replications - 1)];
      }
      logpb.push_back(std::log(s / replications));
    }
    slopes.push_back(fit_slope(logn, logpb));
  }
  std::sort(slopes.begin(), slopes.end());
  res.slope_particle_lo = slopes[4];
  res.slope_particle_hi = slopes[194];
  return res;
}

// ---------------------------------------------------------------------------
// fluctuation observables

struct ObservableSpec {
  TestFunction1D gamma;
  enum class Kind { Gn, Hn } kind = Kind::Gn;
  double time = 0.0;  // probe time for Gn, horizon for Hn
};

// sqrt(n) * int gamma (F_emp - R(t, .)) dx; the empirical part integrates
// exactly against the primitive of gamma.
inline double observable_gn(const TestFunction1D& gamma,
                            const std::vector<double>& positions,
                            const SolutionGrid& R, double t) {
  if (gamma.x_lo < R.x_min - 1e-9 || gamma.x_hi > R.x_max() + 1e-9)
    throw std::domain_error("observable_gn: gamma support outside R grid");
  const double n = static_cast<double>(positions.size());
  const double total = gamma.total_integral();
  double emp = 0.0;
  for (double xi : positions) emp += total - gamma.primitive(xi);
  emp /= n;
  // smooth part against the gridded R
  const int cells = 2048;
  double h = (gamma.x_hi - gamma.x_lo) / cells, smooth = 0.0;
  for (int i = 0; i < cells; ++i) {
    double a = gamma.x_lo + i * h;
    auto f = [&](double x) { return gamma.f(x) * R.interp_R(t, x); };
    smooth += h / 6.0 * (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h));
  }
  return std::sqrt(n) * (emp - smooth);
}

// time quadrature of the G_n integrand over snapshots up to the horizon
inline double observable_hn(const TestFunction1D& gamma, const CoupledPaths& paths,
                            const SolutionGrid& R, double horizon) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < paths.times.size(); ++k) {
    if (paths.times[k] > horizon + 1e-12) break;
    double dt_loc = std::min(paths.times[k + 1], horizon) - paths.times[k];
    if (dt_loc <= 0) break;
    acc += observable_gn(gamma, paths.interacting[k], R, paths.times[k]) * dt_loc;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// exact observable covariance through the kernel cache

namespace detail {

// g(s_i, y_j) = int gamma(x) p(s_i, y_j; t, x) dx on cache targets
inline std::vector<double> kernel_smoothed_gamma(const KernelCache& cache,
                                                 const SolutionGrid& R,
                                                 const CoefficientPair& coeffs,
                                                 const TestFunction1D& gamma,
                                                 std::size_t si, std::size_t tk) {
  double dx = cache.x_nodes.size() > 1 ? cache.x_nodes[1] - cache.x_nodes[0] : 0.0;
  std::vector<double> g(cache.y_nodes.size(), 0.0);
  for (std::size_t yj = 0; yj < cache.y_nodes.size(); ++yj) {
    double acc = 0.0;
    for (std::size_t xl = 0; xl < cache.x_nodes.size(); ++xl) {
      double gv = gamma.f(cache.x_nodes[xl]);
      if (gv == 0.0) continue;
      acc += gv * cache_p(cache, R, coeffs, si, yj, tk, xl);
    }
    g[yj] = acc * dx;
  }
  return g;
}

}  // namespace detail

// Exact covariance of two G_n-limit observables (gamma_a at t_a, gamma_b at
// t_b), factorized through the kernel-smoothed test functions.
inline double observable_covariance_exact(const KernelCache& cache, const SolutionGrid& R,
                                          const CoefficientPair& coeffs,
                                          const InitialLaw& law,
                                          const TestFunction1D& gamma_a, double t_a,
                                          const TestFunction1D& gamma_b, double t_b) {
  auto find_t = [&cache](double t) {
    for (std::size_t k = 0; k < cache.t_nodes.size(); ++k)
      if (std::abs(cache.t_nodes[k] - t) < 1e-9) return k;
    throw std::domain_error("observable covariance: time not on cache grid");
  };
  auto K0 = [&law](double y1, double y2) {
    return law.cdf(std::min(y1, y2)) - law.cdf(y1) * law.cdf(y2);
  };

  // at time 0 the kernel is a delta, so the smoothed gamma is gamma itself;
  // integrate on a fine grid independent of the cache
  auto bridge_pairing = [&](auto&& ga, auto&& gb, double lo, double hi) {
    const int cells = 512;
    double h = (hi - lo) / cells, acc = 0.0;
    for (int i1 = 0; i1 <= cells; ++i1) {
      double y1 = lo + i1 * h, w1 = (i1 == 0 || i1 == cells) ? 0.5 : 1.0;
      double g1 = ga(y1);
      if (g1 == 0.0) continue;
      for (int i2 = 0; i2 <= cells; ++i2) {
        double y2 = lo + i2 * h, w2 = (i2 == 0 || i2 == cells) ? 0.5 : 1.0;
        acc += w1 * w2 * g1 * gb(y2) * K0(y1, y2);
      }
    }
    return acc * h * h;
  };

  bool z_a = t_a <= 1e-12, z_b = t_b <= 1e-12;
  double dy = cache.y_nodes.size() > 1 ? cache.y_nodes[1] - cache.y_nodes[0] : 0.0;
  double ds = cache.s_nodes.size() > 1 ? cache.s_nodes[1] - cache.s_nodes[0] : 0.0;

  std::vector<double> ga0, gb0;
  if (!z_a) ga0 = detail::kernel_smoothed_gamma(cache, R, coeffs, gamma_a, 0, find_t(t_a));
  if (!z_b) gb0 = detail::kernel_smoothed_gamma(cache, R, coeffs, gamma_b, 0, find_t(t_b));

  double term1;
  if (z_a && z_b) {
    term1 = bridge_pairing([&](double y) { return gamma_a.f(y); },
                           [&](double y) { return gamma_b.f(y); },
                           std::min(gamma_a.x_lo, gamma_b.x_lo),
                           std::max(gamma_a.x_hi, gamma_b.x_hi));
  } else {
    // pair on the cache source grid (smoothed side) or fine grid (delta side)
    auto eval_a = [&](double y) {
      if (z_a) return gamma_a.f(y);
      // nearest-node lookup on the uniform y grid
      double fi = (y - cache.y_nodes.front()) / dy;
      std::size_t j = static_cast<std::size_t>(
          std::clamp(fi + 0.5, 0.0, static_cast<double>(cache.y_nodes.size() - 1)));
      return ga0[j];
    };
    auto eval_b = [&](double y) {
      if (z_b) return gamma_b.f(y);
      double fi = (y - cache.y_nodes.front()) / dy;
      std::size_t j = static_cast<std::size_t>(
          std::clamp(fi + 0.5, 0.0, static_cast<double>(cache.y_nodes.size() - 1)));
      return gb0[j];
    };
    term1 = 0.0;
    for (std::size_t j1 = 0; j1 < cache.y_nodes.size(); ++j1)
      for (std::size_t j2 = 0; j2 < cache.y_nodes.size(); ++j2)
        term1 += eval_a(cache.y_nodes[j1]) * eval_b(cache.y_nodes[j2]) *
                 K0(cache.y_nodes[j1], cache.y_nodes[j2]) * dy * dy;
  }

  double tmin = std::min(t_a, t_b);
  double term2 = 0.0;
  if (!z_a && !z_b) {
    std::size_t tka = find_t(t_a), tkb = find_t(t_b);
    for (std::size_t si = 0; si < cache.s_nodes.size(); ++si) {
      if (cache.s_nodes[si] + ds > tmin + 1e-9) break;
      auto gsa = detail::kernel_smoothed_gamma(cache, R, coeffs, gamma_a, si, tka);
      auto gsb = detail::kernel_smoothed_gamma(cache, R, coeffs, gamma_b, si, tkb);
      double s = cache.s_nodes[si];
      for (std::size_t j = 0; j < cache.y_nodes.size(); ++j) {
        double y = cache.y_nodes[j];
        double r = R.interp_R(s, y);
        double rx = std::max(0.0, R.interp_Rx(s, y));
        double sg = coeffs.sigma(r);
        term2 += sg * sg * rx * gsa[j] * gsb[j] * dy * ds;
      }
    }
  }
  return term1 + term2;
}

// ---------------------------------------------------------------------------
// CLT experiment

struct CltObservableStats {
  double time = 0.0;
  SampleMoments moments;
  double exact_variance = 0.0;
  double variance_ratio = 0.0;
  double normality_pvalue = 0.0;
};

struct CltResult {
  std::size_t n = 0, replications = 0;
  std::uint64_t seed = 0;
  std::vector<CltObservableStats> per_spec;
  std::vector<std::vector<double>> samples;  // per spec, per replication
  double empirical_correlation_01 = 0.0;     // first two specs, when present
  double exact_correlation_01 = 0.0;
};

inline CltResult clt_experiment(const InitialLaw& law, const CoefficientPair& coeffs,
                                const SolutionGrid& R, const KernelCache& cache,
                                const std::vector<ObservableSpec>& specs, std::size_t n,
                                std::size_t replications, double dt, std::uint64_t seed,
                                int threads = 0) {
  if (specs.empty()) throw std::invalid_argument("clt_experiment: no observables");
  double t_max = 0.0;
  for (const auto& s : specs) t_max = std::max(t_max, s.time);

  CltResult res;
  res.n = n;
  res.replications = replications;
  res.seed = seed;
  res.samples.assign(specs.size(), std::vector<double>(replications, 0.0));

  std::size_t steps = t_max > 0 ? static_cast<std::size_t>(std::llround(t_max / dt)) : 0;
  const double sdt = std::sqrt(dt);
  parallel_for(
      replications,
      [&](std::size_t rep) {
        RngStream stream(seed, "clt", rep);
        ParticleEnsemble x;
        x.positions = sample_iid(law, n, stream);
        std::vector<double> db(n);
        // Hn observables accumulate along the path; Gn sample at probe times
        std::vector<double> hn_acc(specs.size(), 0.0);
        auto probe = [&](double t_now, double t_next) {
          for (std::size_t sp = 0; sp < specs.size(); ++sp) {
            if (specs[sp].kind == ObservableSpec::Kind::Gn) {
              if (std::abs(specs[sp].time - t_now) < 1e-9)
                res.samples[sp][rep] = observable_gn(specs[sp].gamma, x.positions, R, t_now);
            } else if (t_now < specs[sp].time - 1e-12) {
              double dt_loc = std::min(t_next, specs[sp].time) - t_now;
              hn_acc[sp] += observable_gn(specs[sp].gamma, x.positions, R, t_now) * dt_loc;
            }
          }
        };
        for (std::size_t k = 0; k < steps; ++k) {
          probe(x.time, x.time + dt);
          for (auto& v : db) v = sdt * stream.normal();
          x = step_interacting(x, coeffs, dt, db);
        }
        probe(x.time, x.time);
        for (std::size_t sp = 0; sp < specs.size(); ++sp)
          if (specs[sp].kind == ObservableSpec::Kind::Hn)
            res.samples[sp][rep] = hn_acc[sp];
      },
      threads);

  for (std::size_t sp = 0; sp < specs.size(); ++sp) {
    CltObservableStats st;
    st.time = specs[sp].time;
    st.moments = sample_moments(res.samples[sp]);
    st.exact_variance = observable_covariance_exact(
        cache, R, coeffs, law, specs[sp].gamma, specs[sp].time, specs[sp].gamma,
        specs[sp].time);
    st.variance_ratio = st.exact_variance > 0 ? st.moments.var / st.exact_variance : 0.0;
    st.normality_pvalue = jarque_bera_pvalue(st.moments);
    res.per_spec.push_back(st);
  }

  if (specs.size() >= 2) {
    auto m0 = res.per_spec[0].moments, m1 = res.per_spec[1].moments;
    double cov = 0.0;
    for (std::size_t r = 0; r < replications; ++r)
      cov += (res.samples[0][r] - m0.mean) * (res.samples[1][r] - m1.mean);
    cov /= static_cast<double>(replications);
    res.empirical_correlation_01 = cov / std::sqrt(m0.var * m1.var);
    double exact_cov = observable_covariance_exact(cache, R, coeffs, law, specs[0].gamma,
                                                   specs[0].time, specs[1].gamma,
                                                   specs[1].time);
    res.exact_correlation_01 =
        exact_cov /
        std::sqrt(res.per_spec[0].exact_variance * res.per_spec[1].exact_variance);
  }
  return res;
}

// ---------------------------------------------------------------------------
// prelimit identity (paths recorded every step, increments retained)

namespace detail {

// exact piecewise integration of smooth(x) * h(F_emp(x), R(t,x)) between
// merged breakpoints; F_emp constant, R linear per piece, GL4 in each piece
template <typename Integrand>
double integrate_emp_pieces(const std::vector<double>& sorted_pos,
                            const SolutionGrid& R, double t, double lo, double hi,
                            Integrand&& f) {
  std::vector<double> bp;
  bp.push_back(lo);
  for (double p : sorted_pos)
    if (p > lo && p < hi) bp.push_back(p);
  std::size_t i0 = static_cast<std::size_t>(std::ceil((lo - R.x_min) / R.dx));
  for (std::size_t i = i0; i < R.nx; ++i) {
    double xg = R.x(i);
    if (xg >= hi) break;
    if (xg > lo) bp.push_back(xg);
  }
  bp.push_back(hi);
  std::sort(bp.begin(), bp.end());

  static const double gn[4] = {-0.8611363115940526, -0.3399810435848563,
                               0.3399810435848563, 0.8611363115940526};
  static const double gw[4] = {0.3478548451374538, 0.6521451548625461,
                               0.6521451548625461, 0.3478548451374538};
  const double n = static_cast<double>(sorted_pos.size());
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < bp.size(); ++k) {
    double a = bp[k], b = bp[k + 1];
    if (b - a < 1e-14) continue;
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    auto it = std::upper_bound(sorted_pos.begin(), sorted_pos.end(), mid);
    double femp = static_cast<double>(it - sorted_pos.begin()) / n;
    for (int q = 0; q < 4; ++q) {
      double xq = mid + half * gn[q];
      acc += gw[q] * half * f(xq, femp, R.interp_R(t, xq));
    }
  }
  return acc;
}

}  // namespace detail

// |LHS - RHS| of the prelimit martingale identity for one recorded coupled
// path. paths must hold every step with increments.
inline double prelimit_identity_residual(const CoupledPaths& paths,
                                         const CoefficientPair& coeffs,
                                         const AntiderivativePair& anti,
                                         const SolutionGrid& R,
                                         const TestFunction2D& gamma, double t) {
  if (paths.increments.empty())
    throw std::runtime_error("prelimit_identity_residual: increments not retained");
  const std::size_t n = paths.n;
  const double sqn = std::sqrt(static_cast<double>(n));
  auto [Bn, Sn] = discretized_step_functions(coeffs, static_cast<int>(n));

  std::size_t kT = 0;
  while (kT + 1 < paths.times.size() && paths.times[kT] < t - 1e-9) ++kT;
  if (std::abs(paths.times[kT] - t) > 1e-9)
    throw std::invalid_argument("prelimit_identity_residual: t not on the step grid");

  static const double agl_n[16] = {
      -0.9894009349916499, -0.9445750230732326, -0.8656312023878318,
      -0.7554044083550030, -0.6178762444026438, -0.4580167776572274,
      -0.2816035507792589, -0.0950125098376374, 0.0950125098376374,
      0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
      0.7554044083550030,  0.8656312023878318,  0.9445750230732326,
      0.9894009349916499};
  static const double agl_w[16] = {
      0.0271524594117541, 0.0622535239386479, 0.0951585116824928,
      0.1246289712555339, 0.1495959888165767, 0.1691565193950025,
      0.1826034150449236, 0.1875152061768376, 0.1826034150449236,
      0.1691565193950025, 0.1495959888165767, 0.1246289712555339,
      0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

  auto sorted_at = [&paths](std::size_t k) {
    std::vector<double> s = paths.interacting[k];
    std::sort(s.begin(), s.end());
    return s;
  };

  auto gn_pairing = [&](std::size_t k, double tt) {
    auto sorted = sorted_at(k);
    return detail::integrate_emp_pieces(
        sorted, R, tt, gamma.x_lo, gamma.x_hi,
        [&](double x, double femp, double r) {
          return gamma.f(tt, x) * sqn * (femp - r);
        });
  };

  double lhs = gn_pairing(kT, t) - gn_pairing(0, 0.0);
  // ds integral: left Riemann, matching the Ito sum on the right-hand side
  for (std::size_t k = 0; k < kT; ++k) {
    double s = paths.times[k];
    auto sorted = sorted_at(k);
    double row = detail::integrate_emp_pieces(
        sorted, R, s, gamma.x_lo, gamma.x_hi, [&](double x, double femp, double r) {
          double avg_b = 0.0, avg_s2 = 0.0;
          for (int q = 0; q < 16; ++q) {
            double a = 0.5 * (1.0 + agl_n[q]);
            double mix = a * femp + (1.0 - a) * r;
            double sg = coeffs.sigma(mix);
            avg_b += 0.5 * agl_w[q] * coeffs.b(mix);
            avg_s2 += 0.5 * agl_w[q] * 0.5 * sg * sg;
          }
          return (gamma.fs(s, x) + gamma.fx(s, x) * avg_b + gamma.fxx(s, x) * avg_s2) *
                 sqn * (femp - r);
        });
    lhs -= row * paths.dt;
  }

  // martingale sum over particles and steps
  double mart = 0.0;
  for (std::size_t k = 0; k < kT; ++k) {
    double s = paths.times[k];
    ParticleEnsemble e;
    e.positions = paths.interacting[k];
    std::vector<double> q = rank_quantiles(e);
    for (std::size_t i = 0; i < n; ++i) {
      double g = gamma.f(s, e.positions[i]);
      if (g != 0.0) mart += g * coeffs.sigma(q[i]) * paths.increments[k][i];
    }
  }
  double rhs = -mart / sqn;

  // correction integrals: F_emp constant between order statistics, so the
  // x integrals collapse to differences of gamma and gamma_x
  for (std::size_t k = 0; k < kT; ++k) {
    double s = paths.times[k];
    auto sorted = sorted_at(k);
    double corr = 0.0;
    auto add_piece = [&](double a, double b, double femp) {
      a = std::max(a, gamma.x_lo);
      b = std::min(b, gamma.x_hi);
      if (b <= a) return;
      double cB = Bn(femp) - anti.B(femp);
      double cS = Sn(femp) - anti.Sigma(femp);
      corr += cB * (gamma.f(s, b) - gamma.f(s, a)) + cS * (gamma.fx(s, b) - gamma.fx(s, a));
    };
    add_piece(gamma.x_lo, sorted[0], 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i)
      add_piece(sorted[i], sorted[i + 1],
                static_cast<double>(i + 1) / static_cast<double>(n));
    add_piece(sorted[n - 1], gamma.x_hi, 1.0);
    rhs += sqn * corr * paths.dt;
  }

  return std::abs(lhs - rhs);
}

// Runs the identity across dt levels sharing one Brownian path per
// replication: increments at a coarse level are sums of the finest-level
// increments. Reports the RMS residual over replications at each level.
inline std::vector<double> identity_refinement_study(
    const InitialLaw& law, const CoefficientPair& coeffs, const AntiderivativePair& anti,
    const SolutionGrid& R, const TestFunction2D& gamma, double t, std::size_t n,
    const std::vector<double>& dt_list, std::uint64_t seed,
    std::size_t replications = 16, int threads = 0) {
  double dt_fine = *std::min_element(dt_list.begin(), dt_list.end());
  std::size_t steps_fine = static_cast<std::size_t>(std::llround(t / dt_fine));
  std::vector<std::vector<double>> sq(dt_list.size(),
                                      std::vector<double>(replications, 0.0));
  parallel_for(
      replications,
      [&](std::size_t rep) {
        RngStream stream(seed, "identity", rep);
        std::vector<double> init = sample_iid(law, n, stream);
        std::vector<std::vector<double>> fine_db(steps_fine);
        double sdt = std::sqrt(dt_fine);
        for (auto& row : fine_db) row = stream.normals(n, 0.0, sdt);

        for (std::size_t lev = 0; lev < dt_list.size(); ++lev) {
          double dt = dt_list[lev];
          std::size_t factor = static_cast<std::size_t>(std::llround(dt / dt_fine));
          std::size_t steps = steps_fine / factor;
          CoupledPaths paths;
          paths.n = n;
          paths.dt = dt;
          ParticleEnsemble x, xbar;
          x.positions = init;
          xbar = x;
          paths.times.push_back(0.0);
          paths.interacting.push_back(x.positions);
          paths.surrogate.push_back(xbar.positions);
          for (std::size_t k = 0; k < steps; ++k) {
            std::vector<double> db(n, 0.0);
            for (std::size_t f = 0; f < factor; ++f)
              for (std::size_t i = 0; i < n; ++i) db[i] += fine_db[k * factor + f][i];
            x = step_interacting(x, coeffs, dt, db);
            xbar = step_surrogate(xbar, coeffs, R, dt, db);
            paths.increments.push_back(db);
            paths.times.push_back(x.time);
            paths.interacting.push_back(x.positions);
            paths.surrogate.push_back(xbar.positions);
          }
          double r = prelimit_identity_residual(paths, coeffs, anti, R, gamma, t);
          sq[lev][rep] = r * r;
        }
      },
      threads);
  std::vector<double> residuals;
  for (std::size_t lev = 0; lev < dt_list.size(); ++lev) {
    double s = 0.0;
    for (double v : sq[lev]) s += v;
    residuals.push_back(std::sqrt(s / static_cast<double>(replications)));
  }
  return residuals;
}

// ---------------------------------------------------------------------------
// Monte Carlo kernel cross-check

struct McKernelResult {
  double sup_discrepancy = 0.0;
  double bandwidth = 0.0;
  bool leakage = false;  // some path left the grid domain
};

inline McKernelResult mc_kernel_crosscheck(const SolutionGrid& R,
                                           const CoefficientPair& coeffs, double s,
                                           double y, double t, std::size_t paths_count,
                                           double mollifier_width, RngStream& stream,
                                           double bandwidth = 0.0) {
  KernelSlice slice = kernel_forward(R, coeffs, s, y, mollifier_width, t);
  std::size_t steps = static_cast<std::size_t>(std::llround((t - s) / R.dt));
  double dt = (t - s) / static_cast<double>(steps);
  double sdt = std::sqrt(dt);
  std::vector<double> finals(paths_count);
  McKernelResult res;
  for (std::size_t pth = 0; pth < paths_count; ++pth) {
    double x = y, tt = s;
    for (std::size_t k = 0; k < steps; ++k) {
      double r = R.interp_R(tt, x);
      x += coeffs.b(r) * dt + coeffs.sigma(r) * sdt * stream.normal();
      tt += dt;
      if (x <= R.x_min || x >= R.x_max()) res.leakage = true;
    }
    finals[pth] = x;
  }
  if (bandwidth <= 0.0) {
    auto m = sample_moments(finals);
    bandwidth = 1.06 * std::sqrt(m.var) *
                std::pow(static_cast<double>(paths_count), -0.2);
  }
  res.bandwidth = bandwidth;
  std::size_t ti = slice.time_index(t);
  for (std::size_t i = 0; i < slice.nx; ++i) {
    double kde = 0.0;
    for (double xf : finals) kde += gaussian_density(slice.x(i), xf, bandwidth * bandwidth);
    kde /= static_cast<double>(paths_count);
    res.sup_discrepancy = std::max(res.sup_discrepancy, std::abs(kde - slice.at(ti, i)));
  }
  return res;
}

}  // namespace rankflux

#endif  // RANKFLUX_EXPERIMENTS_HPP
