#ifndef RANKFLUX_KERNEL_HPP
#define RANKFLUX_KERNEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/coefficients.hpp"
#include "rankflux/common.hpp"
#include "rankflux/grid.hpp"
#include "rankflux/pme.hpp"

namespace rankflux {

// b(R) and sigma(R)^2/2 evaluated on the full R grid, shared across forward
// solves.
struct CoefficientFields {
  std::size_t nx = 0, nt = 0;
  std::vector<double> drift, diff;  // row-major like SolutionGrid::R

  CoefficientFields() = default;
  CoefficientFields(const SolutionGrid& g, const CoefficientPair& coeffs)
      : nx(g.nx), nt(g.nt), drift(g.nt * g.nx), diff(g.nt * g.nx) {
    for (std::size_t k = 0; k < nt; ++k)
      for (std::size_t i = 0; i < nx; ++i) {
        double r = g.at(k, i);
        double s = coeffs.sigma(r);
        drift[k * nx + i] = coeffs.b(r);
        diff[k * nx + i] = 0.5 * s * s;
      }
  }
};

// Transition density slice p(s, y; ., .) on the grid of R.
struct KernelSlice {
  double s = 0.0, y = 0.0, mollifier_width = 0.0, sigma_max = 1.0;
  double x_min = 0.0, dx = 0.0;
  std::size_t nx = 0;
  std::vector<double> t_nodes;  // absolute times >= s, aligned with R rows
  std::vector<double> values;   // t-major
  double leak = 0.0;            // boundary mass loss at the final time

  double x(std::size_t i) const { return x_min + static_cast<double>(i) * dx; }
  double at(std::size_t ti, std::size_t xi) const { return values[ti * nx + xi]; }

  // nearest stored row; rejects times farther than half a row spacing
  std::size_t time_index(double t) const {
    std::size_t best = 0;
    double bd = std::abs(t_nodes[0] - t);
    for (std::size_t k = 1; k < t_nodes.size(); ++k)
      if (std::abs(t_nodes[k] - t) < bd) bd = std::abs(t_nodes[k] - t), best = k;
    double spacing = t_nodes.size() > 1 ? t_nodes[1] - t_nodes[0] : 1.0;
    if (bd > 0.51 * spacing + 1e-12)
      throw std::domain_error("KernelSlice: time " + std::to_string(t) +
                              " not on slice grid");
    return best;
  }

  // bilinear interpolation between stored rows
  double value(double t, double xq) const {
    if (xq <= x_min || xq >= x(nx - 1)) return 0.0;
    t = std::clamp(t, t_nodes.front(), t_nodes.back());
    double fi0 = (xq - x_min) / dx;
    if (t_nodes.size() == 1) {
      std::size_t i = std::min(static_cast<std::size_t>(fi0), nx - 2);
      double a = fi0 - static_cast<double>(i);
      return (1 - a) * at(0, i) + a * at(0, i + 1);
    }
    std::size_t k = 0;
    while (k + 2 < t_nodes.size() && t_nodes[k + 1] <= t) ++k;
    double span = t_nodes[k + 1] - t_nodes[k];
    double at_ = span > 0.0 ? std::clamp((t - t_nodes[k]) / span, 0.0, 1.0) : 0.0;
    double fi = (xq - x_min) / dx;
    std::size_t i = std::min(static_cast<std::size_t>(fi), nx - 2);
    double a = fi - static_cast<double>(i);
    double v0 = (1 - a) * at(k, i) + a * at(k, i + 1);
    double v1 = (1 - a) * at(k + 1, i) + a * at(k + 1, i + 1);
    return (1 - at_) * v0 + at_ * v1;
  }

  double mass(std::size_t ti) const {
    double m = 0;
    for (std::size_t i = 0; i < nx; ++i) m += at(ti, i);
    return m * dx;
  }

  double mean(std::size_t ti) const {
    double m = 0;
    for (std::size_t i = 0; i < nx; ++i) m += x(i) * at(ti, i);
    return m * dx / mass(ti);
  }

  double variance(std::size_t ti) const {
    double mu = mean(ti), v = 0;
    for (std::size_t i = 0; i < nx; ++i) {
      double d = x(i) - mu;
      v += d * d * at(ti, i);
    }
    return v * dx / mass(ti);
  }
};

inline double gaussian_density(double x, double mean, double var) {
  if (!(var > 0.0)) return 0.0;
  double d = x - mean;
  return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * M_PI * var);
}

// Kolmogorov forward solve from a Gaussian mollification of delta_y: the
// conservative scheme matching the generator b(R) d/dx + (sigma(R)^2/2) d2/dx2,
// upwind advective flux at the faces, absorbing boundaries.
inline KernelSlice kernel_forward(const SolutionGrid& R, const CoefficientPair& coeffs,
                                  const CoefficientFields& fields, double s, double y,
                                  double mollifier_width, double t_end = -1.0,
                                  double max_leak = 0.01) {
  if (t_end < 0.0) t_end = R.t_max();
  if (s < -1e-12 || t_end > R.t_max() + 1e-9 || s >= t_end)
    throw std::domain_error("kernel_forward: (s, t_end) outside grid");
  if (y <= R.x_min || y >= R.x_max())
    throw std::domain_error("kernel_forward: source point outside grid");
  double mw = std::max(mollifier_width, 2.0 * R.dx);

  KernelSlice slice;
  slice.s = s;
  slice.y = y;
  slice.mollifier_width = mw;
  slice.sigma_max = coeffs.sup_sigma();
  slice.x_min = R.x_min;
  slice.dx = R.dx;
  slice.nx = R.nx;

  // align with the R rows covering [s, t_end]
  std::size_t k0 = static_cast<std::size_t>(std::floor(s / R.dt + 1e-9));
  std::size_t k1 = static_cast<std::size_t>(std::ceil(t_end / R.dt - 1e-9));
  k1 = std::min(k1, R.nt - 1);

  std::vector<double> p(R.nx), pn(R.nx);
  for (std::size_t i = 0; i < R.nx; ++i) p[i] = gaussian_density(R.x(i), y, mw * mw);
  double norm = 0.0;
  for (double v : p) norm += v * R.dx;
  for (auto& v : p) v /= norm;

  double dt_cfl = cfl_dt_max(coeffs, R.dx);
  slice.t_nodes.push_back(R.t(k0));
  slice.values.insert(slice.values.end(), p.begin(), p.end());

  for (std::size_t k = k0; k < k1; ++k) {
    const double* bf = &fields.drift[k * R.nx];
    const double* Df = &fields.diff[k * R.nx];
    std::size_t sub = static_cast<std::size_t>(std::ceil(R.dt / dt_cfl - 1e-12));
    double h = R.dt / static_cast<double>(sub);
    for (std::size_t m = 0; m < sub; ++m) {
      pn[0] = pn[R.nx - 1] = 0.0;
      for (std::size_t i = 1; i + 1 < R.nx; ++i) {
        double bl = 0.5 * (bf[i - 1] + bf[i]);
        double br = 0.5 * (bf[i] + bf[i + 1]);
        double flux_l = bl >= 0.0 ? bl * p[i - 1] : bl * p[i];
        double flux_r = br >= 0.0 ? br * p[i] : br * p[i + 1];
        double diffu = (Df[i + 1] * p[i + 1] - 2.0 * Df[i] * p[i] + Df[i - 1] * p[i - 1]) /
                       (R.dx * R.dx);
        pn[i] = p[i] + h * (-(flux_r - flux_l) / R.dx + diffu);
      }
      std::swap(p, pn);
    }
    slice.t_nodes.push_back(R.t(k + 1));
    slice.values.insert(slice.values.end(), p.begin(), p.end());
  }

  double final_mass = 0.0;
  for (double v : p) final_mass += v * R.dx;
  slice.leak = 1.0 - final_mass;
  if (slice.leak > max_leak)
    throw std::domain_error("kernel_forward: boundary mass leak " +
                            std::to_string(slice.leak) + " exceeds " +
                            std::to_string(max_leak) + " (domain too small)");
  return slice;
}

inline KernelSlice kernel_forward(const SolutionGrid& R, const CoefficientPair& coeffs,
                                  double s, double y, double mollifier_width,
                                  double t_end = -1.0, double max_leak = 0.01) {
  CoefficientFields fields(R, coeffs);
  return kernel_forward(R, coeffs, fields, s, y, mollifier_width, t_end, max_leak);
}

struct GaussianBoundFit {
  double C_lower = 0.0, C_upper = 0.0;
  bool pass = false;
};

// Smallest C in (1, inf) with
//   C^{-1} tau^{-1/2} exp(-C d^2/tau) <= p <= C tau^{-1/2} exp(-C^{-1} d^2/tau)
// on the reliable window tau >= 10 mw^2, |d| <= 4 sigma_max sqrt(tau).
inline GaussianBoundFit check_gaussian_bounds(const KernelSlice& slice, double T) {
  auto lower_ok = [](double C, double tau, double d2, double p) {
    return std::exp(-C * d2 / tau) / (C * std::sqrt(tau)) <= p;
  };
  auto upper_ok = [](double C, double tau, double d2, double p) {
    return p <= C * std::exp(-d2 / (C * tau)) / std::sqrt(tau);
  };
  auto fit_one = [](auto ok, double tau, double d2, double p) -> double {
    double lo = 1.0 + 1e-9, hi = 1e8;
    if (!ok(hi, tau, d2, p)) return std::numeric_limits<double>::infinity();
    if (ok(lo, tau, d2, p)) return lo;
    for (int it = 0; it < 200 && hi / lo > 1 + 1e-10; ++it) {
      double mid = std::sqrt(lo * hi);
      (ok(mid, tau, d2, p) ? hi : lo) = mid;
    }
    return hi;
  };

  GaussianBoundFit fit;
  fit.C_lower = fit.C_upper = 1.0 + 1e-9;
  double mw2 = slice.mollifier_width * slice.mollifier_width;
  bool any = false;
  for (std::size_t ti = 0; ti < slice.t_nodes.size(); ++ti) {
    double tau = slice.t_nodes[ti] - slice.s;
    if (tau < 10.0 * mw2 || slice.t_nodes[ti] > T + 1e-12) continue;
    double dmax = 4.0 * slice.sigma_max * std::sqrt(tau);
    for (std::size_t i = 0; i < slice.nx; ++i) {
      double d = slice.x(i) - slice.y;
      if (std::abs(d) > dmax) continue;
      any = true;
      double p = slice.at(ti, i);
      if (!(p > 0.0)) {
        fit.pass = false;
        return fit;
      }
      fit.C_lower = std::max(fit.C_lower, fit_one(lower_ok, tau, d * d, p));
      fit.C_upper = std::max(fit.C_upper, fit_one(upper_ok, tau, d * d, p));
    }
  }
  fit.pass = any && std::isfinite(fit.C_lower) && std::isfinite(fit.C_upper);
  return fit;
}

// sup_x | p(s,y;t,x) - int p(s,y;r,z) p(r,z;t,x) dz |, inner kernels computed
// by forward solves from a strided grid of intermediate sources.
inline double chapman_kolmogorov_residual(const SolutionGrid& R,
                                          const CoefficientPair& coeffs, double s,
                                          double y, double r_mid, double t,
                                          double mollifier_width,
                                          std::size_t z_stride = 4) {
  if (!(s < r_mid && r_mid < t))
    throw std::invalid_argument("chapman_kolmogorov_residual: need s < r_mid < t");
  CoefficientFields fields(R, coeffs);
  KernelSlice outer = kernel_forward(R, coeffs, fields, s, y, mollifier_width, t);
  std::size_t ri = outer.time_index(r_mid);
  std::size_t ti = outer.time_index(t);

  double dz = R.dx * static_cast<double>(z_stride);
  std::vector<double> composed(R.nx, 0.0);
  double peak_mid = 0.0;
  for (std::size_t i = 0; i < R.nx; ++i) peak_mid = std::max(peak_mid, outer.at(ri, i));
  for (std::size_t i = z_stride; i + z_stride < R.nx; i += z_stride) {
    double w = outer.at(ri, i);
    if (w < 1e-7 * peak_mid) continue;
    KernelSlice inner =
        kernel_forward(R, coeffs, fields, r_mid, R.x(i), mollifier_width, t);
    std::size_t tii = inner.time_index(t);
    for (std::size_t j = 0; j < R.nx; ++j) composed[j] += w * inner.at(tii, j) * dz;
  }
  double sup = 0.0;
  for (std::size_t j = 0; j < R.nx; ++j)
    sup = std::max(sup, std::abs(outer.at(ti, j) - composed[j]));
  return sup;
}

// Batch of forward solves on a coarse source grid, sampled to coarse targets.
// Entries with t - s below the reliable window fall back to the Gaussian
// surrogate with the local coefficients.
struct KernelCache {
  std::vector<double> s_nodes, y_nodes;  // sources
  std::vector<double> t_nodes, x_nodes;  // targets
  double mollifier_width = 0.0;
  double reliable_tau = 0.0;  // below this, the surrogate kernel is used
  std::vector<double> values;  // [si][yj][tk][xl]
  std::uint64_t key = 0;       // (coefficient, law, grid) content key

  std::size_t idx(std::size_t si, std::size_t yj, std::size_t tk, std::size_t xl) const {
    return ((si * y_nodes.size() + yj) * t_nodes.size() + tk) * x_nodes.size() + xl;
  }

  double stored(std::size_t si, std::size_t yj, std::size_t tk, std::size_t xl) const {
    return values[idx(si, yj, tk, xl)];
  }

  void write_binary(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write kernel cache: " + path);
    const char magic[8] = {'R', 'F', 'L', 'X', 'K', 'R', 'N', '1'};
    os.write(magic, 8);
    auto w64 = [&os](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    auto wvec = [&os, &w64](const std::vector<double>& v) {
      w64(v.size());
      os.write(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
    };
    w64(key);
    os.write(reinterpret_cast<const char*>(&mollifier_width), 8);
    os.write(reinterpret_cast<const char*>(&reliable_tau), 8);
    wvec(s_nodes);
    wvec(y_nodes);
    wvec(t_nodes);
    wvec(x_nodes);
    wvec(values);
    if (!os) throw std::runtime_error("kernel cache write failed: " + path);
  }

  static KernelCache read_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read kernel cache: " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::string(magic, 8) != "RFLXKRN1")
      throw std::runtime_error("bad kernel cache magic: " + path);
    KernelCache c;
    auto r64 = [&is]() {
      std::uint64_t v;
      is.read(reinterpret_cast<char*>(&v), 8);
      return v;
    };
    auto rvec = [&is, &r64](std::vector<double>& v) {
      v.resize(r64());
      is.read(reinterpret_cast<char*>(v.data()), v.size() * sizeof(double));
    };
    c.key = r64();
    is.read(reinterpret_cast<char*>(&c.mollifier_width), 8);
    is.read(reinterpret_cast<char*>(&c.reliable_tau), 8);
    rvec(c.s_nodes);
    rvec(c.y_nodes);
    rvec(c.t_nodes);
    rvec(c.x_nodes);
    rvec(c.values);
    if (!is) throw std::runtime_error("kernel cache truncated: " + path);
    return c;
  }
};

// Builds the cache by independent forward solves across source points.
inline KernelCache build_kernel_cache(const SolutionGrid& R, const CoefficientPair& coeffs,
                                      std::vector<double> s_nodes,
                                      std::vector<double> y_nodes,
                                      std::vector<double> t_nodes,
                                      std::vector<double> x_nodes, double mollifier_width,
                                      int threads = 0) {
  KernelCache cache;
  cache.s_nodes = std::move(s_nodes);
  cache.y_nodes = std::move(y_nodes);
  cache.t_nodes = std::move(t_nodes);
  cache.x_nodes = std::move(x_nodes);
  cache.mollifier_width = std::max(mollifier_width, 2.0 * R.dx);
  cache.reliable_tau = 10.0 * cache.mollifier_width * cache.mollifier_width;
  cache.values.assign(cache.s_nodes.size() * cache.y_nodes.size() *
                          cache.t_nodes.size() * cache.x_nodes.size(),
                      0.0);
  CoefficientFields fields(R, coeffs);
  std::size_t nsrc = cache.s_nodes.size() * cache.y_nodes.size();
  parallel_for(
      nsrc,
      [&](std::size_t src) {
        std::size_t si = src / cache.y_nodes.size();
        std::size_t yj = src % cache.y_nodes.size();
        double s = cache.s_nodes[si], y = cache.y_nodes[yj];
        if (s >= R.t_max() - 1e-12) return;
        KernelSlice slice =
            kernel_forward(R, coeffs, fields, s, y, cache.mollifier_width, R.t_max(), 0.05);
        for (std::size_t tk = 0; tk < cache.t_nodes.size(); ++tk) {
          double t = cache.t_nodes[tk];
          if (t <= s + 1e-12) continue;
          for (std::size_t xl = 0; xl < cache.x_nodes.size(); ++xl)
            cache.values[cache.idx(si, yj, tk, xl)] = slice.value(t, cache.x_nodes[xl]);
        }
      },
      threads);
  return cache;
}

// Cache evaluation with the near-singularity Gaussian surrogate.
inline double cache_p(const KernelCache& cache, const SolutionGrid& R,
                      const CoefficientPair& coeffs, std::size_t si, std::size_t yj,
                      std::size_t tk, std::size_t xl) {
  double s = cache.s_nodes[si], t = cache.t_nodes[tk];
  double tau = t - s;
  if (tau <= 0.0) return 0.0;
  if (tau < cache.reliable_tau) {
    double y = cache.y_nodes[yj];
    double r = R.interp_R(s, y);
    double mean = y + coeffs.b(r) * tau;
    double sd = coeffs.sigma(r);
    return gaussian_density(cache.x_nodes[xl], mean, sd * sd * tau);
  }
  return cache.stored(si, yj, tk, xl);
}

}  // namespace rankflux

#endif  // RANKFLUX_KERNEL_HPP
