#ifndef RANKFLUX_MILD_SPDE_HPP
#define RANKFLUX_MILD_SPDE_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/initial_measure.hpp"
#include "rankflux/kernel.hpp"
#include "rankflux/test_function.hpp"

namespace rankflux {

// Realization of the fluctuation field G on the cache target grid, with the
// kernel-smoothed initial part and the white-noise part kept separately.
struct FluctuationField {
  std::vector<double> t_nodes, x_nodes;
  std::vector<double> initial_part, noise_part;  // t-major

  std::size_t idx(std::size_t tk, std::size_t xl) const {
    return tk * x_nodes.size() + xl;
  }
  double value(std::size_t tk, std::size_t xl) const {
    return initial_part[idx(tk, xl)] + noise_part[idx(tk, xl)];
  }
};

// gamma_s + gamma_x b(R) + gamma_xx sigma(R)^2/2, the generator applied to a
// test function along the limit R.
inline double apply_generator(const TestFunction2D& gamma, const SolutionGrid& R,
                              const CoefficientPair& coeffs, double s, double x) {
  double r = R.interp_R(s, x);
  double sg = coeffs.sigma(r);
  return gamma.fs(s, x) + gamma.fx(s, x) * coeffs.b(r) +
         gamma.fxx(s, x) * 0.5 * sg * sg;
}

// Per-cell noise weights sigma(R) Rx^{1/2} sqrt(ds dy) on the cache source
// grid; shared between field assembly and the identity residual.
struct NoiseWeights {
  std::size_t ns = 0, ny = 0;
  double ds = 0.0, dy = 0.0;
  std::vector<double> w;  // s-major

  NoiseWeights() = default;
  NoiseWeights(const KernelCache& cache, const SolutionGrid& R,
               const CoefficientPair& coeffs) {
    ns = cache.s_nodes.size();
    ny = cache.y_nodes.size();
    ds = ns > 1 ? cache.s_nodes[1] - cache.s_nodes[0] : 0.0;
    dy = ny > 1 ? cache.y_nodes[1] - cache.y_nodes[0] : 0.0;
    w.resize(ns * ny);
    for (std::size_t si = 0; si < ns; ++si)
      for (std::size_t yj = 0; yj < ny; ++yj) {
        double s = cache.s_nodes[si], y = cache.y_nodes[yj];
        double r = R.interp_R(s, y);
        double rx = std::max(0.0, R.interp_Rx(s, y));
        w[si * ny + yj] = coeffs.sigma(r) * std::sqrt(rx) * std::sqrt(ds * dy);
      }
  }
};

inline std::vector<double> draw_white_noise(const KernelCache& cache, RngStream& stream) {
  return stream.normals(cache.s_nodes.size() * cache.y_nodes.size());
}

namespace detail {

inline double bridge_value_at(const BridgePath& bridge, double x) {
  const auto& g = bridge.grid;
  if (x <= g.front()) return bridge.values.front();
  if (x >= g.back()) return bridge.values.back();
  auto it = std::upper_bound(g.begin(), g.end(), x);
  std::size_t i = it - g.begin() - 1;
  double t = (x - g[i]) / (g[i + 1] - g[i]);
  return bridge.values[i] + t * (bridge.values[i + 1] - bridge.values[i]);
}

}  // namespace detail

// Field value at one target node of the cache given a shared white-noise
// array; the same xi across all (t,x) makes the field one SPDE path.
inline std::pair<double, double> mild_point(const KernelCache& cache,
                                            const SolutionGrid& R,
                                            const CoefficientPair& coeffs,
                                            const NoiseWeights& weights,
                                            const BridgePath& bridge,
                                            const std::vector<double>& xi,
                                            std::size_t tk, std::size_t xl) {
  double t = cache.t_nodes[tk];
  if (t <= 1e-12)
    return {detail::bridge_value_at(bridge, cache.x_nodes[xl]), 0.0};
  double initial = 0.0;
  // source time 0 is required to be the first cache node
  for (std::size_t yj = 0; yj < cache.y_nodes.size(); ++yj)
    initial += bridge.values[yj] * cache_p(cache, R, coeffs, 0, yj, tk, xl) * weights.dy;
  double noise = 0.0;
  for (std::size_t si = 0; si < cache.s_nodes.size(); ++si) {
    // Ito sum: strictly lower-triangular, excluding the cell containing t
    if (cache.s_nodes[si] + weights.ds > t + 1e-9) break;
    for (std::size_t yj = 0; yj < cache.y_nodes.size(); ++yj) {
      double wv = weights.w[si * weights.ny + yj];
      if (wv == 0.0) continue;
      noise += wv * cache_p(cache, R, coeffs, si, yj, tk, xl) * xi[si * weights.ny + yj];
    }
  }
  return {initial, noise};
}

inline FluctuationField simulate_mild(const SolutionGrid& R, const CoefficientPair& coeffs,
                                      const KernelCache& cache, const BridgePath& bridge,
                                      RngStream& stream) {
  if (bridge.values.size() != cache.y_nodes.size())
    throw std::invalid_argument("simulate_mild: bridge must be sampled on the source grid");
  NoiseWeights weights(cache, R, coeffs);
  std::vector<double> xi = draw_white_noise(cache, stream);
  FluctuationField field;
  field.t_nodes = cache.t_nodes;
  field.x_nodes = cache.x_nodes;
  field.initial_part.resize(field.t_nodes.size() * field.x_nodes.size());
  field.noise_part.resize(field.initial_part.size());
  for (std::size_t tk = 0; tk < field.t_nodes.size(); ++tk)
    for (std::size_t xl = 0; xl < field.x_nodes.size(); ++xl) {
      auto [ini, noi] = mild_point(cache, R, coeffs, weights, bridge, xi, tk, xl);
      field.initial_part[field.idx(tk, xl)] = ini;
      field.noise_part[field.idx(tk, xl)] = noi;
    }
  return field;
}

// Two-term exact covariance of the mild solution between target nodes,
// by quadrature on the cache grids. Source time 0 kernels reduce to deltas
// when the target time is 0.
inline double covariance_exact(const KernelCache& cache, const SolutionGrid& R,
                               const CoefficientPair& coeffs, const InitialLaw& law,
                               std::size_t tk1, std::size_t xl1, std::size_t tk2,
                               std::size_t xl2) {
  double t1 = cache.t_nodes[tk1], t2 = cache.t_nodes[tk2];
  double x1 = cache.x_nodes[xl1], x2 = cache.x_nodes[xl2];
  double ds = cache.s_nodes.size() > 1 ? cache.s_nodes[1] - cache.s_nodes[0] : 0.0;
  double dy = cache.y_nodes.size() > 1 ? cache.y_nodes[1] - cache.y_nodes[0] : 0.0;
  auto K0 = [&law](double y1, double y2) {
    double F1 = law.cdf(y1), F2 = law.cdf(y2);
    return law.cdf(std::min(y1, y2)) - F1 * F2;
  };

  double term1;
  bool z1 = t1 <= 1e-12, z2 = t2 <= 1e-12;
  if (z1 && z2) {
    term1 = K0(x1, x2);
  } else if (z1 || z2) {
    double fixed_x = z1 ? x1 : x2;
    std::size_t tko = z1 ? tk2 : tk1, xlo = z1 ? xl2 : xl1;
    term1 = 0.0;
    for (std::size_t j = 0; j < cache.y_nodes.size(); ++j)
      term1 += K0(fixed_x, cache.y_nodes[j]) *
               cache_p(cache, R, coeffs, 0, j, tko, xlo) * dy;
  } else {
    term1 = 0.0;
    for (std::size_t j1 = 0; j1 < cache.y_nodes.size(); ++j1) {
      double p1 = cache_p(cache, R, coeffs, 0, j1, tk1, xl1);
      if (p1 == 0.0) continue;
      for (std::size_t j2 = 0; j2 < cache.y_nodes.size(); ++j2) {
        double p2 = cache_p(cache, R, coeffs, 0, j2, tk2, xl2);
        if (p2 == 0.0) continue;
        term1 += K0(cache.y_nodes[j1], cache.y_nodes[j2]) * p1 * p2 * dy * dy;
      }
    }
  }

  double tmin = std::min(t1, t2);
  double term2 = 0.0;
  for (std::size_t si = 0; si < cache.s_nodes.size(); ++si) {
    if (cache.s_nodes[si] + ds > tmin + 1e-9) break;
    double s = cache.s_nodes[si];
    for (std::size_t j = 0; j < cache.y_nodes.size(); ++j) {
      double y = cache.y_nodes[j];
      double r = R.interp_R(s, y);
      double rx = std::max(0.0, R.interp_Rx(s, y));
      double sg = coeffs.sigma(r);
      term2 += sg * sg * rx * cache_p(cache, R, coeffs, si, j, tk1, xl1) *
               cache_p(cache, R, coeffs, si, j, tk2, xl2) * dy * ds;
    }
  }
  return term1 + term2;
}

// | weak-form pairing of the field against gamma minus the discretized
// stochastic integral |, both built from the same white-noise array.
inline double mild_identity_residual(const FluctuationField& field,
                                     const TestFunction2D& gamma, const SolutionGrid& R,
                                     const CoefficientPair& coeffs,
                                     const KernelCache& cache,
                                     const std::vector<double>& xi) {
  if (gamma.x_lo < field.x_nodes.front() - 1e-9 ||
      gamma.x_hi > field.x_nodes.back() + 1e-9)
    throw std::invalid_argument("mild_identity_residual: gamma support exceeds grid");
  const std::size_t nT = field.t_nodes.size(), nX = field.x_nodes.size();
  double dxe = nX > 1 ? field.x_nodes[1] - field.x_nodes[0] : 0.0;
  double t_final = field.t_nodes.back();

  auto space_pair = [&](std::size_t tk) {
    double s = 0.0;
    for (std::size_t xl = 0; xl < nX; ++xl) {
      double w = (xl == 0 || xl + 1 == nX) ? 0.5 : 1.0;
      s += w * gamma.f(field.t_nodes[tk], field.x_nodes[xl]) * field.value(tk, xl);
    }
    return s * dxe;
  };

  double lhs = space_pair(nT - 1) - space_pair(0);
  for (std::size_t tk = 0; tk < nT; ++tk) {
    double wt = (tk == 0 || tk + 1 == nT) ? 0.5 : 1.0;
    double dt_loc = tk + 1 < nT ? field.t_nodes[tk + 1] - field.t_nodes[tk]
                                : field.t_nodes[tk] - field.t_nodes[tk - 1];
    double row = 0.0;
    for (std::size_t xl = 0; xl < nX; ++xl) {
      double wx = (xl == 0 || xl + 1 == nX) ? 0.5 : 1.0;
      row += wx * apply_generator(gamma, R, coeffs, field.t_nodes[tk], field.x_nodes[xl]) *
             field.value(tk, xl);
    }
    lhs -= wt * row * dxe * dt_loc;
  }

  NoiseWeights weights(cache, R, coeffs);
  double rhs = 0.0;
  for (std::size_t si = 0; si < cache.s_nodes.size(); ++si) {
    if (cache.s_nodes[si] + weights.ds > t_final + 1e-9) break;
    for (std::size_t yj = 0; yj < cache.y_nodes.size(); ++yj)
      rhs += gamma.f(cache.s_nodes[si], cache.y_nodes[yj]) *
             weights.w[si * weights.ny + yj] * xi[si * weights.ny + yj];
  }
  return std::abs(lhs - rhs);
}

}  // namespace rankflux

#endif  // RANKFLUX_MILD_SPDE_HPP
