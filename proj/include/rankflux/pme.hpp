#ifndef RANKFLUX_PME_HPP
#define RANKFLUX_PME_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/coefficients.hpp"
#include "rankflux/grid.hpp"
#include "rankflux/initial_measure.hpp"
#include "rankflux/test_function.hpp"

namespace rankflux {

struct CflError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Largest stable explicit step for grid spacing dx: combines the diffusive
// bound through sup sigma^2 and the advective bound through sup |b|.
inline double cfl_dt_max(const CoefficientPair& coeffs, double dx) {
  double s2 = coeffs.sup_sigma();
  s2 *= s2;
  double bmax = coeffs.sup_abs_b();
  return 0.4 / (s2 / (dx * dx) + bmax / dx);
}

// Domain padding rule: effective support of lambda, plus drift transport,
// plus 6 sigma sqrt(T) of diffusive spread.
inline std::pair<double, double> padded_domain(const InitialLaw& law,
                                               const CoefficientPair& coeffs, double T) {
  double pad = coeffs.sup_abs_b() * T + 6.0 * coeffs.sup_sigma() * std::sqrt(T);
  return {law.support_lo - pad, law.support_hi + pad};
}

// Explicit conservative scheme for R_t = -B(R)_x + Sigma(R)_xx on the CDF:
// upwind in the advective term (direction from the sign of b(R)), centered
// second difference in the diffusive term, Dirichlet 0/1 boundaries.
inline SolutionGrid solve_pme(const InitialLaw& law, const CoefficientPair& coeffs,
                              const AntiderivativePair& anti, double x_min, double x_max,
                              double T, double dx, double dt) {
  if (!(x_max > x_min) || !(dx > 0.0) || !(dt > 0.0) || !(T >= 0.0))
    throw std::invalid_argument("solve_pme: bad grid parameters");
  double dt_max = cfl_dt_max(coeffs, dx);
  if (dt > dt_max * (1.0 + 1e-12))
    throw CflError("CFL violation: dt = " + std::to_string(dt) +
                   " exceeds stable bound " + std::to_string(dt_max) +
                   "; suggested dt = " + std::to_string(0.95 * dt_max));

  SolutionGrid g;
  g.x_min = x_min;
  g.dx = dx;
  g.nx = static_cast<std::size_t>(std::round((x_max - x_min) / dx)) + 1;
  std::size_t steps = T > 0.0 ? static_cast<std::size_t>(std::ceil(T / dt - 1e-9)) : 0;
  g.nt = steps + 1;
  g.dt = steps > 0 ? T / static_cast<double>(steps) : dt;
  g.R.assign(g.nt * g.nx, 0.0);
  g.Rx.assign(g.nt * g.nx, 0.0);

  for (std::size_t i = 0; i < g.nx; ++i) g.at(0, i) = law.cdf(g.x(i));
  if (g.at(0, 0) > 1e-6 || g.at(0, g.nx - 1) < 1.0 - 1e-6)
    throw std::invalid_argument(
        "solve_pme: domain too small, F_lambda not within 1e-6 of 0/1 at the edges");

  std::vector<double> Bv(g.nx), Sv(g.nx);
  for (std::size_t k = 0; k + 1 < g.nt; ++k) {
    const double* cur = &g.R[k * g.nx];
    double* nxt = &g.R[(k + 1) * g.nx];
    for (std::size_t i = 0; i < g.nx; ++i) {
      Bv[i] = anti.B(cur[i]);
      Sv[i] = anti.Sigma(cur[i]);
    }
    nxt[0] = 0.0;
    nxt[g.nx - 1] = 1.0;
    for (std::size_t i = 1; i + 1 < g.nx; ++i) {
      double adv = coeffs.b(cur[i]) >= 0.0 ? (Bv[i] - Bv[i - 1]) / dx
                                           : (Bv[i + 1] - Bv[i]) / dx;
      double diff = (Sv[i + 1] - 2.0 * Sv[i] + Sv[i - 1]) / (dx * dx);
      double v = cur[i] + g.dt * (-adv + diff);
      nxt[i] = std::clamp(v, 0.0, 1.0);
      if (v < -1e-12 || v > 1.0 + 1e-12)
        throw SchemeError("solve_pme: range violation at step " + std::to_string(k + 1));
    }
    for (std::size_t i = 1; i < g.nx; ++i)
      if (nxt[i] < nxt[i - 1] - 1e-9)
        throw SchemeError("solve_pme: monotonicity violation at step " +
                          std::to_string(k + 1) + ", cell " + std::to_string(i));
  }

  // density by centered differences, one-sided at the edges, clamped at 0
  for (std::size_t k = 0; k < g.nt; ++k) {
    const double* row = &g.R[k * g.nx];
    double* rx = &g.Rx[k * g.nx];
    rx[0] = std::max(0.0, (row[1] - row[0]) / dx);
    rx[g.nx - 1] = std::max(0.0, (row[g.nx - 1] - row[g.nx - 2]) / dx);
    for (std::size_t i = 1; i + 1 < g.nx; ++i)
      rx[i] = std::max(0.0, (row[i + 1] - row[i - 1]) / (2.0 * dx));
  }
  return g;
}

// Residual of the generalized-solution identity over a window, for a test
// function vanishing on the lateral boundary. Trapezoid quadrature on the
// grid nodes inside the window.
inline double weak_form_residual(const SolutionGrid& g, const AntiderivativePair& anti,
                                 const TestFunction2D& zeta, double t1, double t2,
                                 double x1, double x2) {
  if (!(t1 < t2) || !(x1 < x2)) throw std::invalid_argument("weak_form_residual: bad window");
  if (t1 < -1e-12 || t2 > g.t_max() + 1e-12 || x1 < g.x_min - 1e-12 ||
      x2 > g.x_max() + 1e-12)
    throw std::invalid_argument("weak_form_residual: window outside grid");
  for (double tt : {t1, 0.5 * (t1 + t2), t2})
    if (std::abs(zeta.f(tt, x1)) > 1e-12 || std::abs(zeta.f(tt, x2)) > 1e-12)
      throw std::invalid_argument(
          "weak_form_residual: zeta must vanish on the lateral boundary");

  auto snap = [](double v, double lo, double h) {
    return static_cast<std::size_t>(std::round((v - lo) / h));
  };
  std::size_t i1 = snap(x1, g.x_min, g.dx), i2 = snap(x2, g.x_min, g.dx);
  std::size_t k1 = snap(t1, 0.0, g.dt), k2 = snap(t2, 0.0, g.dt);

  auto trap_w = [](std::size_t j, std::size_t lo, std::size_t hi) {
    return (j == lo || j == hi) ? 0.5 : 1.0;
  };

  double lhs = 0.0;
  for (std::size_t k = k1; k <= k2; ++k) {
    double tt = g.t(k);
    double row = 0.0;
    for (std::size_t i = i1; i <= i2; ++i) {
      double xx = g.x(i), r = g.at(k, i);
      double integrand = zeta.fx(tt, xx) * anti.B(r) + zeta.fxx(tt, xx) * anti.Sigma(r) +
                         zeta.fs(tt, xx) * r;
      row += trap_w(i, i1, i2) * integrand;
    }
    lhs += trap_w(k, k1, k2) * row * g.dx;
  }
  lhs *= g.dt;

  double rhs = 0.0;
  for (std::size_t i = i1; i <= i2; ++i) {
    double xx = g.x(i);
    rhs += trap_w(i, i1, i2) * (zeta.f(t2, xx) * g.at(k2, i) - zeta.f(t1, xx) * g.at(k1, i));
  }
  rhs *= g.dx;
  for (std::size_t k = k1; k <= k2; ++k) {
    double tt = g.t(k);
    rhs += trap_w(k, k1, k2) * g.dt *
           (zeta.fx(tt, g.x(i2)) * anti.Sigma(g.at(k, i2)) -
            zeta.fx(tt, g.x(i1)) * anti.Sigma(g.at(k, i1)));
  }
  return std::abs(lhs - rhs);
}

}  // namespace rankflux

#endif  // RANKFLUX_PME_HPP
