#ifndef RANKFLUX_PARTICLE_HPP
#define RANKFLUX_PARTICLE_HPP

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/coefficients.hpp"
#include "rankflux/grid.hpp"
#include "rankflux/initial_measure.hpp"
#include "rankflux/random.hpp"

namespace rankflux {

struct ParticleEnsemble {
  std::vector<double> positions;
  double time = 0.0;

  std::size_t n() const { return positions.size(); }

  void check_finite() const {
    for (std::size_t i = 0; i < positions.size(); ++i)
      if (!std::isfinite(positions[i]))
        throw std::overflow_error("non-finite particle position at index " +
                                  std::to_string(i));
  }
};

// F_{rho^(n)}(X_i) = #{j : X_j <= X_i} / n. With distinct positions the
// returned multiset is exactly {1/n, ..., 1}.
inline std::vector<double> rank_quantiles(const ParticleEnsemble& e) {
  std::vector<double> sorted = e.positions;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  std::vector<double> q(sorted.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    auto it = std::upper_bound(sorted.begin(), sorted.end(), e.positions[i]);
    q[i] = static_cast<double>(it - sorted.begin()) / n;
  }
  return q;
}

inline double empirical_cdf(const ParticleEnsemble& e, double x) {
  std::size_t c = 0;
  for (double p : e.positions)
    if (p <= x) ++c;
  return static_cast<double>(c) / static_cast<double>(e.n());
}

// One Euler-Maruyama step of the rank-based system: coefficients evaluated at
// the current rank quantiles.
inline ParticleEnsemble step_interacting(const ParticleEnsemble& e,
                                         const CoefficientPair& coeffs, double dt,
                                         const std::vector<double>& increments) {
  if (increments.size() != e.n())
    throw std::invalid_argument("step_interacting: one increment per particle");
  std::vector<double> q = rank_quantiles(e);
  ParticleEnsemble out;
  out.positions.resize(e.n());
  out.time = e.time + dt;
  for (std::size_t i = 0; i < e.n(); ++i)
    out.positions[i] =
        e.positions[i] + coeffs.b(q[i]) * dt + coeffs.sigma(q[i]) * increments[i];
  out.check_finite();
  return out;
}

// One step of the surrogate system driven by the hydrodynamic limit R.
inline ParticleEnsemble step_surrogate(const ParticleEnsemble& e,
                                       const CoefficientPair& coeffs,
                                       const SolutionGrid& R, double dt,
                                       const std::vector<double>& increments) {
  if (increments.size() != e.n())
    throw std::invalid_argument("step_surrogate: one increment per particle");
  ParticleEnsemble out;
  out.positions.resize(e.n());
  out.time = e.time + dt;
  for (std::size_t i = 0; i < e.n(); ++i) {
    double r = R.interp_R(e.time, e.positions[i]);
    out.positions[i] =
        e.positions[i] + coeffs.b(r) * dt + coeffs.sigma(r) * increments[i];
  }
  out.check_finite();
  return out;
}

// The X and Xbar systems advanced from a shared initial sample with shared
// Brownian increments.
struct CoupledPaths {
  std::size_t n = 0;
  double dt = 0.0;
  std::vector<double> times;  // snapshot times, starting at 0
  std::vector<std::vector<double>> interacting;  // positions per snapshot
  std::vector<std::vector<double>> surrogate;
  std::vector<std::vector<double>> increments;  // per step, kept on request
  std::uint64_t increments_checksum = 1469598103934665603ull;
};

inline CoupledPaths simulate_coupled(const InitialLaw& law, const CoefficientPair& coeffs,
                                     const SolutionGrid& R, std::size_t n, double T,
                                     double dt, RngStream& stream,
                                     std::size_t observe_every = 1,
                                     bool retain_increments = false) {
  if (n == 0 || !(dt > 0.0) || T < 0.0)
    throw std::invalid_argument("simulate_coupled: bad parameters");
  std::size_t steps = T > 0.0 ? static_cast<std::size_t>(std::llround(T / dt)) : 0;
  if (std::abs(static_cast<double>(steps) * dt - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("simulate_coupled: dt must divide T");
  if (T > 0.0 && R.t_max() < T - 1e-9)
    throw std::domain_error("simulate_coupled: R grid does not cover [0,T]");

  CoupledPaths out;
  out.n = n;
  out.dt = dt;
  ParticleEnsemble x, xbar;
  x.positions = sample_iid(law, n, stream);
  xbar = x;
  out.times.push_back(0.0);
  out.interacting.push_back(x.positions);
  out.surrogate.push_back(xbar.positions);

  std::vector<double> db(n);
  const double sdt = std::sqrt(dt);
  for (std::size_t k = 0; k < steps; ++k) {
    for (auto& v : db) v = sdt * stream.normal();
    out.increments_checksum = fnv1a(db, out.increments_checksum);
    x = step_interacting(x, coeffs, dt, db);
    xbar = step_surrogate(xbar, coeffs, R, dt, db);
    if (retain_increments) out.increments.push_back(db);
    if ((k + 1) % observe_every == 0 || k + 1 == steps) {
      out.times.push_back(x.time);
      out.interacting.push_back(x.positions);
      out.surrogate.push_back(xbar.positions);
    }
  }
  return out;
}

}  // namespace rankflux

#endif  // RANKFLUX_PARTICLE_HPP
