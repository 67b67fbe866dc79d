#ifndef RANKFLUX_INITIAL_MEASURE_HPP
#define RANKFLUX_INITIAL_MEASURE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/coefficients.hpp"
#include "rankflux/random.hpp"

namespace rankflux {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
}

// Acklam's rational approximation with one Halley refinement step.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("normal_quantile: p must lie in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p > phigh) {
    double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  }
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1 + 0.5 * x * u);
}

// Initial law lambda: bounded density, closed-form CDF and quantile,
// finite moments past order 2.
struct InitialLaw {
  RealFn density, cdf, quantile;
  double moment_order = 4.0;
  std::string name = "custom";
  // effective support, used for simulation-domain padding
  double support_lo = 0.0, support_hi = 1.0;

  static InitialLaw uniform01() {
    InitialLaw l;
    l.density = [](double x) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; };
    l.cdf = [](double x) { return std::clamp(x, 0.0, 1.0); };
    l.quantile = [](double u) { return u; };
    l.moment_order = std::numeric_limits<double>::infinity();
    l.name = "uniform";
    l.support_lo = 0.0;
    l.support_hi = 1.0;
    return l;
  }

  static InitialLaw normal(double mu = 0.0, double s = 1.0) {
    if (!(s > 0.0)) throw std::invalid_argument("normal law: s > 0 required");
    InitialLaw l;
    l.density = [mu, s](double x) { return normal_pdf((x - mu) / s) / s; };
    l.cdf = [mu, s](double x) { return normal_cdf((x - mu) / s); };
    l.quantile = [mu, s](double u) { return mu + s * normal_quantile(u); };
    l.moment_order = std::numeric_limits<double>::infinity();
    l.name = "normal";
    l.support_lo = mu - 7.0 * s;
    l.support_hi = mu + 7.0 * s;
    return l;
  }

  static InitialLaw logistic(double mu = 0.0, double s = 1.0) {
    if (!(s > 0.0)) throw std::invalid_argument("logistic law: s > 0 required");
    InitialLaw l;
    l.density = [mu, s](double x) {
      double e = std::exp(-(x - mu) / s);
      return e / (s * (1 + e) * (1 + e));
    };
    l.cdf = [mu, s](double x) { return 1.0 / (1.0 + std::exp(-(x - mu) / s)); };
    l.quantile = [mu, s](double u) {
      if (!(u > 0.0 && u < 1.0))
        throw std::domain_error("logistic quantile: u must lie in (0,1)");
      return mu + s * std::log(u / (1 - u));
    };
    l.moment_order = std::numeric_limits<double>::infinity();
    l.name = "logistic";
    l.support_lo = mu - 25.0 * s;
    l.support_hi = mu + 25.0 * s;
    return l;
  }

  static InitialLaw truncated_normal(double mu, double s, double lo, double hi) {
    if (!(s > 0.0 && lo < hi))
      throw std::invalid_argument("truncated_normal: need s > 0 and lo < hi");
    double Flo = normal_cdf((lo - mu) / s), Fhi = normal_cdf((hi - mu) / s);
    double Z = Fhi - Flo;
    InitialLaw l;
    l.density = [=](double x) {
      if (x < lo || x > hi) return 0.0;
      return normal_pdf((x - mu) / s) / (s * Z);
    };
    l.cdf = [=](double x) {
      if (x <= lo) return 0.0;
      if (x >= hi) return 1.0;
      return (normal_cdf((x - mu) / s) - Flo) / Z;
    };
    l.quantile = [=](double u) {
      if (!(u > 0.0 && u < 1.0))
        throw std::domain_error("truncated_normal quantile: u must lie in (0,1)");
      return mu + s * normal_quantile(Flo + u * Z);
    };
    l.moment_order = std::numeric_limits<double>::infinity();
    l.name = "truncated-normal";
    l.support_lo = lo;
    l.support_hi = hi;
    return l;
  }
};

// i.i.d. draws by quantile transform; deterministic given the stream state.
inline std::vector<double> sample_iid(const InitialLaw& law, std::size_t n,
                                      RngStream& stream) {
  std::vector<double> out(n);
  for (auto& x : out) {
    double u;
    do {
      u = stream.uniform();
    } while (!(u > 0.0 && u < 1.0));
    x = law.quantile(u);
  }
  return out;
}

// Brownian bridge evaluated at reparametrized points F_lambda(grid_i).
struct BridgePath {
  std::vector<double> grid;
  std::vector<double> values;
};

// Exact Gaussian simulation: sequential conditional sampling of the bridge at
// the sorted levels u_i = F_lambda(grid_i), pinned at u=0 and u=1. Repeated
// levels (flat CDF regions) repeat the bridge value.
inline BridgePath sample_bridge(const InitialLaw& law, const std::vector<double>& grid,
                                RngStream& stream) {
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]))
      throw std::invalid_argument("sample_bridge: grid must be strictly increasing");
  BridgePath path;
  path.grid = grid;
  path.values.resize(grid.size());
  double u_prev = 0.0, v_prev = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double u = std::clamp(law.cdf(grid[i]), 0.0, 1.0);
    if (u <= u_prev + 1e-15) {
      path.values[i] = (u <= 1e-15) ? 0.0 : v_prev;
      u_prev = std::max(u_prev, u);
      v_prev = path.values[i];
      continue;
    }
    if (u >= 1.0 - 1e-15) {
      path.values[i] = 0.0;
      u_prev = 1.0;
      v_prev = 0.0;
      continue;
    }
    // bridge conditional on beta(u_prev) = v_prev and beta(1) = 0
    double mean = v_prev * (1.0 - u) / (1.0 - u_prev);
    double var = (u - u_prev) * (1.0 - u) / (1.0 - u_prev);
    path.values[i] = stream.normal(mean, std::sqrt(var));
    u_prev = u;
    v_prev = path.values[i];
  }
  return path;
}

inline InitialLaw parse_initial_law(const std::string& name,
                                    const std::vector<double>& params) {
  if (name == "uniform") return InitialLaw::uniform01();
  if (name == "normal") {
    double mu = params.size() > 0 ? params[0] : 0.0;
    double s = params.size() > 1 ? params[1] : 1.0;
    return InitialLaw::normal(mu, s);
  }
  if (name == "logistic") {
    double mu = params.size() > 0 ? params[0] : 0.0;
    double s = params.size() > 1 ? params[1] : 1.0;
    return InitialLaw::logistic(mu, s);
  }
  if (name == "truncated-normal") {
    if (params.size() < 4)
      throw std::invalid_argument("truncated-normal needs params [mu, s, lo, hi]");
    return InitialLaw::truncated_normal(params[0], params[1], params[2], params[3]);
  }
  throw std::invalid_argument("unknown initial law: " + name);
}

}  // namespace rankflux

#endif  // RANKFLUX_INITIAL_MEASURE_HPP
