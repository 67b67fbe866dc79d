#ifndef RANKFLUX_WASSERSTEIN_HPP
#define RANKFLUX_WASSERSTEIN_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/coefficients.hpp"
#include "rankflux/random.hpp"

namespace rankflux {

// One-dimensional measure in one of three representations: sorted sample,
// gridded CDF, or analytic cdf/quantile callables.
struct Measure1D {
  enum class Kind { Empirical, Gridded, Analytic };
  Kind kind = Kind::Empirical;
  std::vector<double> sample;            // Empirical, sorted ascending
  std::vector<double> x_grid, cdf_vals;  // Gridded, cdf nondecreasing in [0,1]
  RealFn cdf_fn, quantile_fn;            // Analytic

  static Measure1D empirical(std::vector<double> xs) {
    if (xs.empty()) throw std::invalid_argument("empirical measure needs >= 1 point");
    std::sort(xs.begin(), xs.end());
    Measure1D m;
    m.kind = Kind::Empirical;
    m.sample = std::move(xs);
    return m;
  }

  static Measure1D gridded(std::vector<double> xs, std::vector<double> F) {
    if (xs.size() != F.size() || xs.size() < 2)
      throw std::invalid_argument("gridded measure: matched grids, >= 2 nodes");
    for (std::size_t i = 1; i < F.size(); ++i)
      if (F[i] < F[i - 1] - 1e-12)
        throw std::invalid_argument("gridded measure: CDF must be nondecreasing");
    Measure1D m;
    m.kind = Kind::Gridded;
    m.x_grid = std::move(xs);
    m.cdf_vals = std::move(F);
    return m;
  }

  static Measure1D analytic(RealFn cdf, RealFn quantile) {
    Measure1D m;
    m.kind = Kind::Analytic;
    m.cdf_fn = std::move(cdf);
    m.quantile_fn = std::move(quantile);
    return m;
  }

  double cdf(double x) const {
    switch (kind) {
      case Kind::Empirical: {
        auto it = std::upper_bound(sample.begin(), sample.end(), x);
        return static_cast<double>(it - sample.begin()) / sample.size();
      }
      case Kind::Gridded: {
        if (x <= x_grid.front()) return cdf_vals.front();
        if (x >= x_grid.back()) return cdf_vals.back();
        auto it = std::upper_bound(x_grid.begin(), x_grid.end(), x);
        std::size_t i = it - x_grid.begin() - 1;
        double t = (x - x_grid[i]) / (x_grid[i + 1] - x_grid[i]);
        return cdf_vals[i] + t * (cdf_vals[i + 1] - cdf_vals[i]);
      }
      case Kind::Analytic:
        return cdf_fn(x);
    }
    return 0.0;
  }

  // left-continuous generalized inverse, q(a) = inf{x : F(x) >= a}
  double quantile(double a) const {
    if (!(a > 0.0 && a <= 1.0))
      throw std::domain_error("quantile: a must lie in (0,1]");
    switch (kind) {
      case Kind::Empirical: {
        std::size_t k = static_cast<std::size_t>(
            std::ceil(a * static_cast<double>(sample.size()) - 1e-12));
        return sample[std::min(k == 0 ? 0 : k - 1, sample.size() - 1)];
      }
      case Kind::Gridded: {
        auto it = std::lower_bound(cdf_vals.begin(), cdf_vals.end(), a);
        if (it == cdf_vals.end()) return x_grid.back();
        std::size_t i = it - cdf_vals.begin();
        if (i == 0 || cdf_vals[i] == cdf_vals[i - 1]) return x_grid[i];
        double t = (a - cdf_vals[i - 1]) / (cdf_vals[i] - cdf_vals[i - 1]);
        return x_grid[i - 1] + t * (x_grid[i] - x_grid[i - 1]);
      }
      case Kind::Analytic:
        return quantile_fn(std::min(a, 1.0 - 1e-15));
    }
    return 0.0;
  }

  double range_lo() const {
    switch (kind) {
      case Kind::Empirical: return sample.front();
      case Kind::Gridded: return x_grid.front();
      case Kind::Analytic: return quantile_fn(1e-12);
    }
    return 0.0;
  }
  double range_hi() const {
    switch (kind) {
      case Kind::Empirical: return sample.back();
      case Kind::Gridded: return x_grid.back();
      case Kind::Analytic: return quantile_fn(1.0 - 1e-12);
    }
    return 0.0;
  }
};

namespace detail {

// integral of |linear through (a,da),(b,db)| with exact zero-crossing split
inline double abs_linear_integral(double a, double b, double da, double db) {
  double len = b - a;
  if (len <= 0.0) return 0.0;
  if (da * db >= 0.0) return 0.5 * (std::abs(da) + std::abs(db)) * len;
  double xstar = a + da / (da - db) * len;
  return 0.5 * std::abs(da) * (xstar - a) + 0.5 * std::abs(db) * (b - xstar);
}

inline const double* gl8_nodes() {
  static const double n[8] = {-0.9602898564975363, -0.7966664774136267,
                              -0.5255324099163290, -0.1834346424956498,
                              0.1834346424956498,  0.5255324099163290,
                              0.7966664774136267,  0.9602898564975363};
  return n;
}
inline const double* gl8_weights() {
  static const double w[8] = {0.1012285362903763, 0.2223810344533745,
                              0.3137066458778873, 0.3626837833783620,
                              0.3626837833783620, 0.3137066458778873,
                              0.2223810344533745, 0.1012285362903763};
  return w;
}

}  // namespace detail

// W_1 via the CDF representation. Exact piecewise integration when both
// measures are piecewise (empirical/gridded); fine Simpson otherwise.
inline double w1_cdf(const Measure1D& mu, const Measure1D& nu) {
  bool analytic = mu.kind == Measure1D::Kind::Analytic ||
                  nu.kind == Measure1D::Kind::Analytic;
  double lo = std::min(mu.range_lo(), nu.range_lo());
  double hi = std::max(mu.range_hi(), nu.range_hi());
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw std::runtime_error("w1_cdf: unbounded integration range (moment failure)");
  if (hi <= lo) return 0.0;
  if (analytic) {
    const int cells = 1 << 15;
    double h = (hi - lo) / cells, total = 0.0;
    for (int i = 0; i < cells; ++i) {
      double a = lo + i * h;
      auto d = [&](double x) { return std::abs(mu.cdf(x) - nu.cdf(x)); };
      total += h / 6.0 * (d(a) + 4.0 * d(a + 0.5 * h) + d(a + h));
    }
    return total;
  }
  // merge breakpoints; between them each CDF is constant or linear
  std::vector<double> bp;
  auto add = [&bp](const Measure1D& m) {
    if (m.kind == Measure1D::Kind::Empirical)
      bp.insert(bp.end(), m.sample.begin(), m.sample.end());
    else
      bp.insert(bp.end(), m.x_grid.begin(), m.x_grid.end());
  };
  add(mu);
  add(nu);
  std::sort(bp.begin(), bp.end());
  bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
    double a = bp[i], b = bp[i + 1];
    // right-continuous values on the open interval: evaluate at a for the
    // piecewise-constant parts, interpolate linearly for gridded parts
    auto seg_val = [&](const Measure1D& m, double at) {
      if (m.kind == Measure1D::Kind::Empirical) return m.cdf(a);
      return m.cdf(at);
    };
    double da = seg_val(mu, a) - seg_val(nu, a);
    double db = seg_val(mu, b) - seg_val(nu, b);
    total += detail::abs_linear_integral(a, b, da, db);
  }
  return total;
}

// W_p^p between sorted equal-size samples.
inline double wp_sorted_pow(const std::vector<double>& a, const std::vector<double>& b,
                            double p) {
  if (a.size() != b.size())
    throw std::invalid_argument("wp_sorted_pow: sizes must match");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += std::pow(std::abs(a[i] - b[i]), p);
  return s / static_cast<double>(a.size());
}

// W_p via the quantile representation.
inline double wp_quantile(const Measure1D& mu, const Measure1D& nu, double p) {
  if (p < 1.0) throw std::domain_error("wp_quantile: p >= 1 required");
  if (mu.kind == Measure1D::Kind::Empirical && nu.kind == Measure1D::Kind::Empirical &&
      mu.sample.size() == nu.sample.size())
    return std::pow(wp_sorted_pow(mu.sample, nu.sample, p), 1.0 / p);

  // merged partition of (0,1): quantile functions are continuous within cells
  std::vector<double> bp{0.0, 1.0};
  auto add = [&bp](const Measure1D& m) {
    switch (m.kind) {
      case Measure1D::Kind::Empirical: {
        std::size_t n = m.sample.size();
        for (std::size_t k = 1; k < n; ++k)
          bp.push_back(static_cast<double>(k) / static_cast<double>(n));
        break;
      }
      case Measure1D::Kind::Gridded:
        for (double v : m.cdf_vals)
          if (v > 0.0 && v < 1.0) bp.push_back(v);
        break;
      case Measure1D::Kind::Analytic:
        for (int k = 1; k < 2048; ++k) bp.push_back(k / 2048.0);
        break;
    }
  };
  add(mu);
  add(nu);
  std::sort(bp.begin(), bp.end());
  bp.erase(std::unique(bp.begin(), bp.end()), bp.end());

  const double* gn = detail::gl8_nodes();
  const double* gw = detail::gl8_weights();
  auto diff = [&](double a) { return mu.quantile(a) - nu.quantile(a); };
  auto gl_cell = [&](double a0, double a1) {
    double mid = 0.5 * (a0 + a1), half = 0.5 * (a1 - a0), s = 0.0;
    for (int k = 0; k < 8; ++k)
      s += gw[k] * std::pow(std::abs(diff(mid + half * gn[k])), p);
    return s * half;
  };
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < bp.size(); ++i) {
    double a0 = bp[i], a1 = bp[i + 1];
    if (a1 - a0 < 1e-15) continue;
    double eps = 1e-13 * std::max(1.0, a1 - a0);
    double d0 = diff(std::min(a0 + eps, a1)), d1 = diff(std::max(a1 - eps, a0));
    if (d0 * d1 < 0.0) {
      // single crossing within the cell; bisect and integrate both halves
      double lo = a0 + eps, hi = a1 - eps;
      for (int it = 0; it < 80 && hi - lo > 1e-15; ++it) {
        double mid = 0.5 * (lo + hi);
        (diff(mid) * d0 <= 0.0 ? hi : lo) = mid;
      }
      double r = 0.5 * (lo + hi);
      total += gl_cell(a0, r) + gl_cell(r, a1);
    } else {
      total += gl_cell(a0, a1);
    }
  }
  return std::pow(total, 1.0 / p);
}

struct UniformRateRow {
  std::size_t n;
  double estimate;  // E[W_p^p]^{1/p}
  double stderr_pp; // standard error of the W_p^p mean
};

struct UniformRateResult {
  double p = 2.0;
  std::vector<UniformRateRow> rows;
  double slope = 0.0;  // log-log slope of estimate vs n
};

// Empirical-measure-of-uniforms rate study: averages W_p(emp_n, U[0,1])^p.
inline UniformRateResult uniform_rate_experiment(double p,
                                                 const std::vector<std::size_t>& n_list,
                                                 std::size_t replications,
                                                 RngStream& stream) {
  for (std::size_t i = 1; i < n_list.size(); ++i)
    if (n_list[i] <= n_list[i - 1])
      throw std::invalid_argument("uniform_rate_experiment: n_list must ascend");
  Measure1D uniform = Measure1D::analytic(
      [](double x) { return std::clamp(x, 0.0, 1.0); }, [](double a) { return a; });
  UniformRateResult res;
  res.p = p;
  std::vector<double> logn, logv;
  for (std::size_t n : n_list) {
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t r = 0; r < replications; ++r) {
      std::vector<double> xs(n);
      for (auto& x : xs) x = stream.uniform();
      double wpp = std::pow(wp_quantile(Measure1D::empirical(std::move(xs)), uniform, p), p);
      sum += wpp;
      sumsq += wpp * wpp;
    }
    double mean = sum / replications;
    double var = std::max(0.0, sumsq / replications - mean * mean);
    UniformRateRow row;
    row.n = n;
    row.estimate = std::pow(mean, 1.0 / p);
    row.stderr_pp = std::sqrt(var / replications);
    res.rows.push_back(row);
    logn.push_back(std::log(static_cast<double>(n)));
    logv.push_back(std::log(row.estimate));
  }
  res.slope = fit_slope(logn, logv);
  return res;
}

}  // namespace rankflux

#endif  // RANKFLUX_WASSERSTEIN_HPP
