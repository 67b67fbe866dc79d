#ifndef RANKFLUX_COEFFICIENTS_HPP
#define RANKFLUX_COEFFICIENTS_HPP

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rankflux/common.hpp"

namespace rankflux {

using RealFn = std::function<double(double)>;

// Shape-preserving cubic interpolant (Fritsch-Carlson) on a uniform grid over
// [0,1]. Used for coefficients supplied as sampled tables.
class MonotoneCubic {
 public:
  MonotoneCubic(std::vector<double> values) : v_(std::move(values)) {
    if (v_.size() < 2) throw std::invalid_argument("MonotoneCubic: need >= 2 samples");
    const std::size_t n = v_.size();
    h_ = 1.0 / static_cast<double>(n - 1);
    std::vector<double> delta(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = (v_[i + 1] - v_[i]) / h_;
    d_.resize(n);
    d_[0] = delta[0];
    d_[n - 1] = delta[n - 2];
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (delta[i - 1] * delta[i] <= 0.0)
        d_[i] = 0.0;
      else
        d_[i] = 2.0 * delta[i - 1] * delta[i] / (delta[i - 1] + delta[i]);
    }
    // limit tangents so each cubic piece stays within the data's local range
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (delta[i] == 0.0) {
        d_[i] = d_[i + 1] = 0.0;
        continue;
      }
      double a = d_[i] / delta[i], b = d_[i + 1] / delta[i];
      double s = a * a + b * b;
      if (s > 9.0) {
        double tau = 3.0 / std::sqrt(s);
        d_[i] = tau * a * delta[i];
        d_[i + 1] = tau * b * delta[i];
      }
    }
  }

  double eval(double x) const {
    auto [i, t] = locate(x);
    double h00 = (1 + 2 * t) * (1 - t) * (1 - t);
    double h10 = t * (1 - t) * (1 - t);
    double h01 = t * t * (3 - 2 * t);
    double h11 = t * t * (t - 1);
    return h00 * v_[i] + h10 * h_ * d_[i] + h01 * v_[i + 1] + h11 * h_ * d_[i + 1];
  }

  double deriv(double x) const {
    auto [i, t] = locate(x);
    double g00 = 6 * t * t - 6 * t;
    double g10 = 3 * t * t - 4 * t + 1;
    double g01 = -g00;
    double g11 = 3 * t * t - 2 * t;
    return (g00 * v_[i] + g01 * v_[i + 1]) / h_ + g10 * d_[i] + g11 * d_[i + 1];
  }

 private:
  std::pair<std::size_t, double> locate(double x) const {
    x = std::clamp(x, 0.0, 1.0);
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(x / h_), v_.size() - 2);
    return {i, (x - static_cast<double>(i) * h_) / h_};
  }
  std::vector<double> v_, d_;
  double h_;
};

// Rank-quantile drift/diffusion pair on [0,1]. sigma must stay strictly
// positive; derivatives are used only through their bounds.
struct CoefficientPair {
  RealFn b, sigma, b_prime, sigma_prime;
  // closed-form antiderivatives, when known at construction
  RealFn B_exact, Sigma_exact;
  std::string name = "custom";

  double eval_sigma_checked(double a) const {
    double s = sigma(a);
    if (!(s > 0.0))
      throw std::domain_error("ellipticity violation: sigma(" + std::to_string(a) +
                              ") = " + std::to_string(s));
    return s;
  }

  double sup_abs_b(int scan = 4097) const {
    double m = 0;
    for (int i = 0; i < scan; ++i)
      m = std::max(m, std::abs(b(static_cast<double>(i) / (scan - 1))));
    return m;
  }

  double sup_sigma(int scan = 4097) const {
    double m = 0;
    for (int i = 0; i < scan; ++i)
      m = std::max(m, sigma(static_cast<double>(i) / (scan - 1)));
    return m;
  }

  double inf_sigma(int scan = 4097) const {
    double m = sigma(0.0);
    for (int i = 0; i < scan; ++i)
      m = std::min(m, sigma(static_cast<double>(i) / (scan - 1)));
    return m;
  }

  static CoefficientPair constant(double drift, double diff) {
    CoefficientPair c;
    c.b = [drift](double) { return drift; };
    c.sigma = [diff](double) { return diff; };
    c.b_prime = [](double) { return 0.0; };
    c.sigma_prime = [](double) { return 0.0; };
    c.B_exact = [drift](double r) { return drift * r; };
    c.Sigma_exact = [diff](double r) { return 0.5 * diff * diff * r; };
    c.name = "constant";
    return c;
  }

  // b(a) = c0 + c1*a, sigma constant
  static CoefficientPair affine(double c0, double c1, double diff = 1.0) {
    CoefficientPair c;
    c.b = [c0, c1](double a) { return c0 + c1 * a; };
    c.sigma = [diff](double) { return diff; };
    c.b_prime = [c1](double) { return c1; };
    c.sigma_prime = [](double) { return 0.0; };
    c.B_exact = [c0, c1](double r) { return c0 * r + 0.5 * c1 * r * r; };
    c.Sigma_exact = [diff](double r) { return 0.5 * diff * diff * r; };
    c.name = "affine";
    return c;
  }

  // b(a) = a, sigma = 1
  static CoefficientPair linear() {
    CoefficientPair c = affine(0.0, 1.0, 1.0);
    c.name = "linear";
    return c;
  }

  // drift bump centered in the rank interval, constant diffusion
  static CoefficientPair smooth_bump(double amplitude = 1.0, double diff = 1.0) {
    CoefficientPair c;
    c.b = [amplitude](double a) {
      double u = 2.0 * a - 1.0;
      if (std::abs(u) >= 1.0) return 0.0;
      return amplitude * std::exp(1.0 - 1.0 / (1.0 - u * u));
    };
    c.b_prime = [amplitude](double a) {
      double u = 2.0 * a - 1.0;
      if (std::abs(u) >= 1.0) return 0.0;
      double w = 1.0 - u * u;
      return amplitude * std::exp(1.0 - 1.0 / w) * (-2.0 * u / (w * w)) * 2.0;
    };
    c.sigma = [diff](double) { return diff; };
    c.sigma_prime = [](double) { return 0.0; };
    c.Sigma_exact = [diff](double r) { return 0.5 * diff * diff * r; };
    c.name = "smooth-bump";
    return c;
  }

  static CoefficientPair from_samples(std::vector<double> b_vals,
                                      std::vector<double> sigma_vals) {
    auto bi = std::make_shared<MonotoneCubic>(std::move(b_vals));
    auto si = std::make_shared<MonotoneCubic>(std::move(sigma_vals));
    CoefficientPair c;
    c.b = [bi](double a) { return bi->eval(a); };
    c.b_prime = [bi](double a) { return bi->deriv(a); };
    c.sigma = [si](double a) { return si->eval(a); };
    c.sigma_prime = [si](double a) { return si->deriv(a); };
    c.name = "table";
    return c;
  }
};

struct AntiderivativePair {
  RealFn B, Sigma;
};

namespace detail {

// cumulative composite Simpson of f over [0,1]; returns a callable exact to
// quadrature accuracy at arbitrary r
inline RealFn cumulative_simpson(const RealFn& f, int cells) {
  if (cells < 1) throw std::invalid_argument("quadrature_cells must be positive");
  const double h = 1.0 / cells;
  auto cum = std::make_shared<std::vector<double>>(cells + 1, 0.0);
  for (int i = 0; i < cells; ++i) {
    double a = i * h;
    (*cum)[i + 1] = (*cum)[i] + h / 6.0 * (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h));
  }
  return [cum, f, h, cells](double r) {
    r = std::clamp(r, 0.0, 1.0);
    int i = std::min(static_cast<int>(r / h), cells - 1);
    double a = i * h;
    double part = (r - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + r)) + f(r));
    return (*cum)[i] + part;
  };
}

}  // namespace detail

inline AntiderivativePair antiderivatives(const CoefficientPair& coeffs,
                                          int quadrature_cells = 4096) {
  // ellipticity scan at the quadrature nodes
  for (int i = 0; i <= quadrature_cells; ++i)
    coeffs.eval_sigma_checked(static_cast<double>(i) / quadrature_cells);
  AntiderivativePair out;
  if (coeffs.B_exact)
    out.B = coeffs.B_exact;
  else
    out.B = detail::cumulative_simpson(coeffs.b, quadrature_cells);
  if (coeffs.Sigma_exact) {
    out.Sigma = coeffs.Sigma_exact;
  } else {
    auto sig = coeffs.sigma;
    out.Sigma = detail::cumulative_simpson(
        [sig](double a) { return 0.5 * sig(a) * sig(a); }, quadrature_cells);
  }
  return out;
}

// Piecewise constant on [0,1], jumps at 1/n, ..., 1; values[k] is the value
// at k/n (right-continuous from each jump).
struct StepFunction {
  int n = 0;
  std::vector<double> values;  // size n+1, values[0] = 0

  double operator()(double a) const {
    if (a <= 0.0) return values.front();
    if (a >= 1.0) return values.back();
    // cadlag: value jumps to values[k] at a = k/n
    int k = static_cast<int>(std::floor(a * n + 1e-12));
    return values[static_cast<std::size_t>(k)];
  }

  double at_grid(int k) const { return values[static_cast<std::size_t>(k)]; }
};

inline std::pair<StepFunction, StepFunction> discretized_step_functions(
    const CoefficientPair& coeffs, int n) {
  if (n < 1) throw std::invalid_argument("discretized_step_functions: n >= 1 required");
  StepFunction Bn, Sn;
  Bn.n = Sn.n = n;
  Bn.values.assign(n + 1, 0.0);
  Sn.values.assign(n + 1, 0.0);
  for (int k = 1; k <= n; ++k) {
    double a = static_cast<double>(k) / n;
    double s = coeffs.eval_sigma_checked(a);
    Bn.values[k] = Bn.values[k - 1] + coeffs.b(a) / n;
    Sn.values[k] = Sn.values[k - 1] + 0.5 * s * s / n;
  }
  return {Bn, Sn};
}

// Config-facing coefficient parsing: named built-ins ("constant", "linear",
// "affine:c0,c1", "smooth-bump") or "table:<path>" with two such files merged
// by the caller.
inline CoefficientPair parse_coefficient_name(const std::string& spec_str,
                                              double diff = 1.0) {
  if (spec_str == "constant") return CoefficientPair::constant(0.0, diff);
  if (spec_str == "linear") return CoefficientPair::linear();
  if (spec_str == "smooth-bump") return CoefficientPair::smooth_bump(1.0, diff);
  if (spec_str.rfind("affine:", 0) == 0) {
    std::string rest = spec_str.substr(7);
    auto comma = rest.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument("affine coefficient needs 'affine:c0,c1'");
    double c0 = std::stod(rest.substr(0, comma));
    double c1 = std::stod(rest.substr(comma + 1));
    return CoefficientPair::affine(c0, c1, diff);
  }
  throw std::invalid_argument("unknown coefficient name: " + spec_str);
}

// Sampled table file: header "a,value", then 1025 uniform rows on [0,1].
inline std::vector<double> read_coefficient_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open coefficient table: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("a,value", 0) != 0)
    throw std::runtime_error("coefficient table must start with header 'a,value': " + path);
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error("malformed coefficient table row: " + line);
    values.push_back(std::stod(line.substr(comma + 1)));
  }
  if (values.size() != 1025)
    throw std::runtime_error("coefficient table must have 1025 rows, got " +
                             std::to_string(values.size()));
  return values;
}

}  // namespace rankflux

#endif  // RANKFLUX_COEFFICIENTS_HPP
