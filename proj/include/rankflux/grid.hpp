#ifndef RANKFLUX_GRID_HPP
#define RANKFLUX_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankflux/common.hpp"

namespace rankflux {

// Space-time grid for the hydrodynamic limit CDF R and its density R_x.
// Rows are time slices; values stored row-major.
struct SolutionGrid {
  double x_min = 0.0, dx = 0.0;
  std::size_t nx = 0;
  double dt = 0.0;
  std::size_t nt = 0;  // number of time rows, times 0, dt, ..., (nt-1)*dt
  std::vector<double> R, Rx;

  double x(std::size_t i) const { return x_min + static_cast<double>(i) * dx; }
  double t(std::size_t k) const { return static_cast<double>(k) * dt; }
  double x_max() const { return x(nx - 1); }
  double t_max() const { return t(nt - 1); }

  double& at(std::size_t k, std::size_t i) { return R[k * nx + i]; }
  double at(std::size_t k, std::size_t i) const { return R[k * nx + i]; }
  double rx_at(std::size_t k, std::size_t i) const { return Rx[k * nx + i]; }

  // bilinear interpolation; x outside the grid clamps to the CDF tails
  double interp_R(double tq, double xq) const { return interp(R, tq, xq, true); }
  double interp_Rx(double tq, double xq) const { return interp(Rx, tq, xq, false); }

  double sup_Rx() const {
    double m = 0;
    for (double v : Rx) m = std::max(m, v);
    return m;
  }

  void write_csv(std::ostream& os, const std::string& provenance = "") const {
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "t,x,R,Rx\n";
    char buf[128];
    for (std::size_t k = 0; k < nt; ++k)
      for (std::size_t i = 0; i < nx; ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", t(k), x(i),
                      at(k, i), rx_at(k, i));
        os << buf;
      }
  }

  // binary cache: magic, version, grid descriptors as 64-bit fields, then
  // row-major doubles for R and Rx
  void write_binary(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write grid cache: " + path);
    const char magic[8] = {'R', 'F', 'L', 'X', 'G', 'R', 'D', '1'};
    os.write(magic, 8);
    auto w64 = [&os](std::uint64_t v) {
      os.write(reinterpret_cast<const char*>(&v), 8);
    };
    auto wd = [&os](double v) { os.write(reinterpret_cast<const char*>(&v), 8); };
    wd(x_min);
    wd(dx);
    w64(nx);
    wd(dt);
    w64(nt);
    os.write(reinterpret_cast<const char*>(R.data()), R.size() * sizeof(double));
    os.write(reinterpret_cast<const char*>(Rx.data()), Rx.size() * sizeof(double));
    if (!os) throw std::runtime_error("grid cache write failed: " + path);
  }

  static SolutionGrid read_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read grid cache: " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::string(magic, 8) != "RFLXGRD1")
      throw std::runtime_error("bad grid cache magic: " + path);
    SolutionGrid g;
    auto r64 = [&is]() {
      std::uint64_t v;
      is.read(reinterpret_cast<char*>(&v), 8);
      return v;
    };
    auto rd = [&is]() {
      double v;
      is.read(reinterpret_cast<char*>(&v), 8);
      return v;
    };
    g.x_min = rd();
    g.dx = rd();
    g.nx = r64();
    g.dt = rd();
    g.nt = r64();
    g.R.resize(g.nt * g.nx);
    g.Rx.resize(g.nt * g.nx);
    is.read(reinterpret_cast<char*>(g.R.data()), g.R.size() * sizeof(double));
    is.read(reinterpret_cast<char*>(g.Rx.data()), g.Rx.size() * sizeof(double));
    if (!is) throw std::runtime_error("grid cache truncated: " + path);
    return g;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = fnv1a(&x_min, sizeof(double));
    h = fnv1a(&dx, sizeof(double), h);
    h = fnv1a(&dt, sizeof(double), h);
    h = fnv1a(R, h);
    return fnv1a(Rx, h);
  }

 private:
  double interp(const std::vector<double>& field, double tq, double xq,
                bool cdf_clamp) const {
    if (tq < -1e-9 || tq > t_max() + 1e-9)
      throw std::domain_error("grid does not cover requested time t=" +
                              std::to_string(tq));
    tq = std::clamp(tq, 0.0, t_max());
    if (xq <= x_min) return cdf_clamp ? 0.0 : 0.0;
    if (xq >= x_max()) return cdf_clamp ? 1.0 : 0.0;
    double fi = (xq - x_min) / dx;
    double fk = nt > 1 ? tq / dt : 0.0;
    std::size_t i = std::min(static_cast<std::size_t>(fi), nx - 2);
    std::size_t k = nt > 1 ? std::min(static_cast<std::size_t>(fk), nt - 2) : 0;
    double ax = fi - static_cast<double>(i);
    double at_ = nt > 1 ? fk - static_cast<double>(k) : 0.0;
    std::size_t k1 = nt > 1 ? k + 1 : k;
    double v00 = field[k * nx + i], v01 = field[k * nx + i + 1];
    double v10 = field[k1 * nx + i], v11 = field[k1 * nx + i + 1];
    return (1 - at_) * ((1 - ax) * v00 + ax * v01) + at_ * ((1 - ax) * v10 + ax * v11);
  }
};

}  // namespace rankflux

#endif  // RANKFLUX_GRID_HPP
