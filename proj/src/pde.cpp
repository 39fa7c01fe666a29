#include "ldgf/pde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ldgf {

Kernel::Kernel(Grid grid, double h, std::vector<double> entries, std::string method)
    : grid_(grid), h_(h), e_(std::move(entries)), method_(std::move(method)) {
  if (!(h > 0.0)) throw PreconditionError("kernel: h must be positive");
  if (e_.size() != grid_.size() * grid_.size()) throw PreconditionError("kernel: entry count mismatch");
  for (double v : e_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw PreconditionError("kernel: entries must be finite and >= 0");
}

double Kernel::row_mass_defect() const {
  const std::size_t n = size();
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += e_[i * n + j];
    worst = std::max(worst, std::abs(s * grid_.dx() - 1.0));
  }
  return worst;
}

GridMeasure Kernel::push_forward(const GridMeasure& mu) const {
  if (mu.grid() != grid_) throw PreconditionError("push_forward: grid mismatch");
  const std::size_t n = size();
  std::vector<double> w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(mu[i] > 0.0)) continue;
    const double m = mu[i] * grid_.dx();
    for (std::size_t j = 0; j < n; ++j) w[j] += m * e_[i * n + j];
  }
  return GridMeasure(grid_, std::move(w));
}

double heat_density(double z, double h) { return std::exp(-z * z / (4.0 * h)) / std::sqrt(4.0 * std::numbers::pi * h); }

double affine_fp_density(double x, double y, double c, double h) {
  double z = y - (x - c * h);
  return std::exp(-z * z / (4.0 * h)) / std::sqrt(4.0 * std::numbers::pi * h);
}

double affine_fp_density_factored(double x, double y, double c, double h) {
  return heat_density(y - x, h) * std::exp(-0.5 * c * y + 0.5 * c * x - 0.25 * c * c * h);
}

void require_resolution(const Grid& grid, double h) {
  if (!(h > 0.0)) throw PreconditionError("h must be positive");
  if (grid.dx() > std::sqrt(h) * (1.0 + 1e-12)) throw PreconditionError("grid too coarse for h");
}

namespace {

// Fill rows from log-densities and renormalise each row to unit mass.
Kernel kernel_from_logs(const Grid& grid, double h, const std::vector<double>& logk, const std::string& method) {
  const std::size_t n = grid.size();
  std::vector<double> e(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      e[i * n + j] = std::exp(logk[i * n + j]);
      s += e[i * n + j];
    }
    s *= grid.dx();
    for (std::size_t j = 0; j < n; ++j) e[i * n + j] /= s;
  }
  return Kernel(grid, h, std::move(e), method);
}

double log_heat(double z, double h) { return -z * z / (4.0 * h) - 0.5 * std::log(4.0 * std::numbers::pi * h); }

}  // namespace

Kernel heat_kernel(const Grid& grid, double h) {
  require_resolution(grid, h);
  const std::size_t n = grid.size();
  std::vector<double> logk(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) logk[i * n + j] = log_heat(grid.center(j) - grid.center(i), h);
  return kernel_from_logs(grid, h, logk, "heat");
}

Kernel fp_kernel_affine(const Grid& grid, double c, double h) {
  require_resolution(grid, h);
  const std::size_t n = grid.size();
  std::vector<double> logk(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) logk[i * n + j] = log_heat(grid.center(j) - (grid.center(i) - c * h), h);
  return kernel_from_logs(grid, h, logk, "affine");
}

std::pair<double, double> beta_bounds(const Potential& psi, const Grid& grid) {
  double lo = kInfinity, hi = -kInfinity;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double x = grid.center(i);
    double d1 = psi.d1(x);
    double v = 0.5 * psi.d2(x) - 0.25 * d1 * d1;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

bool interior_row(const Grid& grid, std::size_t i, double h) {
  const double s = 2.0 * std::sqrt(h);
  const double x = grid.center(i);
  double out = 0.5 * std::erfc((x - grid.x_min()) / s) + 0.5 * std::erfc((grid.x_max() - x) / s);
  return out < 1e-10;
}

double sandwich_check(const Kernel& eta, const Potential& psi, double beta0, double beta1) {
  const Grid& g = eta.grid();
  const double h = eta.time();
  const std::size_t n = g.size();
  const double peak = heat_density(0.0, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!interior_row(g, i, h)) continue;
    const double x = g.center(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double y = g.center(j);
      const double th = heat_density(y - x, h);
      if (!(th > 1e-12)) continue;
      const double base = -0.5 * psi(y) + 0.5 * psi(x);
      const double lower = th * std::exp(base + beta0 * h);
      const double upper = th * std::exp(base + beta1 * h);
      const double v = eta(i, j);
      worst = std::max({worst, (lower - v) / peak, (v - upper) / peak});
    }
  }
  return worst;
}

namespace {

// theta-scheme stepper for du/dt = D u'' + (u psi')' on cell weights with zero-flux walls;
// diffusion weighted by theta, drift explicit.
class Stepper {
 public:
  Stepper(const Grid& g, const Potential& psi, double dt, double diffusion, double theta)
      : n_(g.size()), dt_(dt), theta_(theta), k_(diffusion / (g.dx() * g.dx())), face_(n_ - 1), lower_(n_), diag_(n_),
        upper_(n_), cp_(n_), inv_(n_) {
    for (std::size_t i = 0; i + 1 < n_; ++i) face_[i] = psi.d1(g.x_min() + (static_cast<double>(i) + 1.0) * g.dx()) / g.dx();
    drift_ = !psi.is_zero();
    // (I - theta dt D L), L the Neumann Laplacian
    const double a = theta_ * dt_ * k_;
    for (std::size_t i = 0; i < n_; ++i) {
      lower_[i] = i > 0 ? -a : 0.0;
      upper_[i] = i + 1 < n_ ? -a : 0.0;
      diag_[i] = 1.0 + a * ((i > 0 ? 1.0 : 0.0) + (i + 1 < n_ ? 1.0 : 0.0));
    }
    // Thomas factorisation
    cp_[0] = upper_[0] / diag_[0];
    inv_[0] = 1.0 / diag_[0];
    for (std::size_t i = 1; i < n_; ++i) {
      double den = diag_[i] - lower_[i] * cp_[i - 1];
      inv_[i] = 1.0 / den;
      cp_[i] = upper_[i] * inv_[i];
    }
  }

  void step(std::vector<double>& u, std::vector<double>& rhs) const {
    const double b = (1.0 - theta_) * dt_ * k_;
    for (std::size_t i = 0; i < n_; ++i) {
      double lap = 0.0;
      if (i > 0) lap += u[i - 1] - u[i];
      if (i + 1 < n_) lap += u[i + 1] - u[i];
      rhs[i] = u[i] + b * lap;
    }
    if (drift_) {
      // flux through face i+1/2 is psi'(face) * (u_i + u_{i+1}) / 2
      for (std::size_t i = 0; i + 1 < n_; ++i) {
        double flux = dt_ * face_[i] * 0.5 * (u[i] + u[i + 1]);
        rhs[i] += flux;
        rhs[i + 1] -= flux;
      }
    }
    // forward/back substitution
    rhs[0] *= inv_[0];
    for (std::size_t i = 1; i < n_; ++i) rhs[i] = (rhs[i] - lower_[i] * rhs[i - 1]) * inv_[i];
    for (std::size_t i = n_ - 1; i-- > 0;) rhs[i] -= cp_[i] * rhs[i + 1];
    u.swap(rhs);
  }

 private:
  std::size_t n_;
  double dt_, theta_, k_;
  std::vector<double> face_, lower_, diag_, upper_, cp_, inv_;
  bool drift_ = false;
};

double max_abs_dpsi(const Grid& g, const Potential& psi) {
  double m = 0.0;
  for (std::size_t i = 0; i + 1 < g.size(); ++i)
    m = std::max(m, std::abs(psi.d1(g.x_min() + (static_cast<double>(i) + 1.0) * g.dx())));
  return m;
}

void check_stability(const Grid& g, const Potential& psi, double dt, double diffusion) {
  const double c = max_abs_dpsi(g, psi);
  if (c == 0.0) return;
  if (!(diffusion > 0.0) || dt * c * c > 2.0 * diffusion * (1.0 + 1e-12))
    throw PreconditionError("stability violation: dt * max|psi'|^2 must not exceed 2 * diffusion");
}

// Propagator for one macro step dt, with optional implicit-Euler startup.
struct Propagator {
  Stepper cn, be;
  Propagator(const Grid& g, const Potential& psi, double dt, double diffusion)
      : cn(g, psi, dt, diffusion, 0.5), be(g, psi, 0.5 * dt, diffusion, 1.0) {}
  void apply(std::vector<double>& u, std::vector<double>& tmp, bool startup) const {
    if (startup) {
      be.step(u, tmp);
      be.step(u, tmp);
    } else {
      cn.step(u, tmp);
    }
  }
};

std::size_t step_count(double T, double& dt) {
  if (!(T > 0.0)) throw PreconditionError("T must be positive");
  if (!(dt > 0.0)) throw PreconditionError("dt must be positive");
  double r = T / dt;
  auto n = static_cast<std::size_t>(std::llround(r));
  if (n == 0 || std::abs(static_cast<double>(n) * dt - T) > 1e-9 * T) n = static_cast<std::size_t>(std::ceil(r));
  dt = T / static_cast<double>(n);
  return n;
}

}  // namespace

double max_stable_dt(const Grid& grid, const Potential& psi, double diffusion) {
  const double c = max_abs_dpsi(grid, psi);
  return c == 0.0 ? kInfinity : 2.0 * diffusion / (c * c);
}

Kernel fp_kernel_numeric(const Grid& grid, const Potential& psi, double h, int substeps) {
  require_resolution(grid, h);
  if (substeps < 1) throw PreconditionError("fp_kernel_numeric: substeps must be >= 1");
  const double dt = h / substeps;
  check_stability(grid, psi, dt, 1.0);
  const std::size_t n = grid.size();
  Propagator prop(grid, psi, dt, 1.0);
  std::vector<double> e(n * n), u(n), tmp(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(u.begin(), u.end(), 0.0);
    u[i] = 1.0;
    for (int s = 0; s < substeps; ++s) prop.apply(u, tmp, s < 2);
    double total = 0.0;
    for (double& v : u) {
      v = std::max(v, 0.0);
      total += v;
    }
    for (std::size_t j = 0; j < n; ++j) e[i * n + j] = u[j] / (total * grid.dx());
  }
  return Kernel(grid, h, std::move(e), "numeric");
}

Kernel fp_kernel_semiclassical(const Grid& grid, const Potential& psi, double h) {
  require_resolution(grid, h);
  const std::size_t n = grid.size();
  // W(z) = int_{x_min}^z psi'(s)^2 ds on a fine table, Simpson per panel, Hermite lookup
  const std::size_t per_cell = 8;
  const std::size_t m = n * per_cell;
  const double a = grid.x_min();
  const double dz = (grid.x_max() - grid.x_min()) / static_cast<double>(m);
  auto sq = [&](double z) {
    double d = psi.d1(z);
    return d * d;
  };
  std::vector<double> W(m + 1, 0.0), dW(m + 1);
  for (std::size_t k = 0; k <= m; ++k) dW[k] = sq(a + static_cast<double>(k) * dz);
  for (std::size_t k = 0; k < m; ++k) {
    double z0 = a + static_cast<double>(k) * dz;
    W[k + 1] = W[k] + dz / 6.0 * (dW[k] + 4.0 * sq(z0 + 0.5 * dz) + dW[k + 1]);
  }
  auto Wat = [&](double z) {
    double t = (z - a) / dz;
    auto k = static_cast<std::size_t>(std::clamp(std::floor(t), 0.0, static_cast<double>(m - 1)));
    double s = t - static_cast<double>(k);
    double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
    double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
    return h00 * W[k] + h10 * dz * dW[k] + h01 * W[k + 1] + h11 * dz * dW[k + 1];
  };
  std::vector<double> U(n), V(n), P(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = grid.center(i);
    U[i] = 0.25 * Wat(x) - 0.5 * psi.d1(x);
    double d1 = psi.d1(x);
    V[i] = 0.25 * d1 * d1 - 0.5 * psi.d2(x);
    P[i] = psi(x);
  }
  std::vector<double> logk(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = grid.center(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double y = grid.center(j);
      double avg = i == j ? V[i] : (U[j] - U[i]) / (y - x);
      logk[i * n + j] = log_heat(y - x, h) - 0.5 * P[j] + 0.5 * P[i] - h * avg;
    }
  }
  return kernel_from_logs(grid, h, logk, "semiclassical");
}

PdeSolution solve_system(const GridMeasure& rhoN0, const GridMeasure& rhoD0, const Potential& psi, double lambda,
                         double T, double dt, const PdeOptions& opts) {
  if (lambda < 0.0) throw PreconditionError("lambda must be >= 0 (birth is not supported)");
  if (rhoN0.grid() != rhoD0.grid()) throw PreconditionError("solve_system: grid mismatch");
  if (opts.diffusion < 0.0) throw PreconditionError("diffusion must be >= 0");
  const Grid& g = rhoN0.grid();
  const std::size_t steps = step_count(T, dt);
  check_stability(g, psi, dt, opts.diffusion);
  Propagator prop(g, psi, dt, opts.diffusion);
  const double lose = -std::expm1(-lambda * dt);

  PdeSolution sol{g, {}, {}, {}, dt, "crank-nicolson diffusion, explicit central drift, exact decay factor"};
  std::vector<double> uN(rhoN0.weights()), uD(rhoD0.weights()), tmp(g.size());
  auto record = [&](std::size_t k) {
    std::vector<double> a(uN), b(uD);
    for (double& v : a) v = std::max(v, 0.0);
    for (double& v : b) v = std::max(v, 0.0);
    sol.times.push_back(static_cast<double>(k) * dt);
    sol.frames_N.emplace_back(g, std::move(a));
    sol.frames_D.emplace_back(g, std::move(b));
  };
  record(0);
  const bool has_d = !rhoD0.empty() || lambda > 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const bool startup = static_cast<int>(k) <= opts.startup_steps;
    prop.apply(uN, tmp, startup);
    if (has_d) {
      prop.apply(uD, tmp, startup);
      for (std::size_t i = 0; i < uN.size(); ++i) {
        double moved = lose * uN[i];
        uD[i] += moved;
        uN[i] -= moved;
      }
    }
    if (k == steps || (opts.frame_every > 0 && k % opts.frame_every == 0)) record(k);
  }
  return sol;
}

PdeSolution solve_fp_decay(const GridMeasure& rho0, const Potential& psi, double lambda, double T, double dt,
                           const PdeOptions& opts) {
  if (lambda < 0.0) throw PreconditionError("lambda must be >= 0 (birth is not supported)");
  if (opts.diffusion < 0.0) throw PreconditionError("diffusion must be >= 0");
  const Grid& g = rho0.grid();
  const std::size_t steps = step_count(T, dt);
  check_stability(g, psi, dt, opts.diffusion);
  Propagator prop(g, psi, dt, opts.diffusion);
  const double lose = -std::expm1(-lambda * dt);
  PdeSolution sol{g, {}, {}, {}, dt, "crank-nicolson diffusion, explicit central drift, exact decay factor"};
  std::vector<double> u(rho0.weights()), tmp(g.size());
  auto record = [&](std::size_t k) {
    std::vector<double> a(u);
    for (double& v : a) v = std::max(v, 0.0);
    sol.times.push_back(static_cast<double>(k) * dt);
    sol.frames_N.emplace_back(g, std::move(a));
    sol.frames_D.emplace_back(g);
  };
  record(0);
  for (std::size_t k = 1; k <= steps; ++k) {
    prop.apply(u, tmp, static_cast<int>(k) <= opts.startup_steps);
    for (double& v : u) v -= lose * v;
    if (k == steps || (opts.frame_every > 0 && k % opts.frame_every == 0)) record(k);
  }
  return sol;
}

}  // namespace ldgf
