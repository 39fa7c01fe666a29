#include "ldgf/jko.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ldgf/transport.hpp"

namespace ldgf {

DecayRates::DecayRates(double lambda_, double h_) : lambda(lambda_), h(h_) {
  if (!(lambda >= 0.0)) throw PreconditionError("decay rate must be nonnegative");
  if (!(h > 0.0)) throw PreconditionError("h must be positive");
  r_NN = std::exp(-lambda * h);
  r_ND = -std::expm1(-lambda * h);
  r_DN = 0.0;
  r_DD = 1.0;
}

HalfFreeEnergy::HalfFreeEnergy(const Grid& grid, const Potential& psi) : dx_(grid.dx()), psi_(grid.size()) {
  for (std::size_t j = 0; j < grid.size(); ++j) psi_[j] = psi(grid.center(j));
}

double HalfFreeEnergy::value(std::size_t j, double w) const {
  if (w <= 0.0) return 0.0;
  return 0.5 * (w * std::log(w / dx_) + w * psi_[j]);
}

double HalfFreeEnergy::derivative(std::size_t j, double w) const {
  if (w <= 0.0) return -kInfinity;
  return 0.5 * (std::log(w / dx_) + 1.0 + psi_[j]);
}

double HalfFreeEnergy::second_derivative(std::size_t, double w) const { return 0.5 / w; }

namespace {

// Two-term running sum; breakpoints near the total mass need more than one double.
struct Sum2 {
  double hi = 0.0, lo = 0.0;
  void add(double x) {
    double s = hi + x;
    double bp = s - hi;
    lo += (hi - (s - bp)) + (x - bp);
    hi = s;
  }
  double value() const { return hi + lo; }
};

double diff(const Sum2& a, const Sum2& b) { return (a.hi - b.hi) + (a.lo - b.lo); }

// g_j(nu) = -1/2 nu log(nu/dx) + t log(t/dx) - t log r_ND, t = nu - a_j, nu >= a_j
class ContractedDecayEnergy : public CellEnergy {
 public:
  ContractedDecayEnergy(const GridMeasure& rhoN, double r_ND)
      : dx_(rhoN.grid().dx()), a_(rhoN.weights()), log_r_(std::log(r_ND)) {}

  double value(std::size_t j, double nu) const override {
    double t = nu - a_[j];
    double v = nu > 0.0 ? -0.5 * nu * std::log(nu / dx_) : 0.0;
    if (t > 0.0) v += t * std::log(t / dx_) - t * log_r_;
    return v;
  }
  double derivative(std::size_t j, double nu) const override {
    double t = nu - a_[j];
    if (t <= 0.0) return -kInfinity;
    return std::log(t) - 0.5 * std::log(nu) - 0.5 * std::log(dx_) + 0.5 - log_r_;
  }
  double second_derivative(std::size_t j, double nu) const override { return 1.0 / (nu - a_[j]) - 0.5 / nu; }
  double lower(std::size_t j) const override { return a_[j]; }

 private:
  double dx_;
  std::vector<double> a_;
  double log_r_;
};

// Newton on the breakpoints B_j = sum_{k<=j} w_k, the mass spread uniformly over each
// cell. Per cell the transport cost c_j depends on (B_{j-1}, B_j) only, so the Hessian
// is tridiagonal.
class CellNewton {
 public:
  CellNewton(const GridMeasure& bar, double h, const CellEnergy& energy)
      : bar_(bar), h_(h), g_(energy), n_(bar.size()), dx_(bar.grid().dx()),
        fwd_(make_side(bar, false)), bwd_(make_side(bar, true)) {
    mass_ = fwd_.A.back().value();
  }

  InnerResult solve() {
    std::vector<double> nu = start();
    std::vector<Cell> cells(n_);
    std::vector<double> G(n_ - 1), D(n_ - 1), E(n_ - 1), step(n_ - 1), dnu(n_), trial(n_);
    double F = evaluate(nu, &cells);
    std::size_t it = 0;
    double kkt = kInfinity;
    int polish = 0;
    for (; it < 2000; ++it) {
      gradient_hessian(nu, cells, G, D, E);
      kkt = 0.0;
      for (double v : G) kkt = std::max(kkt, std::abs(v));
      if (!solve_tridiagonal(D, E, G, step)) throw ConvergenceError("inner solver: singular Hessian", kkt, static_cast<long>(it));
      double dec = 0.0;
      for (std::size_t j = 0; j + 1 < n_; ++j) dec -= G[j] * step[j];
      if (dec <= 1e-30 * std::max(1.0, std::abs(F)) || kkt < 1e-11) break;
      double tmax = 1.0;
      for (std::size_t j = 0; j < n_; ++j) {
        double prev = j == 0 ? 0.0 : step[j - 1];
        double next = j + 1 == n_ ? 0.0 : step[j];
        dnu[j] = next - prev;
        if (dnu[j] < 0.0) tmax = std::min(tmax, 0.995 * (nu[j] - g_.lower(j)) / -dnu[j]);
      }
      double t = tmax;
      bool moved = false;
      if (dec < 1e-14 * std::max(1.0, std::abs(F))) {
        // below the resolution of F the line search is blind; take the Newton step
        for (std::size_t j = 0; j < n_; ++j) nu[j] = std::max(nu[j] + t * dnu[j], g_.lower(j) + 1e-300);
        F = evaluate(nu, &cells);
        if (++polish > 20) break;
        continue;
      }
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        for (std::size_t j = 0; j < n_; ++j) trial[j] = std::max(nu[j] + t * dnu[j], g_.lower(j) + 1e-300);
        double Ft = evaluate(trial, nullptr);
        if (Ft <= F - 1e-4 * t * dec) {
          nu.swap(trial);
          F = evaluate(nu, &cells);
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    if (!(kkt <= 1e-6))
      throw ConvergenceError("inner solver: KKT residual too large", kkt, static_cast<long>(it));
    return finish(std::move(nu), kkt, it);
  }

 private:
  struct Cell {
    double c, I0, I1, fa, fb, dXa, dXb;
  };

  std::vector<double> start() const {
    double low = 0.0;
    bool interior = true;
    std::vector<double> base(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      low += g_.lower(j);
      base[j] = bar_[j] - g_.lower(j);
      interior &= base[j] > 0.0;
    }
    double excess = mass_ - low;
    if (!(excess > 0.0)) throw PreconditionError("lower bounds exhaust the mass");
    if (!interior)
      for (std::size_t j = 0; j < n_; ++j) base[j] = std::max(base[j], 0.0) + 1e-3 * excess / static_cast<double>(n_);
    double s = 0.0;
    for (double v : base) s += v;
    std::vector<double> nu(n_);
    for (std::size_t j = 0; j < n_; ++j) nu[j] = g_.lower(j) + base[j] * excess / s;
    return nu;
  }

  // One orientation of the problem: cell left edges and the pieces of rho_bar, both
  // read from the start of the quantile axis.
  struct Side {
    double x0;
    std::vector<double> left, w;
    std::vector<Sum2> A;
  };

  static Side make_side(const GridMeasure& bar, bool reflect) {
    const std::size_t n = bar.size();
    const double dx = bar.grid().dx();
    Side sd;
    sd.x0 = reflect ? -bar.grid().x_max() : bar.grid().x_min();
    Sum2 run;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t i = reflect ? n - 1 - k : k;
      if (bar[i] > 0.0) {
        sd.left.push_back(sd.x0 + dx * static_cast<double>(k));
        sd.w.push_back(bar[i]);
        run.add(bar[i]);
        sd.A.push_back(run);
      }
    }
    return sd;
  }

  // Integrals of f = Y - Xbar over the first `count` cells, Y the quantile of nu and Xbar
  // that of rho_bar; positions are measured from the start of the side, which keeps the
  // tail cells near that end resolved.
  double sweep(const Side& sd, const std::vector<double>& nu, std::size_t count, Cell* cells) const {
    const std::size_t P = sd.w.size();
    Sum2 B, zero;
    std::size_t p = 0;
    double cost = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      const double v = nu[j];
      Sum2 a = B;
      B.add(v);
      const double L = sd.x0 + dx_ * static_cast<double>(j);
      while (p + 1 < P && diff(sd.A[p], a) <= 0.0) ++p;
      const Sum2& Aprev = p == 0 ? zero : sd.A[p - 1];
      Cell cl{0.0, 0.0, 0.0, 0.0, 0.0, dx_ / sd.w[p], 0.0};
      double off = diff(a, Aprev);  // position of the segment start inside piece p
      cl.fa = L - (sd.left[p] + dx_ * off / sd.w[p]);
      const double span = diff(B, a);
      double sig0 = 0.0;
      while (true) {
        double sig1 = p + 1 == P ? span : std::min(diff(sd.A[p], a), span);
        double ell = sig1 - sig0;
        if (ell > 0.0) {
          double tau0 = sig0 / v;
          double f0 = L + dx_ * tau0 - (sd.left[p] + dx_ * off / sd.w[p]);
          double beta = dx_ / v - dx_ / sd.w[p];
          cl.c += ell * (f0 * f0 + f0 * beta * ell + beta * beta * ell * ell / 3.0);
          cl.I0 += ell * f0 + beta * ell * ell / 2.0;
          cl.I1 += f0 * tau0 * ell + (f0 / v + beta * tau0) * ell * ell / 2.0 + beta / v * ell * ell * ell / 3.0;
        }
        if (p + 1 < P && diff(sd.A[p], B) <= 0.0) {
          ++p;
          sig0 = std::max(sig1, 0.0);
          off = 0.0;
          continue;
        }
        break;
      }
      const Sum2& Ab = p == 0 ? zero : sd.A[p - 1];
      cl.fb = L + dx_ - (sd.left[p] + dx_ * diff(B, Ab) / sd.w[p]);
      cl.dXb = dx_ / sd.w[p];
      cost += cl.c;
      if (cells) cells[j] = cl;
    }
    return cost;
  }

  double evaluate(const std::vector<double>& nu, std::vector<Cell>* cells) const {
    double energy = 0.0;
    std::size_t split = 0;
    double half = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      energy += g_.value(j, nu[j]);
      if (half < 0.5 * mass_) {
        half += nu[j];
        split = j + 1;
      }
    }
    std::vector<double> rev(nu.rbegin(), nu.rend());
    std::vector<Cell> rc(n_ - split);
    double cost = sweep(fwd_, nu, split, cells ? cells->data() : nullptr);
    cost += sweep(bwd_, rev, n_ - split, cells ? rc.data() : nullptr);
    if (cells) {
      // map reflected cells back: f changes sign, tau -> 1 - tau, ends swap
      for (std::size_t k = 0; k < rc.size(); ++k) {
        const Cell& r = rc[k];
        (*cells)[n_ - 1 - k] = Cell{r.c, -r.I0, -r.I0 + r.I1, -r.fb, -r.fa, r.dXb, r.dXa};
      }
    }
    return energy + cost / (4.0 * h_);
  }

  void gradient_hessian(const std::vector<double>& nu, const std::vector<Cell>& c, std::vector<double>& G,
                        std::vector<double>& D, std::vector<double>& E) const {
    const double k = 1.0 / (4.0 * h_);
    for (std::size_t j = 0; j + 1 < n_; ++j) {
      const Cell& l = c[j];
      const Cell& r = c[j + 1];
      const double vl = nu[j], vr = nu[j + 1];
      double cb = l.fb * l.fb - 2.0 * dx_ / vl * l.I1;
      double ca = -r.fa * r.fa - 2.0 * dx_ / vr * (r.I0 - r.I1);
      G[j] = g_.derivative(j, vl) - g_.derivative(j + 1, vr) + k * (cb + ca);
      double cbb = -2.0 * l.fb * l.dXb - 2.0 * dx_ / vl * l.fb + 2.0 * dx_ * dx_ / (3.0 * vl) +
                   4.0 * dx_ / (vl * vl) * l.I1;
      double caa = 2.0 * r.fa * r.dXa + 2.0 * dx_ / vr * r.fa + 2.0 * dx_ * dx_ / (3.0 * vr) -
                   4.0 * dx_ / (vr * vr) * (r.I0 - r.I1);
      D[j] = g_.second_derivative(j, vl) + g_.second_derivative(j + 1, vr) + k * (cbb + caa);
      if (j + 2 < n_) {
        const Cell& rr = c[j + 1];
        double cab = dx_ * dx_ / (3.0 * vr) + 2.0 * dx_ / (vr * vr) * (rr.I0 - 2.0 * rr.I1);
        E[j] = -g_.second_derivative(j + 1, vr) + k * cab;
      }
    }
  }

  // Solves H x = -G for the symmetric tridiagonal H = (D, E); regularises if a pivot fails.
  static bool solve_tridiagonal(const std::vector<double>& D, const std::vector<double>& E,
                                const std::vector<double>& G, std::vector<double>& x) {
    const std::size_t m = D.size();
    std::vector<double> cp(m), dp(m);
    double shift = 0.0;
    for (int attempt = 0; attempt < 30; ++attempt) {
      bool ok = true;
      for (std::size_t i = 0; i < m; ++i) {
        double di = D[i] + shift * std::abs(D[i]);
        double piv = i == 0 ? di : di - E[i - 1] * cp[i - 1];
        if (!(piv > 0.0) || !std::isfinite(piv)) {
          ok = false;
          break;
        }
        cp[i] = i + 1 < m ? E[i] / piv : 0.0;
        dp[i] = ((i == 0 ? 0.0 : -E[i - 1] * dp[i - 1]) - G[i]) / piv;
      }
      if (ok) {
        for (std::size_t i = m; i-- > 0;) x[i] = dp[i] - (i + 1 < m ? cp[i] * x[i + 1] : 0.0);
        return true;
      }
      shift = shift == 0.0 ? 1e-12 : shift * 10.0;
    }
    return false;
  }

  InnerResult finish(std::vector<double> nu, double kkt, std::size_t it) const {
    double s = 0.0, low = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      s += nu[j];
      low += g_.lower(j);
    }
    double c = (mass_ - low) / (s - low);
    for (std::size_t j = 0; j < n_; ++j) nu[j] = g_.lower(j) + (nu[j] - g_.lower(j)) * c;
    GridMeasure out(bar_.grid(), std::move(nu));
    double obj = wasserstein2_cells(bar_, out) / (4.0 * h_);
    for (std::size_t j = 0; j < n_; ++j) obj += g_.value(j, out[j]);
    return {out, obj, kkt, it};
  }

  const GridMeasure& bar_;
  double h_;
  const CellEnergy& g_;
  std::size_t n_;
  double dx_;
  Side fwd_, bwd_;
  double mass_;
};

void require_same_grid(const GridMeasure& a, const GridMeasure& b) {
  if (a.grid() != b.grid()) throw PreconditionError("measures live on different grids");
}

double d2_or_zero(const GridMeasure& a, const GridMeasure& b) {
  if (a.empty() && b.empty()) return 0.0;
  return wasserstein2_cells(a, b);
}

double xlogy(double x, double y) {
  if (x == 0.0) return 0.0;
  return x * std::log(y);
}

}  // namespace

InnerResult minimize_cell_energy(const GridMeasure& rho_bar, double h, const CellEnergy& energy) {
  if (!(h > 0.0)) throw PreconditionError("h must be positive");
  if (rho_bar.empty()) throw PreconditionError("empty measure");
  if (rho_bar.size() < 2) throw PreconditionError("grid needs at least two cells");
  return CellNewton(rho_bar, h, energy).solve();
}

GridMeasure minimize_free_energy(const GridMeasure& rho_bar, double h, const Potential& psi) {
  return minimize_cell_energy(rho_bar, h, HalfFreeEnergy(rho_bar.grid(), psi)).minimiser;
}

double free_energy_objective(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const Potential& psi) {
  return 0.5 * free_energy(rho, psi) + wasserstein2_cells(rho_bar, rho) / (4.0 * h);
}

double eval_K_fp(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const Potential& psi) {
  require_same_grid(rho, rho_bar);
  if (!masses_match(rho.mass(), rho_bar.mass())) throw PreconditionError("unequal masses");
  return 0.5 * free_energy(rho, psi) - 0.5 * free_energy(rho_bar, psi) + wasserstein2_cells(rho_bar, rho) / (4.0 * h);
}

double eval_K_df(const GridMeasure& rho, const GridMeasure& rho_bar, double h) {
  require_same_grid(rho, rho_bar);
  if (!masses_match(rho.mass(), rho_bar.mass())) throw PreconditionError("unequal masses");
  return 0.5 * entropy(rho) - 0.5 * entropy(rho_bar) + wasserstein2_cells(rho_bar, rho) / (4.0 * h);
}

double eval_K_dc(const GridMeasure& rho, const GridMeasure& rho_bar, const DecayRates& rates) {
  require_same_grid(rho, rho_bar);
  std::vector<double> rest(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (rho[i] < 0.0 || rho[i] > rho_bar[i] * (1.0 + 1e-14)) return kInfinity;
    rest[i] = std::max(rho_bar[i] - rho[i], 0.0);
  }
  GridMeasure r2(rho.grid(), std::move(rest));
  double a = rho.mass(), b = r2.mass();
  if (a > 0.0 && rates.r_NN == 0.0) return kInfinity;
  if (b > 0.0 && rates.r_ND == 0.0) return kInfinity;
  return -entropy_or_zero(rho_bar) + entropy_or_zero(rho) + entropy_or_zero(r2) - xlogy(a, rates.r_NN) -
         xlogy(b, rates.r_ND);
}

double eval_K_dfdc(const SplitState& s, const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar,
                   const DecayRates& rates, double h) {
  GridMeasure nt = s.rho_NT();
  if (!masses_match(nt.mass(), rhoN_bar.mass()) || !masses_match(s.rho_DD.mass(), rhoD_bar.mass())) return kInfinity;
  double a = s.rho_NN.mass(), b = s.rho_ND.mass();
  if (a > 0.0 && rates.r_NN == 0.0) return kInfinity;
  if (b > 0.0 && rates.r_ND == 0.0) return kInfinity;
  double v = -0.5 * entropy_or_zero(nt) - 0.5 * entropy_or_zero(rhoN_bar) + d2_or_zero(rhoN_bar, nt) / (4.0 * h);
  v += 0.5 * entropy_or_zero(s.rho_DD) - 0.5 * entropy_or_zero(rhoD_bar) + d2_or_zero(rhoD_bar, s.rho_DD) / (4.0 * h);
  v += entropy_or_zero(s.rho_NN) + entropy_or_zero(s.rho_ND) - xlogy(a, rates.r_NN) - xlogy(b, rates.r_ND);
  return v;
}

double eval_K_fpdc(const SplitState& s, const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar,
                   const DecayRates& rates, double h, const Potential& psi) {
  double v = eval_K_dfdc(s, rhoN_bar, rhoD_bar, rates, h);
  if (is_infinite(v)) return v;
  GridMeasure all = s.rho_NT() + s.rho_DD;
  return v + 0.5 * potential_energy(all, psi) - 0.5 * potential_energy(rhoN_bar + rhoD_bar, psi);
}

double eval_K_bar_dec_at(const GridMeasure& rhoN, const GridMeasure& rhoND, const GridMeasure& rhoN_bar,
                         const DecayRates& rates, double h) {
  GridMeasure nt = rhoN + rhoND;
  if (!masses_match(nt.mass(), rhoN_bar.mass())) return kInfinity;
  double a = rhoN.mass(), b = rhoND.mass();
  if (a > 0.0 && rates.r_NN == 0.0) return kInfinity;
  if (b > 0.0 && rates.r_ND == 0.0) return kInfinity;
  return -0.5 * entropy_or_zero(nt) - 0.5 * entropy_or_zero(rhoN_bar) + d2_or_zero(rhoN_bar, nt) / (4.0 * h) +
         entropy_or_zero(rhoN) + entropy_or_zero(rhoND) - xlogy(a, rates.r_NN) - xlogy(b, rates.r_ND);
}

double eval_K_bar_dec(const GridMeasure& rhoN, const GridMeasure& rhoN_bar, const DecayRates& rates, double h) {
  require_same_grid(rhoN, rhoN_bar);
  double a = rhoN.mass(), m = rhoN_bar.mass();
  if (a > m * (1.0 + 1e-12)) throw PreconditionError("mass violation: |rho_N| exceeds |rho_bar_N|");
  GridMeasure zero(rhoN.grid());
  if (masses_match(a, m) || rates.r_ND == 0.0) {
    if (!masses_match(a, m)) return kInfinity;
    return eval_K_bar_dec_at(rhoN, zero, rhoN_bar, rates, h);
  }
  InnerResult r = minimize_cell_energy(rhoN_bar, h, ContractedDecayEnergy(rhoN, rates.r_ND));
  std::vector<double> nd(rhoN.size());
  for (std::size_t i = 0; i < nd.size(); ++i) nd[i] = std::max(r.minimiser[i] - rhoN[i], 0.0);
  return eval_K_bar_dec_at(rhoN, GridMeasure(rhoN.grid(), std::move(nd)), rhoN_bar, rates, h);
}

double eval_K_reduced_kw(const GridMeasure& rhoN, const GridMeasure& rhoN_bar, const DecayRates& rates, double h) {
  GridMeasure nt = rhoN.scaled(1.0 / rates.r_NN);
  if (!masses_match(nt.mass(), rhoN_bar.mass())) return kInfinity;
  return 0.5 * entropy_or_zero(nt) - 0.5 * entropy_or_zero(rhoN_bar) + d2_or_zero(rhoN_bar, nt) / (4.0 * h);
}

std::pair<GridMeasure, GridMeasure> decay_split(const GridMeasure& rho_NT, const DecayRates& rates) {
  return {rho_NT.scaled(rates.r_NN), rho_NT.scaled(rates.r_ND)};
}

double decay_mixing_functional(const GridMeasure& rho_NN, const GridMeasure& rho_NT, const DecayRates& rates) {
  require_same_grid(rho_NN, rho_NT);
  std::vector<double> rest(rho_NN.size());
  for (std::size_t i = 0; i < rest.size(); ++i) {
    if (rho_NN[i] < 0.0 || rho_NN[i] > rho_NT[i] * (1.0 + 1e-14)) return kInfinity;
    rest[i] = std::max(rho_NT[i] - rho_NN[i], 0.0);
  }
  GridMeasure nd(rho_NN.grid(), std::move(rest));
  double a = rho_NN.mass(), b = nd.mass();
  if (a > 0.0 && rates.r_NN == 0.0) return kInfinity;
  if (b > 0.0 && rates.r_ND == 0.0) return kInfinity;
  return entropy_or_zero(rho_NN) + entropy_or_zero(nd) - xlogy(a, rates.r_NN) - xlogy(b, rates.r_ND);
}

GridMeasure jko_step_fp(const GridMeasure& rho_bar, double h, const Potential& psi) {
  return minimize_free_energy(rho_bar, h, psi);
}

SplitState jko_step_dfdc(const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar, const DecayRates& rates,
                         double h, const Potential& psi) {
  require_same_grid(rhoN_bar, rhoD_bar);
  GridMeasure nt = rhoN_bar.empty() ? GridMeasure(rhoN_bar.grid()) : jko_step_fp(rhoN_bar, h, psi);
  GridMeasure dd = rhoD_bar.empty() ? GridMeasure(rhoD_bar.grid()) : jko_step_fp(rhoD_bar, h, psi);
  auto [nn, nd] = decay_split(nt, rates);
  return {nn, nd, dd};
}

double FlowTrajectory::transport_sum() const {
  double s = 0.0;
  for (const auto& d : steps) s += d.d2N + d.d2D;
  return s;
}

double FlowTrajectory::max_second_moment() const {
  double m = 0.0;
  for (std::size_t k = 0; k < rho_N.size(); ++k) m = std::max(m, second_moment(rho_N[k] + rho_D[k]));
  return m;
}

FlowTrajectory run_flow(const GridMeasure& rhoN0, const GridMeasure& rhoD0, double h, double T, double lambda,
                        const Potential& psi) {
  require_same_grid(rhoN0, rhoD0);
  if (!(h > 0.0) || !(T > 0.0)) throw PreconditionError("h and T must be positive");
  DecayRates rates(lambda, h);
  double ratio = T / h;
  auto K = static_cast<std::size_t>(std::floor(ratio + 1e-9));
  if (K == 0) throw PreconditionError("T/h must be at least 1");

  FlowTrajectory tr;
  tr.h = h;
  if (std::abs(ratio - std::round(ratio)) > 1e-9)
    tr.monitor_failures.push_back("T/h is not an integer; taking " + std::to_string(K) + " steps");
  tr.times.push_back(0.0);
  tr.rho_N.push_back(rhoN0);
  tr.rho_D.push_back(rhoD0);
  const double total0 = rhoN0.mass() + rhoD0.mass();
  const double tol = 1e-9;

  for (std::size_t k = 1; k <= K; ++k) {
    const GridMeasure& nb = tr.rho_N.back();
    const GridMeasure& db = tr.rho_D.back();
    SplitState s = jko_step_dfdc(nb, db, rates, h, psi);
    GridMeasure nt = s.rho_NT();

    StepDiagnostics d{};
    d.k = k;
    d.t = static_cast<double>(k) * h;
    d.d2N = d2_or_zero(nb, nt);
    d.d2D = d2_or_zero(db, s.rho_DD);
    GridMeasure rN = s.rho_N(), rD = s.rho_D();
    d.massN = rN.mass();
    d.massD = rD.mass();
    d.SN = entropy_or_zero(rN);
    d.SD = entropy_or_zero(rD);
    d.K_value = eval_K_fpdc(s, nb, db, rates, h, psi);
    d.M2 = second_moment(rN + rD);
    auto F = [&](const GridMeasure& m) { return m.empty() ? 0.0 : free_energy(m, psi); };
    d.single_step_slack = (d.d2N + d.d2D) / (2.0 * h) - (F(nb) - F(nt) + F(db) - F(s.rho_DD));
    auto [cn, cd] = decay_split(nb, rates);
    SplitState still{cn, cd, db};
    d.comparison_slack = d.K_value - eval_K_fpdc(still, nb, db, rates, h, psi);

    if (d.single_step_slack > tol)
      tr.monitor_failures.push_back("step " + std::to_string(k) + ": single-step estimate violated");
    if (d.comparison_slack > tol)
      tr.monitor_failures.push_back("step " + std::to_string(k) + ": accepted state worse than comparison state");
    if (std::abs(d.massN + d.massD - total0) > 1e-10 * std::max(1.0, total0))
      tr.monitor_failures.push_back("step " + std::to_string(k) + ": total mass drift");

    tr.steps.push_back(d);
    tr.times.push_back(d.t);
    tr.rho_N.push_back(std::move(rN));
    tr.rho_D.push_back(std::move(rD));
    if (decay_brace(tr, k, rates) > tol)
      tr.monitor_failures.push_back("step " + std::to_string(k) + ": decay brace positive");
  }
  return tr;
}

double decay_brace(const FlowTrajectory& tr, std::size_t n, const DecayRates& rates) {
  if (n + 1 > tr.rho_N.size()) throw PreconditionError("trajectory shorter than requested");
  double s = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    double nn = tr.rho_N[k].mass();
    double dk = tr.rho_D[k].mass();
    double dd = tr.rho_D[k - 1].mass();
    double nd = std::max(dk - dd, 0.0);
    s += xlogy(nn, rates.r_NN) + xlogy(nd, rates.r_ND);
    if (dk > 0.0) s -= xlogy(nd, nd / dk) + xlogy(dd, dd / dk);
  }
  return s;
}

void ReactionRates::validate() const {
  const std::size_t S = states.size();
  if (S == 0 || r.size() != S * S) throw PreconditionError("rate matrix has the wrong shape");
  for (std::size_t mu = 0; mu < S; ++mu) {
    double off = 0.0;
    for (std::size_t nu = 0; nu < S; ++nu) {
      double v = at(mu, nu);
      if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError("rate outside [0,1]");
      if (nu != mu) off += v;
    }
    if (std::abs(at(mu, mu) - (1.0 - off)) > 1e-12) throw PreconditionError("rate matrix rows must sum to 1");
  }
}

std::map<std::string, GridMeasure> jko_step_reaction(const std::map<std::string, GridMeasure>& in,
                                                     const ReactionRates& rates, double h, const Potential& psi) {
  rates.validate();
  const std::size_t S = rates.states.size();
  if (in.size() != S) throw PreconditionError("state map does not match the rate matrix");
  std::vector<const GridMeasure*> src(S);
  for (std::size_t mu = 0; mu < S; ++mu) {
    auto it = in.find(rates.states[mu]);
    if (it == in.end()) throw PreconditionError("missing state " + rates.states[mu]);
    src[mu] = &it->second;
  }
  const Grid& grid = src[0]->grid();
  std::vector<GridMeasure> stepped;
  for (std::size_t mu = 0; mu < S; ++mu) {
    if (src[mu]->grid() != grid) throw PreconditionError("measures live on different grids");
    stepped.push_back(src[mu]->empty() ? GridMeasure(grid) : jko_step_fp(*src[mu], h, psi));
  }
  std::map<std::string, GridMeasure> out;
  for (std::size_t nu = 0; nu < S; ++nu) {
    GridMeasure acc(grid);
    for (std::size_t mu = 0; mu < S; ++mu) acc = acc + stepped[mu].scaled(rates.at(mu, nu));
    out.emplace(rates.states[nu], std::move(acc));
  }
  return out;
}

}  // namespace ldgf
