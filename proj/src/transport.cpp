#include "ldgf/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace ldgf {

bool masses_match(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

namespace {

void require_equal_masses(const GridMeasure& mu, const GridMeasure& nu) {
  if (!masses_match(mu.mass(), nu.mass())) throw PreconditionError("unequal masses");
}

double marginal_residual_of(const std::vector<PlanEntry>& plan, const GridMeasure& mu, const GridMeasure& nu) {
  std::vector<double> r(mu.weights()), c(nu.weights());
  for (const auto& e : plan) {
    r[e.i] -= e.mass;
    c[e.j] -= e.mass;
  }
  double s = 0.0;
  for (double v : r) s += std::abs(v);
  for (double v : c) s += std::abs(v);
  return s;
}

Coupling dense_from_plan(const std::vector<PlanEntry>& plan, const Grid& rg, const Grid& cg) {
  Coupling q(rg, cg);
  for (const auto& e : plan) q(e.i, e.j) += e.mass;
  return q;
}

}  // namespace

std::vector<PlanEntry> monotone_plan(const GridMeasure& mu, const GridMeasure& nu) {
  require_equal_masses(mu, nu);
  std::vector<PlanEntry> plan;
  const auto& a = mu.weights();
  const auto& b = nu.weights();
  std::size_t i = 0, j = 0;
  auto skip = [](const std::vector<double>& w, std::size_t k) {
    while (k < w.size() && !(w[k] > 0.0)) ++k;
    return k;
  };
  i = skip(a, 0);
  j = skip(b, 0);
  double ra = i < a.size() ? a[i] : 0.0;
  double rb = j < b.size() ? b[j] : 0.0;
  while (i < a.size() && j < b.size()) {
    if (ra < rb) {
      plan.push_back({i, j, ra});
      rb -= ra;
      i = skip(a, i + 1);
      if (i < a.size()) ra = a[i];
    } else if (rb < ra) {
      plan.push_back({i, j, rb});
      ra -= rb;
      j = skip(b, j + 1);
      if (j < b.size()) rb = b[j];
    } else {
      plan.push_back({i, j, ra});
      i = skip(a, i + 1);
      j = skip(b, j + 1);
      if (i < a.size()) ra = a[i];
      if (j < b.size()) rb = b[j];
    }
  }
  return plan;
}

double wasserstein2_cost(const GridMeasure& mu, const GridMeasure& nu) {
  double c = 0.0;
  for (const auto& e : monotone_plan(mu, nu)) {
    double d = mu.grid().center(e.i) - nu.grid().center(e.j);
    c += e.mass * d * d;
  }
  return c;
}

TransportResult wasserstein2_1d(const GridMeasure& mu, const GridMeasure& nu) {
  if (mu.empty() || nu.empty()) throw PreconditionError("wasserstein2_1d: empty measure");
  auto plan = monotone_plan(mu, nu);
  double c = 0.0;
  for (const auto& e : plan) {
    double d = mu.grid().center(e.i) - nu.grid().center(e.j);
    c += e.mass * d * d;
  }
  double res = marginal_residual_of(plan, mu, nu);
  return {c, dense_from_plan(plan, mu.grid(), nu.grid()), static_cast<long>(plan.size()), res};
}

double wasserstein2_cells(const GridMeasure& mu, const GridMeasure& nu) {
  require_equal_masses(mu, nu);
  const auto& a = mu.weights();
  const auto& b = nu.weights();
  const double da = mu.grid().dx(), db = nu.grid().dx();
  auto skip = [](const std::vector<double>& w, std::size_t k) {
    while (k < w.size() && !(w[k] > 0.0)) ++k;
    return k;
  };
  std::size_t i = skip(a, 0), j = skip(b, 0);
  // ra, rb: mass still unused in the current cells
  double ra = i < a.size() ? a[i] : 0.0, rb = j < b.size() ? b[j] : 0.0;
  double c = 0.0;
  while (i < a.size() && j < b.size()) {
    double l = std::min(ra, rb);
    double xa = mu.grid().x_min() + da * (static_cast<double>(i) + (a[i] - ra) / a[i]);
    double xb = nu.grid().x_min() + db * (static_cast<double>(j) + (b[j] - rb) / b[j]);
    double f0 = xa - xb;
    double beta = da / a[i] - db / b[j];
    c += l * (f0 * f0 + f0 * beta * l + beta * beta * l * l / 3.0);
    ra -= l;
    rb -= l;
    if (ra <= 0.0 || ra <= 1e-15 * a[i]) {
      i = skip(a, i + 1);
      if (i < a.size()) ra = a[i];
    }
    if (rb <= 0.0 || rb <= 1e-15 * b[j]) {
      j = skip(b, j + 1);
      if (j < b.size()) rb = b[j];
    }
  }
  return c;
}

double wasserstein2_atoms(const std::vector<double>& xs, const std::vector<double>& ws,
                          const std::vector<double>& ys, const std::vector<double>& vs) {
  if (xs.size() != ws.size() || ys.size() != vs.size()) throw PreconditionError("atoms: size mismatch");
  double ma = 0.0, mb = 0.0;
  for (double w : ws) ma += w;
  for (double v : vs) mb += v;
  if (!masses_match(ma, mb, 1e-10)) throw PreconditionError("unequal masses");
  std::size_t i = 0, j = 0;
  double ra = ws.empty() ? 0.0 : ws[0], rb = vs.empty() ? 0.0 : vs[0];
  double c = 0.0;
  while (i < xs.size() && j < ys.size()) {
    double t = std::min(ra, rb);
    double d = xs[i] - ys[j];
    c += t * d * d;
    ra -= t;
    rb -= t;
    if (ra <= 0.0 && ++i < xs.size()) ra = ws[i];
    if (rb <= 0.0 && ++j < ys.size()) rb = vs[j];
  }
  return c;
}

TransportResult wasserstein2_lp(const GridMeasure& mu, const GridMeasure& nu) {
  if (mu.size() > 64 || nu.size() > 64) throw PreconditionError("wasserstein2_lp: instance too large (max 64 cells)");
  require_equal_masses(mu, nu);
  std::vector<std::size_t> S, T;
  for (std::size_t i = 0; i < mu.size(); ++i)
    if (mu[i] > 0.0) S.push_back(i);
  for (std::size_t j = 0; j < nu.size(); ++j)
    if (nu[j] > 0.0) T.push_back(j);
  const std::size_t ns = S.size(), nt = T.size();
  std::vector<double> supply(ns), demand(nt);
  for (std::size_t a = 0; a < ns; ++a) supply[a] = mu[S[a]];
  for (std::size_t b = 0; b < nt; ++b) demand[b] = nu[T[b]];
  std::vector<double> cost(ns * nt), flow(ns * nt, 0.0);
  for (std::size_t a = 0; a < ns; ++a)
    for (std::size_t b = 0; b < nt; ++b) {
      double d = mu.grid().center(S[a]) - nu.grid().center(T[b]);
      cost[a * nt + b] = d * d;
    }
  const double eps = 1e-15 * std::max(1.0, mu.mass());
  const double inf = std::numeric_limits<double>::infinity();
  long augmentations = 0;
  // successive shortest paths; Bellman-Ford on the bipartite residual graph
  while (true) {
    std::vector<double> ds(ns, inf), dt(nt, inf);
    std::vector<long> pred_s(ns, -1), pred_t(nt, -1);
    for (std::size_t a = 0; a < ns; ++a)
      if (supply[a] > eps) ds[a] = 0.0;
    bool any = false;
    for (double v : ds) any |= v == 0.0;
    if (!any) break;
    for (std::size_t round = 0; round < ns + nt + 1; ++round) {
      bool changed = false;
      for (std::size_t a = 0; a < ns; ++a) {
        if (ds[a] == inf) continue;
        for (std::size_t b = 0; b < nt; ++b) {
          double nd = ds[a] + cost[a * nt + b];
          if (nd < dt[b] - 1e-15) {
            dt[b] = nd;
            pred_t[b] = static_cast<long>(a);
            changed = true;
          }
        }
      }
      for (std::size_t b = 0; b < nt; ++b) {
        if (dt[b] == inf) continue;
        for (std::size_t a = 0; a < ns; ++a) {
          if (flow[a * nt + b] <= eps) continue;
          double nd = dt[b] - cost[a * nt + b];
          if (nd < ds[a] - 1e-15) {
            ds[a] = nd;
            pred_s[a] = static_cast<long>(b);
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    long best = -1;
    for (std::size_t b = 0; b < nt; ++b)
      if (demand[b] > eps && dt[b] < inf && (best < 0 || dt[b] < dt[static_cast<std::size_t>(best)]))
        best = static_cast<long>(b);
    if (best < 0) break;
    // walk back to find the bottleneck
    double push = demand[static_cast<std::size_t>(best)];
    std::size_t b = static_cast<std::size_t>(best);
    while (true) {
      std::size_t a = static_cast<std::size_t>(pred_t[b]);
      if (pred_s[a] < 0) {
        push = std::min(push, supply[a]);
        break;
      }
      std::size_t b2 = static_cast<std::size_t>(pred_s[a]);
      push = std::min(push, flow[a * nt + b2]);
      b = b2;
    }
    b = static_cast<std::size_t>(best);
    demand[b] -= push;
    while (true) {
      std::size_t a = static_cast<std::size_t>(pred_t[b]);
      flow[a * nt + b] += push;
      if (pred_s[a] < 0) {
        supply[a] -= push;
        break;
      }
      std::size_t b2 = static_cast<std::size_t>(pred_s[a]);
      flow[a * nt + b2] -= push;
      if (flow[a * nt + b2] < 0.0) flow[a * nt + b2] = 0.0;
      b = b2;
    }
    if (++augmentations > 100000) throw ConvergenceError("wasserstein2_lp: too many augmentations", push, augmentations);
  }
  std::vector<PlanEntry> plan;
  double c = 0.0;
  for (std::size_t a = 0; a < ns; ++a)
    for (std::size_t b = 0; b < nt; ++b)
      if (flow[a * nt + b] > 0.0) {
        plan.push_back({S[a], T[b], flow[a * nt + b]});
        c += flow[a * nt + b] * cost[a * nt + b];
      }
  double res = marginal_residual_of(plan, mu, nu);
  return {c, dense_from_plan(plan, mu.grid(), nu.grid()), augmentations, res};
}

Coupling reference_coupling(const GridMeasure& mu, const Kernel& K) {
  if (mu.grid() != K.grid()) throw PreconditionError("reference coupling: grid mismatch");
  const std::size_t n = mu.size();
  const double dy = K.grid().dx();
  std::vector<double> e(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (mu[i] > 0.0)
      for (std::size_t j = 0; j < n; ++j) e[i * n + j] = mu[i] * K(i, j) * dy;
  return Coupling(mu.grid(), mu.grid(), std::move(e));
}

namespace {

// Sparse IPFP state. Entries hold exp(logp + f_i + g_j); a, b are the live scalings.
struct Ipfp {
  std::vector<std::size_t> rows, cols;        // active indices into the grid
  std::vector<std::uint32_t> start, col;      // CSR over active rows, col is an active-column slot
  std::vector<double> logp, kt;
  std::vector<double> f, g, a, b, mu, nu;

  void absorb() {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      f[r] += std::log(a[r]);
      a[r] = 1.0;
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      g[c] += std::log(b[c]);
      b[c] = 1.0;
    }
    refresh();
  }
  void refresh() {
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) kt[k] = std::exp(logp[k] + f[r] + g[col[k]]);
  }
  // exact log-domain half steps, used when the scaled kernel underflows
  void log_update_cols() {
    std::vector<double> mx(cols.size(), -std::numeric_limits<double>::infinity()), acc(cols.size(), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) mx[col[k]] = std::max(mx[col[k]], logp[k] + f[r]);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) acc[col[k]] += std::exp(logp[k] + f[r] - mx[col[k]]);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      g[c] = std::log(nu[c]) - mx[c] - std::log(acc[c]);
      b[c] = 1.0;
    }
    refresh();
  }
  void log_update_rows() {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) mx = std::max(mx, logp[k] + g[col[k]]);
      double acc = 0.0;
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) acc += std::exp(logp[k] + g[col[k]] - mx);
      f[r] = std::log(mu[r]) - mx - std::log(acc);
      a[r] = 1.0;
    }
    refresh();
  }
  bool update_cols() {
    std::vector<double> s(cols.size(), 0.0);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double ar = a[r];
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) s[col[k]] += kt[k] * ar;
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (!(s[c] > 0.0) || !std::isfinite(s[c])) return false;
      b[c] = nu[c] / s[c];
    }
    return true;
  }
  bool update_rows() {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double s = 0.0;
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) s += kt[k] * b[col[k]];
      if (!(s > 0.0) || !std::isfinite(s)) return false;
      a[r] = mu[r] / s;
    }
    return true;
  }
  double residual() const {
    std::vector<double> cs(cols.size(), 0.0);
    double rr = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double s = 0.0;
      for (std::uint32_t k = start[r]; k < start[r + 1]; ++k) {
        double q = a[r] * kt[k] * b[col[k]];
        s += q;
        cs[col[k]] += q;
      }
      rr += std::abs(s - mu[r]);
    }
    for (std::size_t c = 0; c < cols.size(); ++c) rr += std::abs(cs[c] - nu[c]);
    return rr;
  }
  bool scalings_wild() const {
    const double lim = 1e30;
    for (double v : a)
      if (v > lim || v < 1.0 / lim) return true;
    for (double v : b)
      if (v > lim || v < 1.0 / lim) return true;
    return false;
  }
};

}  // namespace

BridgeResult schrodinger_bridge(const GridMeasure& mu, const GridMeasure& nu, const Kernel& K,
                                const BridgeOptions& opts) {
  if (mu.grid() != K.grid() || nu.grid() != K.grid()) throw PreconditionError("schrodinger_bridge: grid mismatch");
  require_equal_masses(mu, nu);
  const Grid& grid = K.grid();
  const std::size_t n = grid.size();
  const double logdy = std::log(grid.dx());

  Ipfp s;
  std::vector<long> slot(n, -1);
  for (std::size_t j = 0; j < n; ++j)
    if (nu[j] > 0.0) {
      slot[j] = static_cast<long>(s.cols.size());
      s.cols.push_back(j);
      s.nu.push_back(nu[j]);
    }
  s.start.push_back(0);
  std::vector<int> col_hit(s.cols.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(mu[i] > 0.0)) continue;
    s.rows.push_back(i);
    s.mu.push_back(mu[i]);
    const double lmu = std::log(mu[i]);
    for (std::size_t j = 0; j < n; ++j) {
      if (slot[j] < 0 || !(K(i, j) > 0.0)) continue;
      s.col.push_back(static_cast<std::uint32_t>(slot[j]));
      s.logp.push_back(lmu + std::log(K(i, j)) + logdy);
      col_hit[static_cast<std::size_t>(slot[j])] = 1;
    }
    s.start.push_back(static_cast<std::uint32_t>(s.col.size()));
  }

  Coupling q(grid, grid);
  bool feasible = !s.rows.empty();
  for (std::size_t r = 0; r < s.rows.size(); ++r) feasible &= s.start[r + 1] > s.start[r];
  for (int hit : col_hit) feasible &= hit != 0;
  if (!feasible) return {q, kInfinity, 0, kInfinity, true};

  s.kt.assign(s.logp.size(), 0.0);
  s.f.assign(s.rows.size(), 0.0);
  s.g.assign(s.cols.size(), 0.0);
  s.a.assign(s.rows.size(), 1.0);
  s.b.assign(s.cols.size(), 1.0);
  s.refresh();

  double residual = kInfinity, last_checked = kInfinity;
  bool monotone = true;
  long it = 0;
  for (it = 1; it <= opts.max_iters; ++it) {
    if (!s.update_cols()) {
      s.absorb();
      s.log_update_cols();
    }
    if (!s.update_rows()) {
      s.absorb();
      s.log_update_rows();
    }
    if (s.scalings_wild()) s.absorb();
    if (it == 1 || it % opts.check_every == 0) {
      residual = s.residual();
      if (!std::isfinite(residual)) {
        s.absorb();
        residual = s.residual();
      }
      if (residual > last_checked * (1.0 + 1e-9) + 1e-15) monotone = false;
      last_checked = residual;
      if (residual < opts.tol) break;
    }
  }
  if (!(residual < opts.tol))
    throw ConvergenceError("schrodinger_bridge: no convergence within max_iters", residual, opts.max_iters);

  // value from the stored log-reference, so entries whose p underflows still count
  double value = 0.0;
  for (std::size_t r = 0; r < s.rows.size(); ++r)
    for (std::uint32_t k = s.start[r]; k < s.start[r + 1]; ++k) {
      double qk = s.a[r] * s.kt[k] * s.b[s.col[k]];
      q(s.rows[r], s.cols[s.col[k]]) = qk;
      if (qk > 0.0) value += qk * (std::log(qk) - s.logp[k]);
    }
  return {std::move(q), value, std::min(it, opts.max_iters), residual, monotone};
}

std::pair<double, double> coupling_sum_inequality_check(const GridMeasure& r1, const GridMeasure& r2,
                                                        const GridMeasure& r3, const GridMeasure& r4) {
  require_equal_masses(r1, r3);
  require_equal_masses(r2, r4);
  auto d2 = [](const GridMeasure& a, const GridMeasure& b) { return a.empty() ? 0.0 : wasserstein2_cost(a, b); };
  return {d2(r1 + r2, r3 + r4), d2(r1, r3) + d2(r2, r4)};
}

}  // namespace ldgf
