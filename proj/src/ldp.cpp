#include "ldgf/ldp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ldgf/errors.hpp"
#include "ldgf/particles.hpp"
#include "ldgf/pde.hpp"

namespace ldgf {

Kernel fp_reference_kernel(const Grid& grid, const Potential& psi, double h) {
  if (psi.is_zero()) return heat_kernel(grid, h);
  if (auto c = psi.affine_slope()) return fp_kernel_affine(grid, *c, h);
  return fp_kernel_semiclassical(grid, psi, h);
}

double rate_df(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const BridgeOptions& opts) {
  return schrodinger_bridge(rho_bar, rho, heat_kernel(rho.grid(), h), opts).value;
}

double rate_fp(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const Potential& psi,
               const BridgeOptions& opts) {
  return schrodinger_bridge(rho_bar, rho, fp_reference_kernel(rho.grid(), psi, h), opts).value;
}

namespace {

double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

// S(NN) + S(ND) - S(NT) - |NN| log r_NN - |ND| log r_ND, +inf if a needed rate vanishes
double mixing_terms(const GridMeasure& nn, const GridMeasure& nd, const DecayRates& rates) {
  double a = nn.mass(), b = nd.mass();
  if ((a > 0.0 && rates.r_NN == 0.0) || (b > 0.0 && rates.r_ND == 0.0)) return kInfinity;
  return entropy_or_zero(nn) + entropy_or_zero(nd) - entropy_or_zero(nn + nd) - xlogy(a, rates.r_NN) -
         xlogy(b, rates.r_ND);
}

bool admissible(const SplitState& s, const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar) {
  return masses_match(s.rho_NT().mass(), rhoN_bar.mass()) && masses_match(s.rho_DD.mass(), rhoD_bar.mass());
}

}  // namespace

double rate_dfdc(const SplitState& state, const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar,
                 const DecayRates& rates, double h, const BridgeOptions& opts) {
  if (!admissible(state, rhoN_bar, rhoD_bar)) return kInfinity;
  Kernel K = heat_kernel(rhoN_bar.grid(), h);
  double v = mixing_terms(state.rho_NN, state.rho_ND, rates);
  if (is_infinite(v)) return v;
  if (!rhoN_bar.empty()) v += schrodinger_bridge(rhoN_bar, state.rho_NT(), K, opts).value;
  if (!rhoD_bar.empty()) v += schrodinger_bridge(rhoD_bar, state.rho_DD, K, opts).value;
  return v;
}

BridgeDecomposition decompose_bridge(const GridMeasure& rho, const GridMeasure& rho_bar, const Kernel& K,
                                     const BridgeOptions& opts) {
  BridgeResult b = schrodinger_bridge(rho_bar, rho, K, opts);
  const Grid& g = K.grid();
  const double h = K.time(), dy = g.dx();
  const std::size_t n = g.size();
  double entropic = 0.0, cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(rho_bar[i] > 0.0)) continue;
    for (std::size_t j = 0; j < n; ++j) {
      double q = b.coupling(i, j);
      if (!(q > 0.0)) continue;
      double z = g.center(j) - g.center(i);
      double c = z * z / (4.0 * h);
      entropic += q * (std::log(q / (rho_bar[i] * dy)) - (std::log(K(i, j)) + c));
      cost += q * c;
    }
  }
  double d2 = wasserstein2_cells(rho_bar, rho) / (4.0 * h);
  return {b.value, d2, entropic, cost - d2};
}

std::vector<double> MoscoReport::errors() const {
  std::vector<double> e;
  for (const auto& r : rows) e.push_back(std::abs(r.difference - r.target));
  return e;
}

bool MoscoReport::last_three_decreasing() const {
  auto e = errors();
  if (e.size() < 3) return false;
  std::size_t k = e.size();
  return e[k - 1] < e[k - 2] && e[k - 2] < e[k - 3];
}

Grid mosco_grid(const MoscoSpec& spec, double h) {
  if (!(h > 0.0)) throw PreconditionError("mosco: h must be positive");
  if (spec.cells_per_root_h < 4.0) throw PreconditionError("mosco: need dx <= sqrt(h)/4");
  double len = spec.x_max - spec.x_min;
  auto n = static_cast<std::size_t>(std::ceil(len * spec.cells_per_root_h / std::sqrt(h) - 1e-9));
  return Grid(spec.x_min, spec.x_max, std::max<std::size_t>(n, 2));
}

MoscoReport mosco_probe(const MoscoSpec& spec, const std::vector<double>& h_ladder, const BridgeOptions& opts) {
  if (h_ladder.empty()) throw PreconditionError("mosco: empty h ladder");
  for (std::size_t k = 1; k < h_ladder.size(); ++k)
    if (!(h_ladder[k] < h_ladder[k - 1])) throw PreconditionError("mosco: h ladder must be strictly decreasing");
  MoscoReport rep{spec.variant, {}};
  for (double h : h_ladder) {
    Grid g = mosco_grid(spec, h);
    GridMeasure bar = gaussian_measure(g, spec.bar_mean, spec.bar_var);
    GridMeasure rho = gaussian_measure(g, spec.mean, spec.var);
    for (const GridMeasure* m : {&bar, &rho})
      if (boundary_mass(*m, 1) > 1e-10) throw PreconditionError("mosco: domain too small, boundary mass above 1e-10");
    MoscoRow row{};
    row.h = h;
    row.n_cells = g.size();
    if (spec.variant == MoscoVariant::DfDc) {
      DecayRates rates(spec.lambda, h);
      double dm = spec.dark_mass, f = spec.split_fraction;
      if (!(dm > 0.0 && dm < 1.0 && f > 0.0 && f < 1.0)) throw PreconditionError("mosco: dark_mass and split_fraction in (0,1)");
      GridMeasure bN = bar.scaled(1.0 - dm), bD = bar.scaled(dm);
      GridMeasure nt = rho.scaled(1.0 - dm), nn = nt.scaled(f), nd = nt.scaled(1.0 - f), dd = rho.scaled(dm);
      Kernel K = heat_kernel(g, h);
      BridgeDecomposition a = decompose_bridge(nt, bN, K, opts), b = decompose_bridge(dd, bD, K, opts);
      double mix = entropy(nn) + entropy(nd) - entropy(nt);
      double logs = nd.mass() * std::log(rates.r_ND) + nn.mass() * std::log(rates.r_NN);
      row.J = a.J + b.J + mix - logs;
      row.d2_over_4h = a.d2_over_4h + b.d2_over_4h;
      row.extra_subtractions = logs;
      row.difference = a.subtracted() + b.subtracted() + mix;
      row.entropic_gap = a.gap + b.gap;
      row.target = -0.5 * entropy(nt) - 0.5 * entropy(bN) + 0.5 * entropy(dd) - 0.5 * entropy(bD) + entropy(nn) +
                   entropy(nd);
    } else {
      const bool fp = spec.variant == MoscoVariant::FP;
      Kernel K = fp ? fp_reference_kernel(g, spec.psi, h) : heat_kernel(g, h);
      BridgeDecomposition d = decompose_bridge(rho, bar, K, opts);
      row.J = d.J;
      row.d2_over_4h = d.d2_over_4h;
      row.difference = d.subtracted();
      row.entropic_gap = d.gap;
      row.target = 0.5 * (entropy(rho) - entropy(bar));
      if (fp) {
        row.energy_term = 0.5 * (potential_energy(rho, spec.psi) - potential_energy(bar, spec.psi));
        row.target += row.energy_term;
      }
    }
    rep.rows.push_back(row);
  }
  return rep;
}

std::vector<EmpiricalRateRow> empirical_rate_probe(const GridMeasure& rho_target, const GridMeasure& rho_bar,
                                                   const std::vector<std::size_t>& n_ladder,
                                                   const EmpiricalRateSpec& spec) {
  if (!(spec.tube_radius > 0.0)) throw PreconditionError("empirical_rate_probe: tube radius must be positive");
  if (spec.trials == 0) throw PreconditionError("empirical_rate_probe: need at least one trial");
  for (std::size_t n : n_ladder)
    if (n == 0 || n > 100000) throw PreconditionError("empirical_rate_probe: n must lie in [1, 1e5]");
  const Grid& g = rho_target.grid();

  // tube members: whole-cell translates of the target within the radius
  double tube_rate = kInfinity;
  auto max_shift = static_cast<long>(std::floor(spec.tube_radius / g.dx() - 1e-12));
  long half = static_cast<long>(spec.tube_samples / 2);
  for (long k = -half; k <= half; ++k) {
    long s = max_shift == 0 ? 0 : k * max_shift / std::max(half, 1L);
    std::vector<double> w(g.size(), 0.0);
    bool lost = false;
    for (std::size_t i = 0; i < g.size(); ++i) {
      long t = static_cast<long>(i) + s;
      if (t < 0 || t >= static_cast<long>(g.size())) {
        lost |= rho_target[i] > 0.0;
        continue;
      }
      w[static_cast<std::size_t>(t)] = rho_target[i];
    }
    if (lost) continue;
    tube_rate = std::min(tube_rate, rate_df(GridMeasure(g, std::move(w)), rho_bar, spec.h));
  }

  const double r2 = spec.tube_radius * spec.tube_radius;
  std::vector<EmpiricalRateRow> out;
  for (std::size_t n : n_ladder) {
    ParticleEnsemble base = make_ensemble(rho_bar, n, spec.seed);
    std::size_t hits = 0;
    for (std::size_t t = 0; t < spec.trials; ++t) {
      ParticleEnsemble e = base;
      e.step = static_cast<std::uint32_t>(t);
      e = step_positions(e, spec.h, Potential::zero());
      if (w2_to_density(e.x, rho_target) < r2) ++hits;
    }
    EmpiricalRateRow row{n, spec.trials, hits, 0.0, hits == 0, tube_rate};
    double p = hits == 0 ? 1.0 / static_cast<double>(spec.trials)
                         : static_cast<double>(hits) / static_cast<double>(spec.trials);
    row.estimate = -std::log(p) / static_cast<double>(n);
    out.push_back(row);
  }
  return out;
}

std::string to_string(MoscoVariant v) {
  switch (v) {
    case MoscoVariant::Df:
      return "df";
    case MoscoVariant::FP:
      return "fp";
    case MoscoVariant::DfDc:
      return "dfdc";
  }
  return "df";
}

MoscoVariant parse_mosco_variant(const std::string& s) {
  if (s == "df") return MoscoVariant::Df;
  if (s == "fp") return MoscoVariant::FP;
  if (s == "dfdc") return MoscoVariant::DfDc;
  throw PreconditionError("unknown mosco variant '" + s + "' (df, fp, dfdc)");
}

}  // namespace ldgf
