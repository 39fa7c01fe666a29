// One line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ldgf/jko.hpp"
#include "ldgf/ldp.hpp"
#include "ldgf/particles.hpp"
#include "ldgf/pde.hpp"
#include "ldgf/transport.hpp"
#include "oracles/dense_oracles.hpp"

using namespace ldgf;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string num(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

double l1(const GridMeasure& a, const GridMeasure& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

GridMeasure random_prob(const Grid& g, std::mt19937_64& rng, double mass = 1.0) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(g.size());
  double s = 0.0;
  for (auto& v : w) s += (v = u(rng));
  for (auto& v : w) v *= mass / s;
  return GridMeasure(g, w);
}

const Grid kFlowGrid(-4.0, 4.0, 256);
const double kFlowT = 0.25;
const std::vector<double> kLadder{0.05, 0.025, 0.0125};

struct FlowRun {
  double h;
  FlowTrajectory traj;
  double l1N, l1D;
};

std::vector<FlowRun> flow_ladder(double lambda) {
  GridMeasure n0 = gaussian_measure(kFlowGrid, 0.0, 0.25), d0(kFlowGrid);
  auto ref = solve_system(n0, d0, Potential::zero(), lambda, kFlowT, 1e-4);
  std::vector<FlowRun> out;
  for (double h : kLadder) {
    FlowTrajectory tr = run_flow(n0, d0, h, kFlowT, lambda, Potential::zero());
    double eN = l1(tr.rho_N.back(), ref.frames_N.back());
    double eD = l1(tr.rho_D.back(), ref.frames_D.back());
    out.push_back({h, std::move(tr), eN, eD});
  }
  return out;
}

Outcome decay_exactness() {
  auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (double h : {0.1, 0.01}) {
    auto tr = run_flow(gaussian_measure(kFlowGrid, 0.0, 0.25), GridMeasure(kFlowGrid), h, 1.0, 1.0, Potential::zero());
    worst = std::max(worst, std::abs(tr.rho_N.back().mass() - std::exp(-1.0)));
  }
  double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 10.0, "max | |rho_N(1)| - 1/e | = " + num(worst) + " (tol 1e-9), " + num(t) + " s (< 10 s)"};
}

Outcome heat_limit() {
  auto t0 = std::chrono::steady_clock::now();
  auto runs = flow_ladder(0.0);
  double t = seconds_since(t0);
  bool mono = runs[1].l1N < runs[0].l1N && runs[2].l1N < runs[1].l1N;
  bool pass = runs[2].l1N < 0.05 && mono && t < 300.0;
  return {pass, "L1 at h = 0.05/0.025/0.0125: " + num(runs[0].l1N) + " " + num(runs[1].l1N) + " " + num(runs[2].l1N) +
                    " (finest < 0.05, decreasing), " + num(t) + " s"};
}

std::vector<FlowRun>& decay_runs() {
  static std::vector<FlowRun> runs = flow_ladder(1.0);
  return runs;
}

Outcome decay_system() {
  auto& runs = decay_runs();
  const FlowRun& fine = runs.back();
  double mass_drift = 0.0, telescope = 0.0;
  for (const auto& r : runs) {
    const double q = std::exp(-r.h);
    for (std::size_t k = 0; k < r.traj.rho_N.size(); ++k) {
      double mN = r.traj.rho_N[k].mass(), mD = r.traj.rho_D[k].mass();
      mass_drift = std::max(mass_drift, std::abs(mN + mD - 1.0));
      telescope = std::max(telescope, std::abs(mN - std::pow(q, static_cast<double>(k))));
    }
  }
  bool pass = fine.l1N < 0.05 && fine.l1D < 0.05 && mass_drift <= 1e-10 && telescope <= 1e-10;
  return {pass, "finest L1 N " + num(fine.l1N) + ", D " + num(fine.l1D) + " (< 0.05); total mass drift " +
                    num(mass_drift) + ", telescoping error " + num(telescope) + " (<= 1e-10)"};
}

Outcome apriori() {
  auto& runs = decay_runs();
  const double C = second_moment(runs[0].traj.rho_N[0]) + 2.0 * kFlowT;
  double m2 = 0.0, lo = 1e300, hi = 0.0;
  for (const auto& r : runs) {
    m2 = std::max(m2, r.traj.max_second_moment());
    double fit = r.traj.transport_sum() / r.h;
    lo = std::min(lo, fit), hi = std::max(hi, fit);
  }
  bool pass = m2 <= C && hi / lo <= 2.0;
  return {pass, "max M2 " + num(m2) + " <= " + num(C) + "; sum d^2 / h in [" + num(lo) + ", " + num(hi) +
                    "], ratio " + num(hi / lo) + " (<= 2)"};
}

Outcome mosco(MoscoVariant v) {
  auto t0 = std::chrono::steady_clock::now();
  MoscoSpec s;
  s.variant = v;
  if (v == MoscoVariant::FP) s.psi = Potential::tanh();
  auto rep = mosco_probe(s, {0.016, 0.008, 0.004, 0.002, 0.001});
  double t = seconds_since(t0);
  const MoscoRow& last = rep.rows.back();
  double rel = std::abs(last.difference - last.target) / std::abs(last.target);
  bool pass = rel <= 0.05 && rep.last_three_decreasing() && t < 600.0;
  std::string errs;
  for (double e : rep.errors()) errs += num(e) + " ";
  return {pass, "target " + num(last.target) + ", finest difference " + num(last.difference) + " (rel err " + num(rel) +
                    " <= 0.05); |error| by rung: " + errs + "; " + num(t) + " s"};
}

Outcome minimiser_property() {
  double worst = 0.0;
  for (double h : {0.1, 0.01}) {
    Grid g(-5.0, 5.0, static_cast<std::size_t>(std::ceil(10.0 * 2.0 / std::sqrt(h))));
    std::vector<GridMeasure> bars{
        gaussian_measure(g, 0.0, 0.25),
        discretise(g, [](double x) { return std::exp(-8.0 * (x - 0.8) * (x - 0.8)) + std::exp(-8.0 * (x + 0.8) * (x + 0.8)); }),
        discretise(g, [](double x) { return x > -1.5 ? (x + 1.5) * std::exp(-2.0 * (x + 1.5)) : 0.0; })};
    for (auto& b : bars) {
      b = b.scaled(1.0 / b.mass());
      worst = std::max(worst, std::abs(rate_df(heat_kernel(g, h).push_forward(b), b, h)));
    }
  }
  return {worst <= 1e-6, "max rate_df at the pushforward " + num(worst) + " (<= 1e-6)"};
}

Outcome rewrite_equivalence() {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> frac(0.15, 0.85), lam(0.2, 3.0);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    Grid g(-1.0, 1.0, static_cast<std::size_t>(3 + k % 4));
    const double h = 0.5;
    DecayRates rates(lam(rng), h);
    double mN = frac(rng), f = frac(rng);
    GridMeasure bN = random_prob(g, rng, mN), bD = random_prob(g, rng, 1 - mN);
    GridMeasure nn = random_prob(g, rng, mN * f), nd = random_prob(g, rng, mN * (1 - f)), dd = random_prob(g, rng, 1 - mN);
    double want = oracle::dfdc_nested(g.x_min(), g.dx(), h, bN.weights(), bD.weights(), nn.weights(), nd.weights(),
                                      dd.weights(), rates.r_NN, rates.r_ND);
    worst = std::max(worst, std::abs(rate_dfdc({nn, nd, dd}, bN, bD, rates, h) - want));
  }
  return {worst <= 1e-5, "max |rewrite - nested| over 20 instances " + num(worst) + " (<= 1e-5)"};
}

Outcome sandwich() {
  const double h = 0.05;
  Grid g(-4.0, 4.0, 144);
  Potential lin = Potential::affine(0.8);
  auto [a0, a1] = beta_bounds(lin, g);
  double affine = sandwich_check(fp_kernel_affine(g, 0.8, h), lin, a0, a1);
  Potential t = Potential::tanh();
  std::vector<double> v;
  for (std::size_t n : {128u, 256u, 512u}) {
    Grid gn(-4.0, 4.0, n);
    auto [b0, b1] = beta_bounds(t, gn);
    v.push_back(sandwich_check(fp_kernel_numeric(gn, t, 0.01, static_cast<int>(n / 2)), t, b0, b1));
  }
  bool pass = affine <= 1e-9 && v[2] <= 5e-3 && v[1] < v[0] && v[2] < v[1];
  return {pass, "affine exact " + num(affine) + " (<= 1e-9); tanh h = 0.01 at 128/256/512 cells: " + num(v[0]) + " " +
                    num(v[1]) + " " + num(v[2]) + " (finest <= 5e-3, decreasing)"};
}

Outcome particle_lln() {
  auto t0 = std::chrono::steady_clock::now();
  Grid g(-4.0, 4.0, 1024);
  GridMeasure bar = gaussian_measure(g, 0.0, 0.25);
  const double h = 0.05;
  GridMeasure target = heat_kernel(g, h).push_forward(bar);
  std::vector<double> lx, ly;
  const int reps = 5;
  for (std::size_t n : {1000u, 10000u, 100000u}) {
    double acc = 0.0;
    for (int r = 0; r < reps; ++r) {
      auto e = step_positions(make_ensemble(bar, n, 100 + r), h, Potential::zero());
      acc += std::sqrt(w2_to_density(e.x, target));
    }
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(std::log(acc / reps));
  }
  double mx = (lx[0] + lx[1] + lx[2]) / 3, my = (ly[0] + ly[1] + ly[2]) / 3, sxy = 0, sxx = 0;
  for (int i = 0; i < 3; ++i) sxy += (lx[i] - mx) * (ly[i] - my), sxx += (lx[i] - mx) * (lx[i] - mx);
  double slope = sxy / sxx;

  const std::size_t n = 100000;
  DecayRates rates(1.0, h);
  auto e = step_states(make_ensemble(bar, n, 9), rates);
  double frac = static_cast<double>(e.count(ParticleState::N)) / n;
  double sd = std::sqrt(rates.r_NN * (1 - rates.r_NN) / n);
  double z = (frac - rates.r_NN) / sd;
  double t = seconds_since(t0);
  bool pass = slope >= -0.7 && slope <= -0.3 && std::abs(z) <= 4.0 && t < 120.0;
  return {pass, "W2 slope " + num(slope) + " (in [-0.7, -0.3]); N fraction " + num(frac) + " vs " + num(rates.r_NN) +
                    ", z = " + num(z) + " (|z| <= 4); " + num(t) + " s"};
}

Outcome inner_oracle() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> hs(0.05, 0.5);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    std::size_t n = 3 + static_cast<std::size_t>(k % 6);
    Grid g(-1.0, 1.0, n);
    GridMeasure bar = random_prob(g, rng);
    Potential psi = k % 2 ? Potential::tanh() : Potential::zero();
    double h = std::max(hs(rng), g.dx() * g.dx());
    std::vector<double> pv(n);
    for (std::size_t j = 0; j < n; ++j) pv[j] = psi(g.center(j));
    GridMeasure got = minimize_free_energy(bar, h, psi);
    double lib = oracle::cell_w2(g.x_min(), g.dx(), bar.weights(), got.weights()) / (4 * h);
    for (std::size_t j = 0; j < n; ++j) lib += 0.5 * (oracle::xlogx_over(got[j], g.dx()) + got[j] * pv[j]);
    auto want = oracle::dense_free_energy_solve(g.x_min(), g.dx(), bar.weights(), pv, h);
    worst = std::max(worst, std::abs(lib - want.objective));
  }
  return {worst <= 1e-6, "max objective gap over 20 instances " + num(worst) + " (<= 1e-6)"};
}

Outcome identities() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  Grid g(-2.0, 2.0, 40);
  double split = 0.0;
  for (int k = 0; k < 20; ++k) {
    auto [l, r] = entropy_split_identity_check(random_prob(g, rng), u(rng), u(rng));
    split = std::max(split, std::abs(l - r) / std::max(1.0, std::abs(l)));
  }

  double brace_scalar = -1e300;
  for (double r : {0.01, 0.3, 0.5, 0.9, 0.999})
    for (int n = 1; n <= 50; ++n) {
      double p = std::pow(r, n);
      brace_scalar = std::max(brace_scalar, p * std::log(p) + (1 - p) * std::log(1 - p));
    }
  double brace_traj = -1e300;
  for (const auto& run : decay_runs()) {
    DecayRates rates(1.0, run.h);
    for (std::size_t n = 1; n < run.traj.rho_N.size(); ++n)
      brace_traj = std::max(brace_traj, decay_brace(run.traj, n, rates));
  }

  double sum_slack = -1e300;
  for (int k = 0; k < 50; ++k) {
    double m1 = u(rng), m2 = u(rng);
    auto [l, r] = coupling_sum_inequality_check(random_prob(g, rng, m1), random_prob(g, rng, m2),
                                                random_prob(g, rng, m1), random_prob(g, rng, m2));
    sum_slack = std::max(sum_slack, l - r);
  }

  double gibbs_min = 1e300, self = 0.0;
  Grid small(0.0, 1.0, 6);
  for (int k = 0; k < 50; ++k) {
    GridMeasure a = random_prob(Grid(0.0, 1.0, 36), rng), b = random_prob(Grid(0.0, 1.0, 36), rng);
    Coupling q(small, small, a.weights()), p(small, small, b.weights());
    gibbs_min = std::min(gibbs_min, relative_entropy(q, p));
    self = std::max(self, std::abs(relative_entropy(p, p)));
  }

  bool pass = split <= 1e-12 && brace_scalar <= 0.0 && brace_traj <= 0.0 && sum_slack <= 1e-10 && gibbs_min >= 0.0 &&
              self == 0.0;
  return {pass, "split identity gap " + num(split) + " (<= 1e-12); brace max scalar " + num(brace_scalar) +
                    ", trajectory " + num(brace_traj) + " (<= 0); sum inequality slack " + num(sum_slack) +
                    " (<= 1e-10); min H(q|p) " + num(gibbs_min) + " (>= 0), H(p|p) " + num(self)};
}

}  // namespace

int main() {
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"exponential decay of the normal mass", decay_exactness},
      {"JKO flow approaches the heat equation", heat_limit},
      {"JKO flow with decay approaches the system", decay_system},
      {"a-priori second moment and transport estimates", apriori},
      {"Mosco probe, diffusion", [] { return mosco(MoscoVariant::Df); }},
      {"Mosco probe, Fokker-Planck with tanh", [] { return mosco(MoscoVariant::FP); }},
      {"rate functional vanishes at the kernel pushforward", minimiser_property},
      {"decay rate rewrite matches the nested form", rewrite_equivalence},
      {"sandwich estimate for the drift kernel", sandwich},
      {"particle law of large numbers and decay channel", particle_lln},
      {"inner solver against the dense oracle", inner_oracle},
      {"identity suite", identities},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %zu: %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
