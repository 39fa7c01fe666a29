#include <doctest.h>

#include <cmath>
#include <random>

#include "ldgf/jko.hpp"
#include "ldgf/pde.hpp"
#include "ldgf/transport.hpp"
#include "oracles/dense_oracles.hpp"

using namespace ldgf;

namespace {

GridMeasure random_measure(const Grid& g, std::mt19937_64& rng, double mass = 1.0) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(g.size());
  double s = 0.0;
  for (auto& v : w) s += (v = u(rng));
  for (auto& v : w) v *= mass / s;
  return GridMeasure(g, w);
}

double l1(const GridMeasure& a, const GridMeasure& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double variance(const GridMeasure& m) {
  double mu = 0.0, s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) mu += m[i] * m.grid().center(i);
  mu /= m.mass();
  for (std::size_t i = 0; i < m.size(); ++i) s += m[i] * std::pow(m.grid().center(i) - mu, 2);
  return s / m.mass();
}

// sum w log(w/dx) written out
double plain_entropy(const GridMeasure& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += oracle::xlogx_over(m[i], m.grid().dx());
  return s;
}

double plain_energy(const GridMeasure& m, const Potential& psi) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m[i] * psi(m.grid().center(i));
  return s;
}

double plain_d2(const GridMeasure& a, const GridMeasure& b) {
  return oracle::cell_w2(a.grid().x_min(), a.grid().dx(), a.weights(), b.weights());
}

GridMeasure normalised_gibbs(const Grid& g, const Potential& psi) {
  std::vector<double> w(g.size());
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += (w[i] = std::exp(-psi(g.center(i))));
  for (auto& v : w) v /= s;
  return GridMeasure(g, w);
}

}  // namespace

TEST_SUITE("jko") {
  TEST_CASE("decay rates") {
    DecayRates r(1.0, 0.1);
    CHECK(r.r_NN == doctest::Approx(std::exp(-0.1)).epsilon(1e-15));
    CHECK(r.r_NN + r.r_ND == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.r_DN == 0.0);
    CHECK(r.r_DD == 1.0);
  }

  TEST_CASE("K_fp and K_df") {
    std::mt19937_64 rng(1);
    Grid g(-2.0, 2.0, 24);
    for (int t = 0; t < 10; ++t) {
      GridMeasure a = random_measure(g, rng), b = random_measure(g, rng);
      CHECK(eval_K_fp(a, a, 0.1, Potential::tanh()) == 0.0);
      CHECK(std::abs(eval_K_fp(a, b, 0.1, Potential::zero()) - eval_K_df(a, b, 0.1)) < 1e-12);
    }
    Grid wide(-4.0, 4.0, 160);
    GridMeasure rho = gaussian_measure(wide, 0.3, 0.3), bar = gaussian_measure(wide, -0.1, 0.25);
    Potential psi = Potential::tanh();
    const double h = 0.1;
    double by_terms = 0.5 * (plain_entropy(rho) + plain_energy(rho, psi)) -
                      0.5 * (plain_entropy(bar) + plain_energy(bar, psi)) + plain_d2(bar, rho) / (4 * h);
    CHECK(std::abs(eval_K_fp(rho, bar, h, psi) - by_terms) < 1e-10);
    CHECK_THROWS_AS(eval_K_fp(rho, bar.scaled(0.5), h, psi), PreconditionError);
  }

  TEST_CASE("K_dc") {
    std::mt19937_64 rng(2);
    Grid g(0.0, 1.0, 12);
    DecayRates rates(0.8, 0.5);
    GridMeasure bar = random_measure(g, rng, 0.7);
    CHECK(std::abs(eval_K_dc(bar.scaled(rates.r_NN), bar, rates)) < 1e-14);
    CHECK(eval_K_dc(bar, bar, rates) == doctest::Approx(-bar.mass() * std::log(rates.r_NN)).epsilon(1e-13));
    CHECK(is_infinite(eval_K_dc(bar.scaled(1.1), bar, rates)));

    // single occupied cell: golden-section over a recovers a = r abar
    Grid two(0.0, 1.0, 2);
    const double abar = 0.6;
    GridMeasure b2(two, {abar, 0.0});
    auto f = [&](double a) { return eval_K_dc(GridMeasure(two, {a, 0.0}), b2, rates); };
    double lo = 0.0, hi = abar, gr = (std::sqrt(5.0) - 1) / 2;
    for (int k = 0; k < 200; ++k) {
      double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
      (f(c) < f(d) ? hi : lo) = (f(c) < f(d) ? d : c);
    }
    CHECK(std::abs(0.5 * (lo + hi) / abar - rates.r_NN) < 1e-10);
  }

  TEST_CASE("K_dfdc special cases") {
    std::mt19937_64 rng(3);
    Grid g(-1.0, 1.0, 16);
    const double h = 0.05;
    GridMeasure bN = random_measure(g, rng, 0.6), bD = random_measure(g, rng, 0.4);
    GridMeasure nt = random_measure(g, rng, 0.6), dd = random_measure(g, rng, 0.4);
    DecayRates off(0.0, h);
    double want = eval_K_df(nt, bN, h) + eval_K_df(dd, bD, h);
    CHECK(std::abs(eval_K_dfdc({nt, GridMeasure(g), dd}, bN, bD, off, h) - want) < 1e-12);

    DecayRates on(1.2, h);
    auto [nn, nd] = decay_split(nt, on);
    CHECK(std::abs(eval_K_dfdc({nn, nd, dd}, bN, bD, on, h) - want) < 1e-12);

    double prev = kInfinity;
    for (double lambda : {1e-2, 1e-4, 1e-6, 1e-8}) {
      double v = eval_K_dfdc({bN, GridMeasure(g), bD}, bN, bD, DecayRates(lambda, h), h);
      CHECK(v < prev);
      prev = v;
    }
    CHECK(prev < 1e-8);
    CHECK(is_infinite(eval_K_dfdc({nn, nd, dd}, bN.scaled(2.0), bD, on, h)));
  }

  TEST_CASE("K_fpdc") {
    std::mt19937_64 rng(4);
    Grid g(-1.0, 1.0, 16);
    const double h = 0.05;
    DecayRates rates(0.7, h);
    GridMeasure bN = random_measure(g, rng, 0.6), bD = random_measure(g, rng, 0.4);
    GridMeasure nn = random_measure(g, rng, 0.45), nd = random_measure(g, rng, 0.15), dd = random_measure(g, rng, 0.4);
    SplitState s{nn, nd, dd};
    double base = eval_K_dfdc(s, bN, bD, rates, h);
    CHECK(eval_K_fpdc(s, bN, bD, rates, h, Potential::zero()) == base);
    Potential flat("flat", [](double) { return 2.5; }, [](double) { return 0.0; }, [](double) { return 0.0; },
                   {2.5, 0.0, 0.0});
    CHECK(std::abs(eval_K_fpdc(s, bN, bD, rates, h, flat) - base) < 1e-14);
    Potential psi = Potential::tanh();
    GridMeasure nt = nn + nd;
    double by_terms = -0.5 * plain_entropy(nt) - 0.5 * plain_entropy(bN) + plain_d2(bN, nt) / (4 * h) +
                      0.5 * plain_entropy(dd) - 0.5 * plain_entropy(bD) + plain_d2(bD, dd) / (4 * h) +
                      plain_entropy(nn) + plain_entropy(nd) - nn.mass() * std::log(rates.r_NN) -
                      nd.mass() * std::log(rates.r_ND) + 0.5 * (plain_energy(nt, psi) + plain_energy(dd, psi)) -
                      0.5 * (plain_energy(bN, psi) + plain_energy(bD, psi));
    CHECK(std::abs(eval_K_fpdc(s, bN, bD, rates, h, psi) - by_terms) < 1e-10);
  }

  TEST_CASE("decay split") {
    std::mt19937_64 rng(5);
    Grid g(0.0, 1.0, 10);
    GridMeasure nt = random_measure(g, rng);
    auto [a, b] = decay_split(nt, DecayRates(0.0, 0.3));
    CHECK(l1(a, nt) == 0.0);
    CHECK(b.mass() == 0.0);
    auto [c, d] = decay_split(nt, DecayRates(std::log(2.0), 1.0));
    CHECK(c.mass() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(d.mass() == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("decay split minimises the mixing functional") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Grid g(0.0, 1.0, 10);
    DecayRates rates(1.0, 0.2);
    GridMeasure nt = random_measure(g, rng);
    auto [nn, nd] = decay_split(nt, rates);
    double best = decay_mixing_functional(nn, nt, rates);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> w(nn.weights());
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::clamp(w[i] + 0.05 * u(rng) * nt[i], 0.0, nt[i]);
      CHECK(decay_mixing_functional(GridMeasure(g, w), nt, rates) > best);
    }
  }

  TEST_CASE("mixing functional is convex along segments") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Grid g(0.0, 1.0, 8);
    DecayRates rates(0.5, 0.4);
    GridMeasure nt = random_measure(g, rng);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> a(8), b(8);
      for (std::size_t i = 0; i < 8; ++i) a[i] = u(rng) * nt[i], b[i] = u(rng) * nt[i];
      double fa = decay_mixing_functional(GridMeasure(g, a), nt, rates);
      double fb = decay_mixing_functional(GridMeasure(g, b), nt, rates);
      for (double s : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        std::vector<double> m(8);
        for (std::size_t i = 0; i < 8; ++i) m[i] = (1 - s) * a[i] + s * b[i];
        CHECK(decay_mixing_functional(GridMeasure(g, m), nt, rates) <= (1 - s) * fa + s * fb + 1e-12);
      }
    }
  }

  TEST_CASE("inner solve matches the dense oracle on small grids") {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> cells(3, 6);
    for (int t = 0; t < 6; ++t) {
      Grid g(-1.0, 1.0, static_cast<std::size_t>(cells(rng)));
      const double h = 0.5;
      GridMeasure bar = random_measure(g, rng);
      for (const Potential& psi : {Potential::zero(), Potential::tanh()}) {
        std::vector<double> pv(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) pv[i] = psi(g.center(i));
        auto want = oracle::dense_free_energy_solve(g.x_min(), g.dx(), bar.weights(), pv, h);
        double got = free_energy_objective(minimize_free_energy(bar, h, psi), bar, h, psi);
        CHECK(got <= want.objective + 1e-9);
        CHECK(std::abs(got - want.objective) < 1e-6);
      }
    }
  }

  TEST_CASE("Gibbs measure is a fixed point") {
    Grid g(-3.0, 3.0, 60);
    Potential q = Potential::quadratic(1.0);
    GridMeasure gb = normalised_gibbs(g, q);
    for (double h : {0.01, 0.1, 1.0}) {
      GridMeasure out = jko_step_fp(gb, h, q);
      CHECK(l1(out, gb) < 1e-8);
      CHECK(std::abs(out.mass() - 1.0) < 1e-12);
    }
  }

  TEST_CASE("large h approaches Gibbs") {
    Grid g(-3.0, 3.0, 60);
    Potential q = Potential::quadratic(1.0);
    GridMeasure start = gaussian_measure(g, 1.0, 0.1);
    double prev = kInfinity;
    for (double h : {10.0, 100.0, 1000.0}) {
      double e = l1(jko_step_fp(start, h, q), normalised_gibbs(g, q));
      CHECK(e < prev);
      prev = e;
    }
    CHECK(prev < 1e-2);
  }

  TEST_CASE("heat step grows the variance by 2h") {
    const double h = 0.01;
    Grid g(-4.0, 4.0, 320);
    GridMeasure bar = gaussian_measure(g, 0.0, 0.25);
    GridMeasure out = jko_step_fp(bar, h, Potential::zero());
    CHECK(std::abs(out.mass() - bar.mass()) < 1e-12);
    CHECK(std::abs(variance(out) - variance(bar) - 2 * h) < 0.1 * 2 * h);
  }

  TEST_CASE("masses telescope") {
    Grid g(-4.0, 4.0, 96);
    GridMeasure n0 = gaussian_measure(g, 0.0, 0.25), d0(g);
    auto s = jko_step_dfdc(n0, d0, DecayRates(1.0, 0.1), 0.1, Potential::zero());
    CHECK(std::abs(s.rho_N().mass() - 0.904837418035960) < 1e-12);
    auto lam0 = jko_step_dfdc(n0, d0, DecayRates(0.0, 0.1), 0.1, Potential::zero());
    CHECK(lam0.rho_ND.mass() == 0.0);
    CHECK(lam0.rho_DD.mass() == 0.0);

    const double h = 0.05;
    auto tr = run_flow(n0, d0, h, 1.0, 1.0, Potential::tanh());
    CHECK(tr.monitor_failures.empty());
    const double r = std::exp(-h);
    for (std::size_t k = 0; k < tr.rho_N.size(); ++k) {
      CHECK(std::abs(tr.rho_N[k].mass() - std::pow(r, double(k))) < 1e-10);
      CHECK(std::abs(tr.rho_D[k].mass() - (1 - std::pow(r, double(k)))) < 1e-10);
      CHECK(std::abs(tr.rho_N[k].mass() + tr.rho_D[k].mass() - 1.0) < 1e-10);
    }
    CHECK(std::abs(tr.rho_N.back().mass() - std::exp(-1.0)) < 1e-9);
  }

  TEST_CASE("flow monitors hold across an h ladder") {
    Grid g(-4.0, 4.0, 128);
    GridMeasure n0 = gaussian_measure(g, 0.0, 0.25), d0(g);
    const double T = 0.25;
    for (double h : {0.05, 0.025, 0.0125}) {
      auto tr = run_flow(n0, d0, h, T, 1.0, Potential::zero());
      CHECK(tr.monitor_failures.empty());
      for (const auto& d : tr.steps) {
        CHECK(d.single_step_slack <= 1e-9);
        CHECK(d.comparison_slack <= 1e-9);
      }
      DecayRates rates(1.0, h);
      for (std::size_t n = 1; n < tr.rho_N.size(); ++n) CHECK(decay_brace(tr, n, rates) <= 0.0);
      CHECK(tr.max_second_moment() <= second_moment(n0) + 2 * T);
      CHECK(tr.transport_sum() <= 1.0 * h);
    }
  }

  TEST_CASE("heat flow tracks the reference solution") {
    Grid g(-4.0, 4.0, 256);
    GridMeasure n0 = gaussian_measure(g, 0.0, 0.25), d0(g);
    auto tr = run_flow(n0, d0, 0.0125, 0.25, 0.0, Potential::zero());
    auto ref = solve_system(n0, d0, Potential::zero(), 0.0, 0.25, 1e-4);
    CHECK(l1(tr.rho_N.back(), ref.frames_N.back()) < 0.05);
  }

  TEST_CASE("contracted functional") {
    Grid g(-3.0, 3.0, 48);
    const double h = 0.05;
    DecayRates rates(1.0, h);
    GridMeasure bar = gaussian_measure(g, 0.2, 0.3);
    GridMeasure step = jko_step_fp(bar, h, Potential::zero());
    GridMeasure rn = step.scaled(rates.r_NN);
    CHECK(std::abs(eval_K_bar_dec(rn, bar, rates, h) - eval_K_df(step, bar, h)) < 1e-6);

    DecayRates none(0.0, h);
    CHECK(std::abs(eval_K_bar_dec(step, bar, none, h) - eval_K_df(step, bar, h)) < 1e-12);

    GridMeasure other = gaussian_measure(g, 0.0, 0.4).scaled(rates.r_NN);
    GridMeasure nd = other.scaled(rates.r_ND / rates.r_NN);
    CHECK(std::abs(eval_K_bar_dec_at(other, nd, bar, rates, h) - eval_K_reduced_kw(other, bar, rates, h)) < 1e-10);

    std::mt19937_64 rng(9);
    double inf = eval_K_bar_dec(other, bar, rates, h);
    for (int t = 0; t < 10; ++t) {
      GridMeasure trial = random_measure(g, rng, bar.mass() - other.mass());
      CHECK(inf <= eval_K_bar_dec_at(other, trial, bar, rates, h) + 1e-9);
    }
    CHECK_THROWS_AS(eval_K_bar_dec(bar.scaled(1.5), bar, rates, h), PreconditionError);
  }

  TEST_CASE("reaction steps") {
    Grid g(-3.0, 3.0, 48);
    const double h = 0.05;
    GridMeasure a = gaussian_measure(g, -0.5, 0.2), b = gaussian_measure(g, 0.5, 0.3, 0.0);
    DecayRates dr(0.9, h);
    ReactionRates two{{"N", "D"}, {dr.r_NN, dr.r_ND, 0.0, 1.0}};
    GridMeasure n0 = gaussian_measure(g, 0.0, 0.25, 0.7), dd0 = gaussian_measure(g, 0.3, 0.2, 0.3);
    auto rx = jko_step_reaction({{"N", n0}, {"D", dd0}}, two, h, Potential::tanh());
    auto s = jko_step_dfdc(n0, dd0, dr, h, Potential::tanh());
    CHECK(l1(rx.at("N"), s.rho_N()) < 1e-12);
    CHECK(l1(rx.at("D"), s.rho_D()) < 1e-12);

    ReactionRates id{{"N", "D"}, {1.0, 0.0, 0.0, 1.0}};
    auto same = jko_step_reaction({{"N", n0}, {"D", dd0}}, id, h, Potential::zero());
    CHECK(l1(same.at("N"), jko_step_fp(n0, h, Potential::zero())) == 0.0);

    // A -> B -> C chain; masses follow the matrix power
    const double p = 1 - std::exp(-0.8 * h), q = 1 - std::exp(-0.3 * h);
    ReactionRates chain{{"A", "B", "C"}, {1 - p, p, 0, 0, 1 - q, q, 0, 0, 1}};
    std::map<std::string, GridMeasure> st{{"A", a}, {"B", GridMeasure(g)}, {"C", GridMeasure(g)}};
    std::vector<double> m{1.0, 0.0, 0.0};
    for (int k = 0; k < 10; ++k) {
      st = jko_step_reaction(st, chain, h, Potential::zero());
      m = {m[0] * (1 - p), m[0] * p + m[1] * (1 - q), m[1] * q + m[2]};
      CHECK(std::abs(st.at("A").mass() - m[0]) < 1e-10);
      CHECK(std::abs(st.at("B").mass() - m[1]) < 1e-10);
      CHECK(std::abs(st.at("C").mass() - m[2]) < 1e-10);
    }
    ReactionRates bad{{"A", "B"}, {0.5, 0.6, 0.0, 1.0}};
    CHECK_THROWS_AS(jko_step_reaction({{"A", a}, {"B", b}}, bad, h, Potential::zero()), PreconditionError);
  }
}
