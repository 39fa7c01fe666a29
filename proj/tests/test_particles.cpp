#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ldgf/particles.hpp"
#include "ldgf/pde.hpp"
#include "ldgf/transport.hpp"

using namespace ldgf;

namespace {

ParticleEnsemble at_zero(std::size_t n, std::uint64_t seed) {
  ParticleEnsemble e;
  e.x.assign(n, 0.0);
  e.state.assign(n, ParticleState::N);
  e.id.resize(n);
  std::iota(e.id.begin(), e.id.end(), 0);
  e.seed = seed;
  return e;
}

double sample_mean(const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); }

double sample_var(const std::vector<double>& x) {
  double m = sample_mean(x), s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / (x.size() - 1);
}

// squared W2 between two equal-size samples
double w2_samples(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / a.size();
}

Potential linear(double c) {
  return Potential("linear", [c](double x) { return c * x; }, [c](double) { return c; }, [](double) { return 0.0; },
                   {1e3, std::abs(c), 0.0});
}

}  // namespace

TEST_SUITE("particles") {
  TEST_CASE("Philox4x32-10 known answers") {
    using C = Philox4x32::Counter;
    CHECK(Philox4x32::block({0, 0, 0, 0}, {0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
          C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
          C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
  }

  TEST_CASE("stream uniforms stay inside (0,1)") {
    ParticleStream s(7, 3, 0, 1);
    double lo = 1, hi = 0;
    for (int k = 0; k < 10000; ++k) {
      double u = s.uniform();
      lo = std::min(lo, u), hi = std::max(hi, u);
    }
    CHECK(lo > 0.0);
    CHECK(hi < 1.0);
  }

  TEST_CASE("quantile initialisation") {
    Grid unit(0.0, 1.0, 8);
    GridMeasure u(unit, std::vector<double>(8, 0.125));
    auto x = deterministic_init(u, 4);
    std::vector<double> want{0.125, 0.375, 0.625, 0.875};
    for (std::size_t i = 0; i < 4; ++i) CHECK(x[i] == doctest::Approx(want[i]).epsilon(1e-14));
    Grid g(-4.0, 4.0, 256);
    auto med = deterministic_init(gaussian_measure(g, 0.0, 0.5), 1);
    CHECK(std::abs(med[0]) < 1e-12);
    CHECK_THROWS_AS(deterministic_init(u.scaled(0.5), 4), PreconditionError);
  }

  TEST_CASE("initial empirical measure converges") {
    Grid g(-4.0, 4.0, 1024);
    GridMeasure bar = gaussian_measure(g, 0.0, 0.25);
    double prev = std::sqrt(w2_to_density(deterministic_init(bar, 1000), bar));
    for (std::size_t n : {4000u, 16000u}) {
      double d = std::sqrt(w2_to_density(deterministic_init(bar, n), bar));
      CHECK(d / prev >= 0.5 * 0.7);
      CHECK(d / prev <= 0.5 * 1.3);
      prev = d;
    }
  }

  TEST_CASE("exact moves: variance and drift") {
    const double h = 0.1;
    auto free = step_positions(at_zero(100000, 3), h, Potential::zero());
    CHECK(std::abs(sample_var(free.x) / (2 * h) - 1.0) < 0.05);
    auto drift = step_positions(at_zero(100000, 4), h, linear(1.0));
    CHECK(std::abs(sample_mean(drift.x) / (-h) - 1.0) < 0.05);
    auto lib = step_positions(at_zero(100000, 4), h, Potential::affine(1.0));
    CHECK(std::abs(sample_mean(lib.x) / (-h) - 1.0) < 0.05);
    CHECK(free.step == 1);
  }

  TEST_CASE("seeds reproduce") {
    auto a = step_positions(at_zero(1000, 11), 0.05, Potential::tanh());
    auto b = step_positions(at_zero(1000, 11), 0.05, Potential::tanh());
    auto c = step_positions(at_zero(1000, 12), 0.05, Potential::tanh());
    CHECK(a.x == b.x);
    CHECK(a.x != c.x);
  }

  TEST_CASE("state flips") {
    auto e = at_zero(100000, 5);
    auto none = step_states(e, DecayRates(0.0, 1.0));
    CHECK(none.count(ParticleState::D) == 0);
    auto half = step_states(e, DecayRates(std::log(2.0), 1.0));
    CHECK(std::abs(double(half.count(ParticleState::D)) / 1e5 - 0.5) < 0.01);
    Grid g(-1.0, 1.0, 10);
    CHECK(std::abs(empirical_measure(half, g, StateFilter::N).measure.mass() - 0.5) < 0.01);
    auto dark = e;
    dark.state.assign(dark.size(), ParticleState::D);
    auto still = step_states(dark, DecayRates(5.0, 1.0));
    CHECK(still.state == dark.state);
  }

  TEST_CASE("N fraction follows the decay over k steps") {
    const std::size_t n = 50000;
    const double lambda = 1.0, h = 0.1;
    DecayRates r(lambda, h);
    auto e = at_zero(n, 6);
    for (int k = 1; k <= 10; ++k) {
      e = step_states(e, r);
      double p = std::exp(-lambda * k * h);
      double sd = std::sqrt(p * (1 - p) / n);
      CHECK(std::abs(double(e.count(ParticleState::N)) / n - p) < 4 * sd);
    }
  }

  TEST_CASE("binning") {
    Grid g(0.0, 1.0, 4);
    ParticleEnsemble one = at_zero(1, 1);
    one.x[0] = 0.6;
    auto b = empirical_measure(one, g);
    CHECK(b.measure[2] == 1.0);
    CHECK(b.clamped == 0);
    one.x[0] = 7.0;
    auto c = empirical_measure(one, g);
    CHECK(c.measure[3] == 1.0);
    CHECK(c.clamped == 1);
  }

  TEST_CASE("permutation keeps every particle's draws") {
    Grid g(-4.0, 4.0, 64);
    auto e = make_ensemble(gaussian_measure(g, 0.0, 0.3), 5000, 9);
    e = step_states(e, DecayRates(1.0, 0.3));
    auto p = e;
    std::mt19937_64 rng(1);
    std::vector<std::size_t> perm(e.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < e.size(); ++i) {
      p.x[i] = e.x[perm[i]];
      p.state[i] = e.state[perm[i]];
      p.id[i] = e.id[perm[i]];
    }
    auto a = step_states(step_positions(e, 0.05, Potential::tanh()), DecayRates(1.0, 0.3));
    auto b = step_states(step_positions(p, 0.05, Potential::tanh()), DecayRates(1.0, 0.3));
    for (auto f : {StateFilter::All, StateFilter::N, StateFilter::D}) {
      auto ma = empirical_measure(a, g, f).measure, mb = empirical_measure(b, g, f).measure;
      CHECK(ma.weights() == mb.weights());
    }
  }

  TEST_CASE("two steps of h match one step of 2h in law") {
    const double h = 0.05;
    const std::size_t n = 100000;
    Grid g(-4.0, 4.0, 512);
    auto base = [&](std::uint64_t seed) { return make_ensemble(gaussian_measure(g, 0.0, 0.25), n, seed); };
    auto twice = step_positions(step_positions(base(1), h, Potential::zero()), h, Potential::zero());
    auto once = step_positions(base(2), 2 * h, Potential::zero());
    double spread = 0.0;
    for (std::uint64_t s : {3u, 5u, 7u}) {
      auto a = step_positions(base(s), 2 * h, Potential::zero());
      auto b = step_positions(base(s + 1), 2 * h, Potential::zero());
      spread = std::max(spread, w2_samples(a.x, b.x));
    }
    CHECK(w2_samples(twice.x, once.x) <= 3 * spread);
  }

  TEST_CASE("Euler-Maruyama is stable under substep halving") {
    const double h = 0.05;
    const std::size_t n = 100000;
    Grid g(-4.0, 4.0, 512);
    auto base = [&](std::uint64_t seed) { return make_ensemble(gaussian_measure(g, 0.5, 0.25), n, seed); };
    auto a = step_positions(base(1), h, Potential::tanh(), 16);
    auto b = step_positions(base(2), h, Potential::tanh(), 32);
    double spread = 0.0;
    for (std::uint64_t s : {3u, 5u, 7u})
      spread = std::max(spread, w2_samples(step_positions(base(s), h, Potential::tanh(), 32).x,
                                           step_positions(base(s + 1), h, Potential::tanh(), 32).x));
    CHECK(w2_samples(a.x, b.x) <= 3 * spread);
  }

  TEST_CASE("pair empirical measure") {
    Grid g(-4.0, 4.0, 40);
    auto e0 = make_ensemble(gaussian_measure(g, 0.0, 0.3), 2000, 4);
    Coupling frozen = pair_empirical({e0, e0}, g);
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = 0; j < g.size(); ++j)
        if (i != j) CHECK(frozen(i, j) == 0.0);
    auto e1 = step_positions(e0, 0.1, Potential::tanh());
    Coupling q = pair_empirical({e0, e1}, g);
    auto m0 = empirical_measure(e0, g).measure, m1 = empirical_measure(e1, g).measure;
    auto q0 = q.first_marginal(), q1 = q.second_marginal();
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(std::abs(q0[i] - m0[i]) < 1e-12);
      CHECK(std::abs(q1[i] - m1[i]) < 1e-12);
    }
  }

  TEST_CASE("pair measure approaches the reference coupling") {
    const double h = 0.2;
    Grid g(-4.0, 4.0, 24);
    Kernel K = heat_kernel(g, h);
    double prev = kInfinity;
    for (std::size_t n : {1000u, 10000u, 100000u}) {
      auto e0 = make_ensemble(gaussian_measure(g, 0.0, 0.3), n, 8);
      auto e1 = step_positions(e0, h, Potential::zero());
      GridMeasure l0 = empirical_measure(e0, g).measure;
      double H = relative_entropy(pair_empirical({e0, e1}, g), reference_coupling(l0, K));
      CHECK(std::isfinite(H));
      CHECK(H < prev);
      prev = H;
    }
    CHECK(prev < 0.01);
  }
}
