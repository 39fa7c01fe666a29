#include "ldgf/particles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ldgf/errors.hpp"

namespace ldgf {

Philox4x32::Counter Philox4x32::block(Counter ctr, Key key) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      key[0] += W0;
      key[1] += W1;
    }
    std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
    std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
    auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

ParticleStream::ParticleStream(std::uint64_t seed, std::uint64_t id, std::uint32_t step, std::uint16_t purpose)
    : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
      ctr_{static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(id >> 32), step,
           static_cast<std::uint32_t>(purpose) << 16} {}

void ParticleStream::refill() {
  if (block_ > 0xFFFFu) throw PreconditionError("particle stream exhausted");
  Philox4x32::Counter c = ctr_;
  c[3] |= block_++;
  buf_ = Philox4x32::block(c, key_);
  used_ = 0;
}

double ParticleStream::uniform() {
  if (used_ >= 4) refill();
  std::uint64_t bits = (static_cast<std::uint64_t>(buf_[used_]) << 32) | buf_[used_ + 1];
  used_ += 2;
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double ParticleStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform(), u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

enum Purpose : std::uint16_t { kMove = 1, kFlip = 2 };

}  // namespace

std::size_t ParticleEnsemble::count(ParticleState s) const {
  return static_cast<std::size_t>(std::count(state.begin(), state.end(), s));
}

std::vector<double> deterministic_init(const GridMeasure& rho_bar, std::size_t n) {
  if (n == 0) throw PreconditionError("deterministic_init: n must be positive");
  double m = rho_bar.mass();
  if (std::abs(m - 1.0) > 1e-9) throw PreconditionError("deterministic_init: rho_bar must have unit mass");
  const Grid& g = rho_bar.grid();
  std::vector<double> x(n);
  std::size_t cell = 0;
  double below = 0.0;  // mass left of `cell`
  for (std::size_t i = 0; i < n; ++i) {
    double t = (static_cast<double>(i) + 0.5) / static_cast<double>(n) * m;
    while (cell + 1 < g.size() && below + rho_bar[cell] < t) below += rho_bar[cell++];
    double frac = rho_bar[cell] > 0.0 ? std::clamp((t - below) / rho_bar[cell], 0.0, 1.0) : 0.5;
    x[i] = g.x_min() + g.dx() * (static_cast<double>(cell) + frac);
  }
  return x;
}

ParticleEnsemble make_ensemble(const GridMeasure& rho_bar, std::size_t n, std::uint64_t seed) {
  ParticleEnsemble e;
  e.x = deterministic_init(rho_bar, n);
  e.state.assign(n, ParticleState::N);
  e.id.resize(n);
  for (std::size_t i = 0; i < n; ++i) e.id[i] = i;
  e.seed = seed;
  return e;
}

ParticleEnsemble step_positions(const ParticleEnsemble& ens, double h, const Potential& psi, int substeps) {
  if (!(h > 0.0)) throw PreconditionError("step_positions: h must be positive");
  if (substeps < 1) throw PreconditionError("step_positions: substeps must be positive");
  ParticleEnsemble out = ens;
  const auto slope = psi.affine_slope();
  const bool exact = psi.is_zero() || slope.has_value();
  const double c = psi.is_zero() ? 0.0 : slope.value_or(0.0);
  const double dt = h / substeps;
  for (std::size_t i = 0; i < ens.size(); ++i) {
    ParticleStream s(ens.seed, ens.id[i], ens.step, kMove);
    if (exact) {
      out.x[i] = ens.x[i] - c * h + std::sqrt(2.0 * h) * s.normal();
    } else {
      double x = ens.x[i];
      for (int k = 0; k < substeps; ++k) x += -psi.d1(x) * dt + std::sqrt(2.0 * dt) * s.normal();
      out.x[i] = x;
    }
  }
  ++out.step;
  return out;
}

ParticleEnsemble step_states(const ParticleEnsemble& ens, const DecayRates& rates) {
  ParticleEnsemble out = ens;
  for (std::size_t i = 0; i < ens.size(); ++i) {
    if (ens.state[i] != ParticleState::N) continue;
    ParticleStream s(ens.seed, ens.id[i], ens.step, kFlip);
    if (s.uniform() < rates.r_ND) out.state[i] = ParticleState::D;
  }
  ++out.step;
  return out;
}

namespace {

bool selected(ParticleState s, StateFilter f) {
  return f == StateFilter::All || (f == StateFilter::N) == (s == ParticleState::N);
}

std::size_t bin(const Grid& g, double x, std::size_t& clamped) {
  if (x < g.x_min() || x >= g.x_max()) ++clamped;
  return g.cell_of(x);
}

}  // namespace

Binned empirical_measure(const ParticleEnsemble& ens, const Grid& grid, StateFilter filter) {
  std::vector<double> w(grid.size(), 0.0);
  std::size_t clamped = 0;
  const double unit = 1.0 / static_cast<double>(ens.size());
  for (std::size_t i = 0; i < ens.size(); ++i)
    if (selected(ens.state[i], filter)) w[bin(grid, ens.x[i], clamped)] += unit;
  return {GridMeasure(grid, std::move(w)), clamped};
}

Coupling pair_empirical(const EmpiricalPair& pair, const Grid& grid) {
  if (pair.initial.size() != pair.final.size()) throw PreconditionError("pair_empirical: length mismatch");
  Coupling q(grid, grid);
  std::size_t clamped = 0;
  const double unit = 1.0 / static_cast<double>(pair.initial.size());
  for (std::size_t i = 0; i < pair.initial.size(); ++i)
    q(bin(grid, pair.initial.x[i], clamped), bin(grid, pair.final.x[i], clamped)) += unit;
  return q;
}

double w2_to_density(std::vector<double> xs, const GridMeasure& target) {
  if (xs.empty()) throw PreconditionError("w2_to_density: no atoms");
  if (std::abs(target.mass() - 1.0) > 1e-9) throw PreconditionError("w2_to_density: target must have unit mass");
  std::sort(xs.begin(), xs.end());
  const Grid& g = target.grid();
  const double unit = 1.0 / static_cast<double>(xs.size());
  std::size_t i = 0, j = 0;
  double ra = unit, rb = target[0];
  double cost = 0.0;
  while (i < xs.size() && j < g.size()) {
    if (!(rb > 0.0)) {
      if (++j < g.size()) rb = target[j];
      continue;
    }
    double l = std::min(ra, rb);
    // target quantile runs linearly across the consumed part of cell j
    double y0 = g.x_min() + g.dx() * (static_cast<double>(j) + (target[j] - rb) / target[j]);
    double y1 = y0 + g.dx() * l / target[j];
    double a = xs[i] - y0, b = xs[i] - y1;
    cost += l * (a * a + a * b + b * b) / 3.0;
    ra -= l;
    rb -= l;
    if (ra <= 1e-15 * unit) {
      ++i;
      ra = unit;
    }
    if (rb <= 1e-15 * unit && ++j < g.size()) rb = target[j];
  }
  return cost;
}

}  // namespace ldgf
