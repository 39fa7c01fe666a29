#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "ldgf/coupling.hpp"
#include "ldgf/jko.hpp"
#include "ldgf/measure.hpp"

namespace ldgf {

// Philox4x32-10 counter-based generator (Salmon et al.).
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;
  static Counter block(Counter ctr, Key key);
};

// Draws for one particle at one step: counter = (id, step, purpose/index), key = seed.
class ParticleStream {
 public:
  ParticleStream(std::uint64_t seed, std::uint64_t id, std::uint32_t step, std::uint16_t purpose);
  // uniform in (0, 1), 53 bits
  double uniform();
  double normal();

 private:
  void refill();
  Philox4x32::Key key_;
  Philox4x32::Counter ctr_;
  std::array<std::uint32_t, 4> buf_{};
  int used_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
  std::uint32_t block_ = 0;
};

enum class ParticleState : std::uint8_t { N = 0, D = 1 };

struct ParticleEnsemble {
  std::vector<double> x;
  std::vector<ParticleState> state;
  // random substream of each particle; travels with the particle under permutation
  std::vector<std::uint64_t> id;
  std::uint64_t seed = 0;
  std::uint32_t step = 0;

  std::size_t size() const { return x.size(); }
  std::size_t count(ParticleState s) const;
};

// x_i = CDF^{-1}((i - 1/2)/n) for the piecewise-constant density of rho_bar
std::vector<double> deterministic_init(const GridMeasure& rho_bar, std::size_t n);
ParticleEnsemble make_ensemble(const GridMeasure& rho_bar, std::size_t n, std::uint64_t seed);

// Exact Gaussian move for zero or affine psi, Euler-Maruyama with `substeps` otherwise.
ParticleEnsemble step_positions(const ParticleEnsemble& ens, double h, const Potential& psi, int substeps = 16);
// N -> D with probability r_ND; D is absorbing.
ParticleEnsemble step_states(const ParticleEnsemble& ens, const DecayRates& rates);

enum class StateFilter { All, N, D };

struct Binned {
  GridMeasure measure;
  std::size_t clamped;  // particles outside the grid, counted in the end cells
};

Binned empirical_measure(const ParticleEnsemble& ens, const Grid& grid, StateFilter filter = StateFilter::All);

struct EmpiricalPair {
  ParticleEnsemble initial, final;
};

Coupling pair_empirical(const EmpiricalPair& pair, const Grid& grid);

// Squared W2 between the equal-weight atoms at xs and the piecewise-constant density of target (mass 1).
double w2_to_density(std::vector<double> xs, const GridMeasure& target);

}  // namespace ldgf
