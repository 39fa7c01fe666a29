#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ldgf/jko.hpp"
#include "ldgf/kernel.hpp"
#include "ldgf/measure.hpp"
#include "ldgf/transport.hpp"

namespace ldgf {

// Transition kernel for the drift psi: heat for zero, closed form for affine, ground-state form otherwise.
Kernel fp_reference_kernel(const Grid& grid, const Potential& psi, double h);

// inf H(q | rho_bar theta^h) over couplings of rho_bar and rho
double rate_df(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const BridgeOptions& opts = {});
double rate_fp(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const Potential& psi,
               const BridgeOptions& opts = {});
// Rewritten diffusion-decay rate functional; +inf outside the admissible set.
double rate_dfdc(const SplitState& state, const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar,
                 const DecayRates& rates, double h, const BridgeOptions& opts = {});

// H(q|rho_bar K dy) - d^2/4h split into pieces that do not cancel:
//   entropic = sum q log(q / (rho_bar_i dy)) - sum q (log K_ij + |x-y|^2/4h)
//   gap      = sum q |x-y|^2/4h - d^2/4h, d between the cellwise-uniform densities
struct BridgeDecomposition {
  double J;
  double d2_over_4h;
  double entropic;
  double gap;
  double subtracted() const { return entropic + gap; }
};
BridgeDecomposition decompose_bridge(const GridMeasure& rho, const GridMeasure& rho_bar, const Kernel& K,
                                     const BridgeOptions& opts = {});

enum class MoscoVariant { Df, FP, DfDc };

struct MoscoSpec {
  MoscoVariant variant = MoscoVariant::Df;
  double x_min = -4.0, x_max = 4.0;
  double bar_mean = 0.0, bar_var = 0.25;
  double mean = 0.0, var = 0.36;
  Potential psi = Potential::zero();
  // DfDc: rho_bar_N carries mass 1 - dark_mass, rho_bar_D = dark_mass * same shape;
  // rho_NN = split_fraction * rho_N-shape, rho_ND = the rest, rho_DD = dark_mass * rho-shape
  double lambda = 1.0;
  double dark_mass = 0.3;
  double split_fraction = 0.8;
  // cells per sqrt(h); the probe needs dx <= sqrt(h)/4
  double cells_per_root_h = 4.0;
};

struct MoscoRow {
  double h;
  std::size_t n_cells;
  double J;
  double d2_over_4h;
  double extra_subtractions;
  double difference;
  double target;
  double entropic_gap;
  double energy_term;  // 1/2 (E(rho) - E(rho_bar)), FP only
};

struct MoscoReport {
  MoscoVariant variant;
  std::vector<MoscoRow> rows;
  // |difference - target| over the rungs
  std::vector<double> errors() const;
  bool last_three_decreasing() const;
};

Grid mosco_grid(const MoscoSpec& spec, double h);
MoscoReport mosco_probe(const MoscoSpec& spec, const std::vector<double>& h_ladder,
                        const BridgeOptions& opts = {});

struct EmpiricalRateRow {
  std::size_t n;
  std::size_t trials;
  std::size_t hits;
  double estimate;      // -(1/n) log(hits/trials)
  bool lower_bound;     // no hits: estimate is -(1/n) log(1/trials)
  double tube_rate;     // smallest J^h over the sampled tube members
};

struct EmpiricalRateSpec {
  double h = 0.05;
  double tube_radius = 0.05;
  std::size_t trials = 400;
  std::uint64_t seed = 1;
  std::size_t tube_samples = 9;
};

std::vector<EmpiricalRateRow> empirical_rate_probe(const GridMeasure& rho_target, const GridMeasure& rho_bar,
                                                   const std::vector<std::size_t>& n_ladder,
                                                   const EmpiricalRateSpec& spec);

std::string to_string(MoscoVariant v);
MoscoVariant parse_mosco_variant(const std::string& s);

}  // namespace ldgf
