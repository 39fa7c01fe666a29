#pragma once

#include <cstddef>
#include <vector>

#include "ldgf/coupling.hpp"
#include "ldgf/kernel.hpp"
#include "ldgf/measure.hpp"

namespace ldgf {

struct TransportResult {
  double cost;
  Coupling coupling;
  long iterations;
  double marginal_residual;
};

struct PlanEntry {
  std::size_t i, j;
  double mass;
};

// Masses equal up to 1e-12 (relative to max(1, mass)).
bool masses_match(double a, double b, double tol = 1e-12);

// Monotone (quantile) plan between two measures on possibly different grids.
std::vector<PlanEntry> monotone_plan(const GridMeasure& mu, const GridMeasure& nu);
double wasserstein2_cost(const GridMeasure& mu, const GridMeasure& nu);
TransportResult wasserstein2_1d(const GridMeasure& mu, const GridMeasure& nu);
// Successive-shortest-path network solve; oracle for n_cells <= 64.
TransportResult wasserstein2_lp(const GridMeasure& mu, const GridMeasure& nu);

// Squared W2 between the piecewise-constant densities w_i/dx (mass spread uniformly over each cell).
double wasserstein2_cells(const GridMeasure& mu, const GridMeasure& nu);

// Squared W2 between arbitrary sorted atoms (xs, ws) and (ys, vs) of equal mass.
double wasserstein2_atoms(const std::vector<double>& xs, const std::vector<double>& ws,
                          const std::vector<double>& ys, const std::vector<double>& vs);

struct BridgeOptions {
  double tol = 1e-10;
  long max_iters = 50000;
  long check_every = 10;
};

struct BridgeResult {
  Coupling coupling;
  double value;  // H(q | mu (x) K dy), +inf when no feasible coupling
  long iterations;
  double marginal_residual;
  bool residual_monotone;  // non-increasing at every check
};

// argmin / min of H(q | mu_i K_ij dy) over couplings of mu and nu, by iterative
// proportional fitting with absorbed log-domain potentials.
BridgeResult schrodinger_bridge(const GridMeasure& mu, const GridMeasure& nu, const Kernel& reference,
                                const BridgeOptions& opts = {});

// p_ij = mu_i K_ij dy
Coupling reference_coupling(const GridMeasure& mu, const Kernel& reference);

std::pair<double, double> coupling_sum_inequality_check(const GridMeasure& r1, const GridMeasure& r2,
                                                        const GridMeasure& r3, const GridMeasure& r4);

}  // namespace ldgf
