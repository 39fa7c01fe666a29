#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ldgf/kernel.hpp"
#include "ldgf/measure.hpp"

namespace ldgf {

// (4 pi h)^{-1/2} exp(-z^2 / 4h)
double heat_density(double z, double h);
// shifted-Gaussian and factored forms of the affine Fokker-Planck fundamental solution
double affine_fp_density(double x, double y, double c, double h);
double affine_fp_density_factored(double x, double y, double c, double h);

// Throws "grid too coarse for h" unless dx <= sqrt(h).
void require_resolution(const Grid& grid, double h);

Kernel heat_kernel(const Grid& grid, double h);
Kernel fp_kernel_affine(const Grid& grid, double c, double h);
// Finite-difference rows: each row is the solution at time h started from a unit cell mass.
Kernel fp_kernel_numeric(const Grid& grid, const Potential& psi, double h, int substeps);
// Ground-state form theta * exp(-psi(y)/2 + psi(x)/2 - h <V>_[x,y]) with V = psi'^2/4 - psi''/2,
// the line average taken along the straight segment. Exact for affine psi.
Kernel fp_kernel_semiclassical(const Grid& grid, const Potential& psi, double h);

std::pair<double, double> beta_bounds(const Potential& psi, const Grid& grid);

// True if a Gaussian of variance 2h started at x_i leaves the domain with mass < 1e-10.
bool interior_row(const Grid& grid, std::size_t i, double h);

// Worst violation of the two-sided bound, relative to the peak theta(0); only interior
// rows and entries with theta > 1e-12 are inspected. Zero means the bound holds.
double sandwich_check(const Kernel& eta, const Potential& psi, double beta0, double beta1);

struct PdeOptions {
  double diffusion = 1.0;
  // store every k-th frame (the final frame is always stored); 0 stores first and last only
  std::size_t frame_every = 0;
  // initial Crank-Nicolson steps replaced by two implicit-Euler half steps each
  int startup_steps = 0;
};

struct PdeSolution {
  Grid grid;
  std::vector<double> times;
  std::vector<GridMeasure> frames_N;
  std::vector<GridMeasure> frames_D;
  double dt;
  std::string method;
};

// Largest stable dt for the explicit drift: dt * max|psi'|^2 <= 2 D.
double max_stable_dt(const Grid& grid, const Potential& psi, double diffusion = 1.0);

PdeSolution solve_fp_decay(const GridMeasure& rho0, const Potential& psi, double lambda, double T, double dt,
                           const PdeOptions& opts = {});
PdeSolution solve_system(const GridMeasure& rhoN0, const GridMeasure& rhoD0, const Potential& psi, double lambda,
                         double T, double dt, const PdeOptions& opts = {});

}  // namespace ldgf
