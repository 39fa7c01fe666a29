#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ldgf/measure.hpp"

namespace ldgf {

struct DecayRates {
  DecayRates(double lambda, double h);
  double lambda, h;
  double r_NN, r_ND, r_DN, r_DD;
};

struct SplitState {
  GridMeasure rho_NN, rho_ND, rho_DD;
  GridMeasure rho_N() const { return rho_NN; }
  GridMeasure rho_D() const { return rho_ND + rho_DD; }
  GridMeasure rho_NT() const { return rho_NN + rho_ND; }
};

// Per-cell convex energy g_j, used by the inner solver.
class CellEnergy {
 public:
  virtual ~CellEnergy() = default;
  virtual double value(std::size_t j, double w) const = 0;
  virtual double derivative(std::size_t j, double w) const = 0;
  virtual double second_derivative(std::size_t j, double w) const = 0;
  virtual double lower(std::size_t) const { return 0.0; }
};

// g_j(w) = 1/2 (w log(w/dx) + w psi(x_j))
class HalfFreeEnergy : public CellEnergy {
 public:
  HalfFreeEnergy(const Grid& grid, const Potential& psi);
  double value(std::size_t j, double w) const override;
  double derivative(std::size_t j, double w) const override;
  double second_derivative(std::size_t j, double w) const override;

 private:
  double dx_;
  std::vector<double> psi_;
};

struct InnerResult {
  GridMeasure minimiser;
  double objective;     // sum_j g_j + d^2/4h
  double kkt_residual;  // largest gradient component in the breakpoint variables
  std::size_t iterations;
};

// Minimise sum_j g_j(w_j) + d^2(rho_bar, w)/4h over w >= lower with total mass |rho_bar|,
// d the distance between the cellwise-uniform densities (wasserstein2_cells).
InnerResult minimize_cell_energy(const GridMeasure& rho_bar, double h, const CellEnergy& energy);
// 1/2 F + d^2/4h with F = S + E
GridMeasure minimize_free_energy(const GridMeasure& rho_bar, double h, const Potential& psi);
double free_energy_objective(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const Potential& psi);

double eval_K_fp(const GridMeasure& rho, const GridMeasure& rho_bar, double h, const Potential& psi);
double eval_K_df(const GridMeasure& rho, const GridMeasure& rho_bar, double h);
double eval_K_dc(const GridMeasure& rho, const GridMeasure& rho_bar, const DecayRates& rates);
double eval_K_dfdc(const SplitState& state, const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar,
                   const DecayRates& rates, double h);
double eval_K_fpdc(const SplitState& state, const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar,
                   const DecayRates& rates, double h, const Potential& psi);
// Contracted functional at a given rho_ND (no infimum).
double eval_K_bar_dec_at(const GridMeasure& rhoN, const GridMeasure& rhoND, const GridMeasure& rhoN_bar,
                         const DecayRates& rates, double h);
// Contracted functional: infimum over rho_ND with |rho_N + rho_ND| = |rho_bar_N|.
double eval_K_bar_dec(const GridMeasure& rhoN, const GridMeasure& rhoN_bar, const DecayRates& rates, double h);
// 1/2 S(rho_N / r) - 1/2 S(rho_bar_N) + d^2(rho_bar_N, rho_N / r)/4h
double eval_K_reduced_kw(const GridMeasure& rhoN, const GridMeasure& rhoN_bar, const DecayRates& rates, double h);

std::pair<GridMeasure, GridMeasure> decay_split(const GridMeasure& rho_NT, const DecayRates& rates);
// F(rho_NN) = S(rho_NN) + S(rho_NT - rho_NN) - |rho_NN| log r_NN - |rho_NT - rho_NN| log r_ND
double decay_mixing_functional(const GridMeasure& rho_NN, const GridMeasure& rho_NT, const DecayRates& rates);

GridMeasure jko_step_fp(const GridMeasure& rho_bar, double h, const Potential& psi);
SplitState jko_step_dfdc(const GridMeasure& rhoN_bar, const GridMeasure& rhoD_bar, const DecayRates& rates,
                         double h, const Potential& psi);

struct StepDiagnostics {
  std::size_t k;
  double t;
  double massN, massD;
  double d2N, d2D;
  double SN, SD;
  double K_value;
  double M2;
  // (1/2h)(d2N + d2D) minus the free-energy drop; <= 0 expected
  double single_step_slack;
  // K at the accepted state minus K at the unchanged comparison state; <= 0 expected
  double comparison_slack;
};

struct FlowTrajectory {
  double h;
  std::vector<double> times;
  std::vector<GridMeasure> rho_N, rho_D;
  std::vector<StepDiagnostics> steps;
  std::vector<std::string> monitor_failures;

  double transport_sum() const;
  double max_second_moment() const;
};

FlowTrajectory run_flow(const GridMeasure& rhoN0, const GridMeasure& rhoD0, double h, double T, double lambda,
                        const Potential& psi);

// Decay-entropy bookkeeping accumulated over the first n steps, recomputed from masses.
double decay_brace(const FlowTrajectory& traj, std::size_t n, const DecayRates& rates);

struct ReactionRates {
  std::vector<std::string> states;
  std::vector<double> r;  // row-major r[mu * S + nu]
  double at(std::size_t mu, std::size_t nu) const { return r[mu * states.size() + nu]; }
  void validate() const;
};

std::map<std::string, GridMeasure> jko_step_reaction(const std::map<std::string, GridMeasure>& states,
                                                     const ReactionRates& rates, double h,
                                                     const Potential& psi);

}  // namespace ldgf
