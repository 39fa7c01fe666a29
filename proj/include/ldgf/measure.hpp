#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ldgf/errors.hpp"

namespace ldgf {

class Grid {
 public:
  Grid(double x_min, double x_max, std::size_t n_cells);

  double x_min() const { return x_min_; }
  double x_max() const { return x_max_; }
  std::size_t size() const { return n_; }
  double dx() const { return (x_max_ - x_min_) / static_cast<double>(n_); }
  double center(std::size_t i) const { return x_min_ + (static_cast<double>(i) + 0.5) * dx(); }
  std::vector<double> centers() const;
  // cell containing x, clamped to [0, n-1]
  std::size_t cell_of(double x) const;

  bool operator==(const Grid& o) const {
    return x_min_ == o.x_min_ && x_max_ == o.x_max_ && n_ == o.n_;
  }
  bool operator!=(const Grid& o) const { return !(*this == o); }

 private:
  double x_min_, x_max_;
  std::size_t n_;
};

class GridMeasure {
 public:
  explicit GridMeasure(Grid grid);  // zero measure
  GridMeasure(Grid grid, std::vector<double> weights);

  const Grid& grid() const { return grid_; }
  const std::vector<double>& weights() const { return w_; }
  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  double density(std::size_t i) const { return w_[i] / grid_.dx(); }
  double mass() const;
  bool empty() const;

  GridMeasure scaled(double c) const;
  GridMeasure operator+(const GridMeasure& o) const;
  // componentwise difference; throws if it would go negative beyond rounding
  GridMeasure operator-(const GridMeasure& o) const;

 private:
  Grid grid_;
  std::vector<double> w_;
};

// Sample a density at cell centres and rescale to the requested total mass.
GridMeasure discretise(const Grid& grid, const std::function<double(double)>& density,
                       double mass = 1.0);
GridMeasure gaussian_measure(const Grid& grid, double mean, double variance, double mass = 1.0);

class Potential {
 public:
  struct Bounds {
    double sup_psi, sup_dpsi, sup_d2psi;
  };

  Potential(std::string name, std::function<double(double)> psi, std::function<double(double)> dpsi,
            std::function<double(double)> d2psi, Bounds bounds);

  static Potential zero();
  static Potential affine(double c);
  static Potential tanh();
  static Potential quadratic(double k = 1.0);
  // "zero", "tanh", "quadratic", "affine:<c>"
  static Potential parse(const std::string& spec);

  double operator()(double x) const { return psi_(x); }
  double d1(double x) const { return dpsi_(x); }
  double d2(double x) const { return d2psi_(x); }
  const Bounds& bounds() const { return bounds_; }
  const std::string& name() const { return name_; }
  bool is_zero() const { return zero_; }
  std::optional<double> affine_slope() const { return slope_; }
  bool is_bounded() const;

  // Samples psi and its derivatives on the grid against the declared bounds.
  void verify_bounds(const Grid& grid) const;

 private:
  std::string name_;
  std::function<double(double)> psi_, dpsi_, d2psi_;
  Bounds bounds_;
  bool zero_ = false;
  std::optional<double> slope_;
};

double entropy(const GridMeasure& m);
// same, but S(0) = 0 instead of an error
double entropy_or_zero(const GridMeasure& m);
double potential_energy(const GridMeasure& m, const Potential& psi);
double free_energy(const GridMeasure& m, const Potential& psi);
double second_moment(const GridMeasure& m);
double mean(const GridMeasure& m);
double l1_distance(const GridMeasure& a, const GridMeasure& b);
// mass in the outermost `cells` cells on each side
double boundary_mass(const GridMeasure& m, std::size_t cells = 1);

std::pair<double, double> entropy_split_identity_check(const GridMeasure& rho, double alpha,
                                                       double beta);

}  // namespace ldgf
