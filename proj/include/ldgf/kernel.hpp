#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ldgf/measure.hpp"

namespace ldgf {

// Transition density K_ij for moving x_i -> x_j over time h (units 1/length).
class Kernel {
 public:
  Kernel(Grid grid, double h, std::vector<double> entries, std::string method);

  const Grid& grid() const { return grid_; }
  double time() const { return h_; }
  std::size_t size() const { return grid_.size(); }
  double operator()(std::size_t i, std::size_t j) const { return e_[i * size() + j]; }
  const std::vector<double>& entries() const { return e_; }
  const std::string& method() const { return method_; }

  // max_i |sum_j K_ij dx - 1|
  double row_mass_defect() const;
  // (mu K)_j = sum_i mu_i K_ij dx
  GridMeasure push_forward(const GridMeasure& mu) const;

 private:
  Grid grid_;
  double h_;
  std::vector<double> e_;
  std::string method_;
};

}  // namespace ldgf
