#pragma once

#include <cstddef>
#include <vector>

#include "ldgf/measure.hpp"

namespace ldgf {

// Dense nonnegative matrix on row_grid x col_grid, row-major.
class Coupling {
 public:
  Coupling(Grid row_grid, Grid col_grid);
  Coupling(Grid row_grid, Grid col_grid, std::vector<double> entries);

  const Grid& row_grid() const { return rg_; }
  const Grid& col_grid() const { return cg_; }
  std::size_t rows() const { return rg_.size(); }
  std::size_t cols() const { return cg_.size(); }
  double operator()(std::size_t i, std::size_t j) const { return e_[i * cols() + j]; }
  double& operator()(std::size_t i, std::size_t j) { return e_[i * cols() + j]; }
  const std::vector<double>& entries() const { return e_; }

  double mass() const;
  GridMeasure first_marginal() const;
  GridMeasure second_marginal() const;
  // Sum q_ij |x_i - y_j|^2
  double transport_cost() const;

 private:
  Grid rg_, cg_;
  std::vector<double> e_;
};

// H(q|p) = sum q log(q/p), +inf when q is not absolutely continuous w.r.t. p.
double relative_entropy(const Coupling& q, const Coupling& p);

}  // namespace ldgf
