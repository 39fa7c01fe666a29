#include "ldgf/measure.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ldgf/coupling.hpp"

namespace ldgf {

namespace {

double xlogy_over(double w, double scale) { return w > 0.0 ? w * std::log(w / scale) : 0.0; }

}  // namespace

Grid::Grid(double x_min, double x_max, std::size_t n_cells) : x_min_(x_min), x_max_(x_max), n_(n_cells) {
  if (!(std::isfinite(x_min) && std::isfinite(x_max)) || !(x_max > x_min))
    throw PreconditionError("grid: need finite x_min < x_max");
  if (n_cells < 2) throw PreconditionError("grid: need at least 2 cells");
}

std::vector<double> Grid::centers() const {
  std::vector<double> c(n_);
  for (std::size_t i = 0; i < n_; ++i) c[i] = center(i);
  return c;
}

std::size_t Grid::cell_of(double x) const {
  double t = std::floor((x - x_min_) / dx());
  if (!(t >= 0.0)) return 0;
  if (t >= static_cast<double>(n_)) return n_ - 1;
  return static_cast<std::size_t>(t);
}

GridMeasure::GridMeasure(Grid grid) : grid_(grid), w_(grid.size(), 0.0) {}

GridMeasure::GridMeasure(Grid grid, std::vector<double> weights) : grid_(grid), w_(std::move(weights)) {
  if (w_.size() != grid_.size()) throw PreconditionError("measure: weight count does not match grid");
  for (double w : w_)
    if (!(w >= 0.0) || !std::isfinite(w)) throw PreconditionError("measure: weights must be finite and >= 0");
}

double GridMeasure::mass() const { return std::accumulate(w_.begin(), w_.end(), 0.0); }

bool GridMeasure::empty() const {
  return std::none_of(w_.begin(), w_.end(), [](double w) { return w > 0.0; });
}

GridMeasure GridMeasure::scaled(double c) const {
  if (!(c >= 0.0)) throw PreconditionError("measure: negative scale");
  std::vector<double> w(w_);
  for (double& v : w) v *= c;
  return GridMeasure(grid_, std::move(w));
}

GridMeasure GridMeasure::operator+(const GridMeasure& o) const {
  if (o.grid_ != grid_) throw PreconditionError("measure: grid mismatch");
  std::vector<double> w(w_);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] += o.w_[i];
  return GridMeasure(grid_, std::move(w));
}

GridMeasure GridMeasure::operator-(const GridMeasure& o) const {
  if (o.grid_ != grid_) throw PreconditionError("measure: grid mismatch");
  std::vector<double> w(w_);
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] -= o.w_[i];
    if (w[i] < 0.0) {
      if (w[i] < -1e-14 * std::max(1.0, w_[i])) throw PreconditionError("measure: difference is negative");
      w[i] = 0.0;
    }
  }
  return GridMeasure(grid_, std::move(w));
}

GridMeasure discretise(const Grid& grid, const std::function<double(double)>& density, double mass) {
  std::vector<double> w(grid.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::max(0.0, density(grid.center(i))) * grid.dx();
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw PreconditionError("discretise: density has no mass on the grid");
  for (double& v : w) v *= mass / total;
  return GridMeasure(grid, std::move(w));
}

GridMeasure gaussian_measure(const Grid& grid, double mu, double variance, double mass) {
  if (!(variance > 0.0)) throw PreconditionError("gaussian: variance must be positive");
  return discretise(
      grid, [=](double x) { return std::exp(-(x - mu) * (x - mu) / (2.0 * variance)); }, mass);
}

Potential::Potential(std::string name, std::function<double(double)> psi, std::function<double(double)> dpsi,
                     std::function<double(double)> d2psi, Bounds bounds)
    : name_(std::move(name)), psi_(std::move(psi)), dpsi_(std::move(dpsi)), d2psi_(std::move(d2psi)),
      bounds_(bounds) {}

Potential Potential::zero() {
  Potential p("zero", [](double) { return 0.0; }, [](double) { return 0.0; }, [](double) { return 0.0; },
              {0.0, 0.0, 0.0});
  p.zero_ = true;
  p.slope_ = 0.0;
  return p;
}

Potential Potential::affine(double c) {
  if (c == 0.0) return zero();
  std::ostringstream name;
  name.precision(17);
  name << "affine:" << c;
  // unbounded on the line; sup|psi| is only finite on a truncated domain
  Potential p(name.str(), [c](double x) { return c * x; }, [c](double) { return c; },
              [](double) { return 0.0; }, {kInfinity, std::abs(c), 0.0});
  p.slope_ = c;
  return p;
}

Potential Potential::tanh() {
  const double d2max = 4.0 / (3.0 * std::sqrt(3.0));
  return Potential(
      "tanh", [](double x) { return std::tanh(x); },
      [](double x) {
        double s = 1.0 / std::cosh(x);
        return s * s;
      },
      [](double x) {
        double s = 1.0 / std::cosh(x);
        return -2.0 * s * s * std::tanh(x);
      },
      {1.0, 1.0, d2max});
}

Potential Potential::quadratic(double k) {
  return Potential(
      "quadratic", [k](double x) { return 0.5 * k * x * x; }, [k](double x) { return k * x; },
      [k](double) { return k; }, {kInfinity, kInfinity, std::abs(k)});
}

Potential Potential::parse(const std::string& spec) {
  if (spec == "zero") return zero();
  if (spec == "tanh") return tanh();
  if (spec == "quadratic") return quadratic();
  if (spec.rfind("affine:", 0) == 0) {
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(spec.substr(7), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != spec.size() - 7 || !std::isfinite(c))
      throw PreconditionError("potential: bad affine slope in '" + spec + "'");
    return affine(c);
  }
  throw PreconditionError("potential: unknown selector '" + spec + "'");
}

bool Potential::is_bounded() const {
  return std::isfinite(bounds_.sup_psi) && std::isfinite(bounds_.sup_dpsi) && std::isfinite(bounds_.sup_d2psi);
}

void Potential::verify_bounds(const Grid& grid) const {
  const double slack = 1e-12;
  for (std::size_t i = 0; i <= 4 * grid.size(); ++i) {
    double x = grid.x_min() + (grid.x_max() - grid.x_min()) * static_cast<double>(i) / (4.0 * grid.size());
    if (std::abs(psi_(x)) > bounds_.sup_psi * (1 + slack) + slack ||
        std::abs(dpsi_(x)) > bounds_.sup_dpsi * (1 + slack) + slack ||
        std::abs(d2psi_(x)) > bounds_.sup_d2psi * (1 + slack) + slack)
      throw PreconditionError("potential '" + name_ + "' exceeds its declared bounds");
  }
}

double entropy(const GridMeasure& m) {
  if (m.empty()) throw PreconditionError("empty measure");
  return entropy_or_zero(m);
}

double entropy_or_zero(const GridMeasure& m) {
  const double dx = m.grid().dx();
  double s = 0.0;
  for (double w : m.weights()) s += xlogy_over(w, dx);
  return s;
}

double potential_energy(const GridMeasure& m, const Potential& psi) {
  if (psi.is_zero()) return 0.0;
  double e = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i] > 0.0) e += m[i] * psi(m.grid().center(i));
  return e;
}

double free_energy(const GridMeasure& m, const Potential& psi) {
  return entropy_or_zero(m) + potential_energy(m, psi);
}

double second_moment(const GridMeasure& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    double x = m.grid().center(i);
    s += m[i] * x * x;
  }
  return s;
}

double mean(const GridMeasure& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m[i] * m.grid().center(i);
  return s / m.mass();
}

double l1_distance(const GridMeasure& a, const GridMeasure& b) {
  if (a.grid() != b.grid()) throw PreconditionError("l1: grid mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double boundary_mass(const GridMeasure& m, std::size_t cells) {
  cells = std::min(cells, m.size() / 2);
  double s = 0.0;
  for (std::size_t i = 0; i < cells; ++i) s += m[i] + m[m.size() - 1 - i];
  return s;
}

std::pair<double, double> entropy_split_identity_check(const GridMeasure& rho, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0)) throw PreconditionError("split identity: alpha and beta must be positive");
  if (rho.empty()) throw PreconditionError("empty measure");
  const double m = rho.mass();
  const double lhs = entropy(rho.scaled(alpha + beta));
  const double rhs = entropy(rho.scaled(alpha)) + entropy(rho.scaled(beta)) -
                     alpha * m * std::log(alpha / (alpha + beta)) - beta * m * std::log(beta / (alpha + beta));
  return {lhs, rhs};
}

Coupling::Coupling(Grid row_grid, Grid col_grid)
    : rg_(row_grid), cg_(col_grid), e_(row_grid.size() * col_grid.size(), 0.0) {}

Coupling::Coupling(Grid row_grid, Grid col_grid, std::vector<double> entries)
    : rg_(row_grid), cg_(col_grid), e_(std::move(entries)) {
  if (e_.size() != rg_.size() * cg_.size()) throw PreconditionError("coupling: entry count mismatch");
  for (double v : e_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw PreconditionError("coupling: entries must be finite and >= 0");
}

double Coupling::mass() const { return std::accumulate(e_.begin(), e_.end(), 0.0); }

GridMeasure Coupling::first_marginal() const {
  std::vector<double> w(rows(), 0.0);
  for (std::size_t i = 0; i < rows(); ++i)
    for (std::size_t j = 0; j < cols(); ++j) w[i] += (*this)(i, j);
  return GridMeasure(rg_, std::move(w));
}

GridMeasure Coupling::second_marginal() const {
  std::vector<double> w(cols(), 0.0);
  for (std::size_t i = 0; i < rows(); ++i)
    for (std::size_t j = 0; j < cols(); ++j) w[j] += (*this)(i, j);
  return GridMeasure(cg_, std::move(w));
}

double Coupling::transport_cost() const {
  double c = 0.0;
  for (std::size_t i = 0; i < rows(); ++i) {
    double x = rg_.center(i);
    for (std::size_t j = 0; j < cols(); ++j) {
      double q = (*this)(i, j);
      if (q > 0.0) {
        double d = x - cg_.center(j);
        c += q * d * d;
      }
    }
  }
  return c;
}

double relative_entropy(const Coupling& q, const Coupling& p) {
  if (q.row_grid() != p.row_grid() || q.col_grid() != p.col_grid())
    throw PreconditionError("relative entropy: shape mismatch");
  double h = 0.0;
  const auto& qe = q.entries();
  const auto& pe = p.entries();
  for (std::size_t k = 0; k < qe.size(); ++k) {
    if (qe[k] <= 0.0) continue;
    if (pe[k] <= 0.0) return kInfinity;
    h += qe[k] * std::log(qe[k] / pe[k]);
  }
  return h;
}

}  // namespace ldgf
