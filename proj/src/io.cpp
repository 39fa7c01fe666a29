#include "ldgf/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "ldgf/errors.hpp"

namespace ldgf {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f << content;
    f.flush();
    if (!f) {
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void OutputSet::add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }

void OutputSet::commit(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [name, content] : files_) atomic_write(dir / name, content);
}

std::string grid_json(const Grid& grid) {
  nlohmann::json j = {{"x_min", grid.x_min()}, {"x_max", grid.x_max()}, {"n_cells", grid.size()}};
  return j.dump() + "\n";
}

Grid parse_grid_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  return Grid(j.at("x_min").get<double>(), j.at("x_max").get<double>(), j.at("n_cells").get<std::size_t>());
}

Grid parse_grid_spec(const std::string& spec) {
  std::stringstream ss(spec);
  std::string a, b, c;
  if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c) || c.find(',') != std::string::npos)
    throw PreconditionError("grid must be \"min,max,n\": '" + spec + "'");
  try {
    std::size_t pos = 0;
    long n = std::stol(c, &pos);
    if (n < 2) throw PreconditionError("grid needs at least 2 cells");
    return Grid(std::stod(a), std::stod(b), static_cast<std::size_t>(n));
  } catch (const std::logic_error& e) {
    if (auto* p = dynamic_cast<const PreconditionError*>(&e)) throw *p;
    throw PreconditionError("grid must be \"min,max,n\": '" + spec + "'");
  }
}

std::string measure_csv(const GridMeasure& m) {
  std::string s = "x,weight\n";
  for (std::size_t i = 0; i < m.size(); ++i) s += fmt(m.grid().center(i)) + "," + fmt(m[i]) + "\n";
  return s;
}

GridMeasure parse_measure_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line.rfind("x,weight", 0) != 0) throw PreconditionError("measure csv: expected header x,weight");
  std::vector<double> x, w;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw PreconditionError("measure csv: malformed line '" + line + "'");
    try {
      x.push_back(std::stod(line.substr(0, comma)));
      w.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::logic_error&) {
      throw PreconditionError("measure csv: malformed line '" + line + "'");
    }
  }
  if (x.size() < 2) throw PreconditionError("measure csv: need at least two cells");
  double dx = (x.back() - x.front()) / static_cast<double>(x.size() - 1);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::abs(x[i] - (x.front() + dx * static_cast<double>(i))) > 1e-9 * std::max(1.0, std::abs(x[i])))
      throw PreconditionError("measure csv: cell centres are not uniform");
  Grid g(x.front() - 0.5 * dx, x.back() + 0.5 * dx, x.size());
  return GridMeasure(g, std::move(w));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PreconditionError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

GridMeasure read_measure_csv(const std::filesystem::path& path) { return parse_measure_csv(read_file(path)); }

std::string trajectory_csv(const FlowTrajectory& traj) {
  std::string s = "k,t,massN,massD,d2N,d2D,SN,SD,Kvalue\n";
  for (const auto& d : traj.steps)
    s += std::to_string(d.k) + "," + fmt(d.t) + "," + fmt(d.massN) + "," + fmt(d.massD) + "," + fmt(d.d2N) + "," +
         fmt(d.d2D) + "," + fmt(d.SN) + "," + fmt(d.SD) + "," + fmt(d.K_value) + "\n";
  return s;
}

std::string mosco_csv(const MoscoReport& rep) {
  const bool fp = rep.variant == MoscoVariant::FP;
  std::string s = "h,J,d2_over_4h,extra_subtractions,difference,target,entropic_gap";
  s += fp ? ",energy_term\n" : "\n";
  for (const auto& r : rep.rows) {
    s += fmt(r.h) + "," + fmt(r.J) + "," + fmt(r.d2_over_4h) + "," + fmt(r.extra_subtractions) + "," +
         fmt(r.difference) + "," + fmt(r.target) + "," + fmt(r.entropic_gap);
    s += fp ? "," + fmt(r.energy_term) + "\n" : "\n";
  }
  return s;
}

std::string ensemble_csv(const ParticleEnsemble& ens) {
  std::string s = "i,x,state\n";
  for (std::size_t i = 0; i < ens.size(); ++i)
    s += std::to_string(i) + "," + fmt(ens.x[i]) + "," + (ens.state[i] == ParticleState::N ? "N" : "D") + "\n";
  return s;
}

std::string coupling_csv(const Coupling& q) {
  std::string s = "i,j,mass\n";
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j)
      if (q(i, j) > 1e-15) s += std::to_string(i) + "," + std::to_string(j) + "," + fmt(q(i, j)) + "\n";
  return s;
}

std::string pde_frames_csv(const PdeSolution& sol) {
  std::string s = "t,x,uN,uD\n";
  for (std::size_t k = 0; k < sol.times.size(); ++k)
    for (std::size_t i = 0; i < sol.grid.size(); ++i)
      s += fmt(sol.times[k]) + "," + fmt(sol.grid.center(i)) + "," + fmt(sol.frames_N[k].density(i)) + "," +
           fmt(sol.frames_D[k].density(i)) + "\n";
  return s;
}

std::string pde_mass_csv(const PdeSolution& sol) {
  std::string s = "t,massN,massD,total\n";
  for (std::size_t k = 0; k < sol.times.size(); ++k) {
    double a = sol.frames_N[k].mass(), b = sol.frames_D[k].mass();
    s += fmt(sol.times[k]) + "," + fmt(a) + "," + fmt(b) + "," + fmt(a + b) + "\n";
  }
  return s;
}

}  // namespace ldgf
