#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ldgf/coupling.hpp"
#include "ldgf/jko.hpp"
#include "ldgf/ldp.hpp"
#include "ldgf/measure.hpp"
#include "ldgf/particles.hpp"
#include "ldgf/pde.hpp"

namespace ldgf {

// 17 significant digits
std::string fmt(double v);

// Write to a temporary sibling, then rename over the target.
void atomic_write(const std::filesystem::path& path, const std::string& content);

// Files of one command, all written only after every one of them was produced.
class OutputSet {
 public:
  void add(std::string name, std::string content);
  void commit(const std::filesystem::path& dir) const;
  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

std::string grid_json(const Grid& grid);
Grid parse_grid_json(const std::string& text);
// "min,max,n"
Grid parse_grid_spec(const std::string& spec);

// header x,weight
std::string measure_csv(const GridMeasure& m);
// The grid is recovered from the (uniform) cell centres.
GridMeasure parse_measure_csv(const std::string& text);
GridMeasure read_measure_csv(const std::filesystem::path& path);

// k,t,massN,massD,d2N,d2D,SN,SD,Kvalue
std::string trajectory_csv(const FlowTrajectory& traj);
// h,J,d2_over_4h,extra_subtractions,difference,target,entropic_gap (+ energy_term for FP)
std::string mosco_csv(const MoscoReport& rep);
// i,x,state
std::string ensemble_csv(const ParticleEnsemble& ens);
// i,j,mass for entries above 1e-15
std::string coupling_csv(const Coupling& q);
// t,x,uN,uD for every stored frame
std::string pde_frames_csv(const PdeSolution& sol);
// t,massN,massD,total
std::string pde_mass_csv(const PdeSolution& sol);

std::string read_file(const std::filesystem::path& path);

}  // namespace ldgf
