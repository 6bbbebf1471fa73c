#pragma once

// Molecular dynamics: velocity Verlet (NVE), BAOAB Langevin (NVT), geometry
// relaxation, and the stability diagnostics built on top of them.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bsct/chem.hpp"
#include "bsct/reference.hpp"

namespace bsct {

class IntegrationBlowup : public Error {
 public:
  IntegrationBlowup(long step, const std::string& what)
      : Error("integration blew up at step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Energy and forces as a function of positions only.
using ForceFn = std::function<EnergyForces(const std::vector<Vec3>&)>;
/// Energy and forces of a full structure (a model or the reference).
using StructureModel = std::function<EnergyForces(const Structure&)>;

ForceFn bind_structure(const StructureModel& model, const Structure& s);

struct MdState {
  std::vector<Vec3> positions;   // A
  std::vector<Vec3> velocities;  // A/fs
  std::vector<double> masses;    // amu
  double time = 0.0;             // fs
  long step = 0;
  // Forces at the current positions, carried across steps so each step costs
  // exactly one evaluation.
  std::vector<Vec3> forces;
  double potential = 0.0;
  bool has_forces = false;

  std::size_t size() const noexcept { return positions.size(); }
  void validate() const;
};

MdState make_state(const Structure& s);

/// Evaluates forces at the current positions if not yet cached.
void ensure_forces(MdState& st, const ForceFn& fn);

void velocity_verlet_step(MdState& st, const ForceFn& fn, double dt);

/// BAOAB splitting; friction in 1/fs, temperature in K.
void langevin_step(MdState& st, const ForceFn& fn, double dt, double friction, double temperature,
                   std::mt19937_64& rng);

double kinetic_energy(std::span<const Vec3> v, std::span<const double> m);  // eV
double kinetic_temperature(std::span<const Vec3> v, std::span<const double> m);  // K

/// Maxwell-Boltzmann velocities at `temperature` with zero net momentum.
std::vector<Vec3> maxwell_boltzmann(std::span<const double> masses, double temperature, std::mt19937_64& rng);

/// max over pairs t1 <= t2 <= t1 + window of T(t2) - T(t1).
double max_temp_jump(std::span<const double> times, std::span<const double> temps, double window = 10.0);

/// |E_final - E_1| / n_atoms in meV, measured from the sample after the first step.
double energy_drift(std::span<const double> total_energy, std::size_t n_atoms);

struct RelaxResult {
  std::vector<Vec3> positions;
  bool converged = false;
  int steps = 0;
  double max_force = 0.0;  // eV/A
  double energy = 0.0;
};

/// Steepest descent with a backtracking line search.
RelaxResult relax(const ForceFn& fn, std::vector<Vec3> positions, double force_tol = 0.02, int max_steps = 500);

// ---------------------------------------------------------------------------
// Trajectories and reports
// ---------------------------------------------------------------------------

enum class Ensemble { nve, langevin };

struct MdOptions {
  Ensemble ensemble = Ensemble::nve;
  double dt = 1.0;               // fs
  long steps = 1000;
  double friction = 1e-3;        // 1/fs
  double temperature = 300.0;    // K, bath
  std::uint64_t seed = 0;
  int record_every = 1;
};

struct MdReport {
  std::string structure;
  double bath_temperature = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_atoms = 0;
  std::vector<long> steps;
  std::vector<double> time, total_energy, kinetic, temperature;
  double drift = 0.0;     // meV/atom
  double max_jump = 0.0;  // K over 10 fs
  bool aborted = false;
  long abort_step = -1;
  std::string error;
  bool relaxed = true;    // false when the protocol's relaxation did not converge
};

/// Integrates from `st` (modified in place), recording the initial sample and
/// every `record_every`-th step.  A non-finite force aborts the run; the report
/// then covers the steps completed so far.
MdReport run_md(MdState& st, const ForceFn& fn, const MdOptions& opt);

std::string md_series_csv(const MdReport& r);
std::string md_report_json(const MdReport& r, bool include_series = false);

struct StabilityOptions {
  std::vector<double> temperatures{300.0, 600.0, 900.0};
  int n_seeds = 3;
  double dt = 1.0;
  long equilibration_steps = 500;
  long production_steps = 1000;
  double friction = 1e-3;
  double relax_tol = 0.02;
  int relax_steps = 500;
  std::uint64_t seed = 0;
  int jobs = 0;
};

/// Relax, equilibrate, then run production Langevin dynamics for every
/// (structure, temperature, seed).  Reports come back in that nested order.
std::vector<MdReport> run_stability_protocol(const StructureModel& model, const std::vector<Structure>& structures,
                                             const StabilityOptions& opt);

struct JumpSummary {
  double temperature = 0.0;
  std::size_t runs = 0, aborted = 0;
  double mean_jump_all = 0.0;        // including aborted runs (jump up to the abort)
  std::optional<double> mean_jump_completed;
};

std::vector<JumpSummary> summarize_jumps(const std::vector<MdReport>& reports);

}  // namespace bsct
