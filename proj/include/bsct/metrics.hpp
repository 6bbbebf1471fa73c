#pragma once

// Scan-curve metrics: perturbation force norms, force smoothness deviation
// (FSD) with compress/stretch splits, energy/force MAEs, a synthetic 1-D PES
// demonstrator, and dataset aggregation.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsct/chem.hpp"

namespace bsct {

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Energies and forces of one model (or the reference) along one scan.
struct ScanCurve {
  std::string id;
  std::string source;  // model id or "reference"
  std::size_t n_atoms = 0;
  std::vector<double> alpha;                // A
  std::vector<double> energies;             // eV
  std::vector<std::vector<double>> forces;  // per frame, flattened N x 3, eV/A

  std::size_t size() const noexcept { return alpha.size(); }
  /// argmin of the energies; ties go to the smallest index.
  std::size_t min_e_index() const;
  void validate() const;
};

/// |F(alpha) - F(alpha_minE)|^2 per frame, over the flattened force arrays.
std::vector<double> delta_force_norm_sq(const ScanCurve& c);

enum class SplitPoint { reference_min, zero };

struct FsdOptions {
  double floor = 1e-8;  // relative to each curve's scan maximum
  SplitPoint split = SplitPoint::reference_min;
};

struct FsdResult {
  double full = 0.0;
  std::optional<double> compress, stretch;
  std::size_t n_valid = 0;         // valid points
  double alpha_split = 0.0;
  std::vector<double> derivative;  // dg/dalpha per point, NaN where no valid stencil
};

/// Core computation on squared perturbation-force norms sampled on a uniform
/// grid.  Throws InsufficientData with fewer than 3 valid points.
FsdResult fsd_from_norms(std::span<const double> alpha, std::span<const double> model_sq,
                         std::span<const double> ref_sq, double alpha_split, double floor = 1e-8);

/// Throws when the alpha grids differ.
FsdResult fsd(const ScanCurve& model, const ScanCurve& ref, const FsdOptions& opt = {});

/// meV/atom: mean over frames of |dE| / N.
double mae_energy(std::span<const double> pred, std::span<const double> ref, std::span<const std::size_t> n_atoms);
/// meV/A: mean absolute force-component error.
double mae_forces(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& ref);
double mae_energy(const ScanCurve& pred, const ScanCurve& ref);
double mae_forces(const ScanCurve& pred, const ScanCurve& ref);

// ---------------------------------------------------------------------------
// Synthetic PES demonstrator
// ---------------------------------------------------------------------------

enum class SynthKind { pes1, pes2 };

struct SynthParams {
  double k = 1.0;         // eV/A^2, reference curvature
  double cubic = 0.15;    // eV/A^3
  double quartic = 0.1;   // eV/A^4
  double dip_depth = 0.12;   // eV
  double dip_center = 0.6;   // A
  double dip_width = 0.05;   // A
};

struct SynthPair {
  ScanCurve reference, model;
};

/// Uniform grid of n points on [lo, hi].
std::vector<double> uniform_grid(double lo, double hi, std::size_t n);
SynthPair synth_pes(SynthKind kind, const std::vector<double>& grid, const SynthParams& p = {});

struct SynthDemo {
  double fsd_pes1 = 0.0, fsd_pes2 = 0.0;
  double mae_forces_pes1 = 0.0, mae_forces_pes2 = 0.0;  // meV/A
  double mae_energy_pes1 = 0.0, mae_energy_pes2 = 0.0;  // meV/atom
};

SynthDemo synth_demo(std::size_t n_points = 100, double lo = -1.0, double hi = 1.0);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ScanFsd {
  std::string id;
  bool valid = false;
  std::string error;  // why the scan was excluded
  double full = 0.0;
  std::optional<double> compress, stretch;
  std::size_t n_valid = 0;
};

struct FsdReport {
  std::vector<ScanFsd> scans;
  double mean_full = 0.0;
  std::optional<double> mean_compress, mean_stretch;
  std::size_t count = 0, count_compress = 0, count_stretch = 0;
};

/// Pairs curves by id; scans whose FSD cannot be computed are recorded as
/// invalid.  Grid mismatches throw.
std::vector<ScanFsd> evaluate_fsd(const std::vector<ScanCurve>& model, const std::vector<ScanCurve>& ref,
                                  const FsdOptions& opt = {}, int jobs = 0);

/// Arithmetic means over valid scans.  Throws InsufficientData when none are valid.
FsdReport aggregate_report(std::vector<ScanFsd> scans);

std::string fsd_report_json(const FsdReport& r);
std::string fsd_report_csv(const FsdReport& r);
FsdReport parse_fsd_report_json(const std::string& text);

std::string curves_json(const std::vector<ScanCurve>& curves);
std::vector<ScanCurve> parse_curves_json(const std::string& text);
std::vector<ScanCurve> read_curves(const std::filesystem::path& path);

}  // namespace bsct
