#pragma once

// Run configuration shared by the command-line tools: a flat file of dotted
// `key = value` lines covering the model, training, scan, MD and data
// settings, plus the model loader used by every command that evaluates one.

#include <filesystem>
#include <string>
#include <vector>

#include "bsct/dynamics.hpp"
#include "bsct/metrics.hpp"
#include "bsct/potential.hpp"
#include "bsct/scanner.hpp"
#include "bsct/trainer.hpp"

namespace bsct {

struct ScanSettings {
  int frames = 100;
  std::uint64_t seed = 0;
  std::string bond_types;  // empty: default set
  int scans_per_structure = 1;
  double overlap_factor = 0.9;
  double bond_scale = 1.2;
};

struct MdSettings {
  double dt = 1.0;
  long steps = 1000;
  double friction = 1e-3;
  double temperature = 300.0;
  std::uint64_t seed = 0;
  int record_every = 1;
  // stability protocol
  std::vector<double> temperatures{300.0, 600.0, 900.0};
  int seeds = 3;
  long equilibration_steps = 500;
  long production_steps = 1000;
  double relax_tol = 0.02;
  int relax_steps = 500;
};

struct FsdSettings {
  SplitPoint split = SplitPoint::reference_min;
  double floor = 1e-8;
};

struct RunConfig {
  PotentialConfig model;
  TrainConfig train;
  ScanSettings scan;
  MdSettings md;
  DatasetOptions data;
  FsdSettings fsd;
  int jobs = 0;

  /// Applies every entry; unknown keys and malformed values throw.
  void apply(const FlatConfig& flat);
  FlatConfig to_flat() const;
  void validate() const;

  SampleOptions sample_options() const;
  StabilityOptions stability_options() const;
  MdOptions md_options(Ensemble e) const;
  FsdOptions fsd_options() const;
};

/// `key = value` per line; '#' starts a comment; duplicate keys throw
/// ParseError with the line number.
FlatConfig parse_flat_config(const std::string& text);
std::string flat_config_text(const FlatConfig& flat);

RunConfig read_run_config(const std::filesystem::path& path);

/// "reference" selects the analytic reference potential; anything else is a
/// checkpoint path.  With use_ema the EMA weights are used when present.
struct LoadedModel {
  std::string name;
  StructureModel model;
  std::optional<PotentialConfig> config;  // unset for the reference
};
LoadedModel load_model(const std::string& spec, bool use_ema = true);
LoadedModel potential_model(const PotentialConfig& cfg, const Parameters& params, std::string name);

/// Evaluates every frame of a scan.
ScanCurve scan_curve(const BondScan& scan, const StructureModel& model, const std::string& id,
                     const std::string& source, int jobs = 0);

/// Directory name for a scan: <tag>_<a>-<b>.
std::string scan_dir_name(const BondScan& scan);

/// Sorted subdirectories of `dir` that contain a scan.json.
std::vector<std::filesystem::path> list_scan_dirs(const std::filesystem::path& dir);

}  // namespace bsct
