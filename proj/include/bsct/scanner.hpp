#pragma once

// Bond scans: rigid displacement of the two fragments on either side of a
// bridge bond along the bond axis, plus the sampling filters used to build a
// scan dataset.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bsct/chem.hpp"

namespace bsct {

class NotABridge : public Error {
 public:
  explicit NotABridge(const std::string& what) : Error(what) {}
};

/// Bonds whose removal splits their connected component in two.  Output is
/// canonical (i < j) and sorted.
std::vector<Bond> find_bridge_bonds(std::size_t n_atoms, const std::vector<Bond>& bonds);

/// -1 for the component containing bridge.first once the bridge is removed,
/// +1 for the one containing bridge.second.  Atoms in other components get 0.
std::vector<int> fragment_labels(std::size_t n_atoms, const std::vector<Bond>& bonds, Bond bridge);

struct BondScan {
  Structure base;            // carries the explicit topology used for labelling
  Bond bond{0, 0};           // (a, b) as given; direction points a -> b
  std::vector<int> labels;   // h_i
  Vec3 direction{0, 0, 0};   // unit vector
  std::vector<double> alpha_grid;
  std::vector<std::vector<Vec3>> frames;
  bool single_atom_fragment = false;

  /// Frame m as a Structure (same species and bonds as base).
  Structure frame(std::size_t m) const;
  double bond_length(std::size_t m) const;
};

/// x_i'(alpha) = x_i + alpha * h_i * r_hat.  Topology comes from
/// perceive_bonds(s); alpha_grid must be increasing and uniform.
BondScan make_scan(const Structure& s, Bond bridge, std::vector<double> alpha_grid);

/// Uniform grid whose bond length spans [0.5 R, 2 R], R the covalent radii sum.
std::vector<double> scan_alpha_range(const Structure& s, Bond bridge, int n_frames = 100);

struct OverlapVerdict {
  std::vector<char> keep;  // per frame
  bool accepted = true;
};

/// Rejects frames where any pair other than the scanned one is closer than
/// factor * (r_i + r_j); the scan is rejected if any frame is.
OverlapVerdict filter_overlaps(const BondScan& scan, double factor = 0.9);

/// True when adjacent energies differ by more than `threshold` eV.
bool has_energy_jump(const std::vector<double>& energies, double threshold = 1.0);

using ElementPair = std::pair<int, int>;  // (min Z, max Z)

ElementPair element_pair(int za, int zb);
std::set<ElementPair> default_bond_types();
/// "CC,CN,OP" style list; case sensitive element symbols.
std::set<ElementPair> parse_bond_types(const std::string& spec);
std::string bond_type_name(ElementPair p);

struct SampleOptions {
  std::set<ElementPair> allowed = default_bond_types();
  int n_frames = 100;
  std::uint64_t seed = 0;
  int scans_per_structure = 1;
  bool allow_single_atom_fragments = true;
  double bond_scale = 1.2;
  double overlap_factor = 0.9;
  int jobs = 1;
  /// Optional extra check on a candidate scan; returns a rejection reason.
  std::function<std::optional<std::string>(const BondScan&)> validator;
};

struct SampleDecision {
  std::string tag;
  Bond bond{0, 0};
  bool accepted = false;
  std::string reason;  // empty when accepted
};

std::vector<BondScan> sample_scan_dataset(const std::vector<Structure>& structures,
                                          const SampleOptions& options,
                                          std::vector<SampleDecision>* log = nullptr);

/// One directory per scan: scan.json + frames.xyz.
void write_scan_dir(const std::filesystem::path& dir, const BondScan& scan);
BondScan read_scan_dir(const std::filesystem::path& dir);

}  // namespace bsct
