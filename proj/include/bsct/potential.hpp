#pragma once

// A small attention-based interatomic potential operating on edge features.
//
// Every directed edge (i -> j) of the neighbor graph carries a feature vector
// built from Gaussian radial features of d_ij, Cartesian monomials of the unit
// vector, and embeddings of both species.  Residual blocks alternate between
// attention over edges sharing a source atom ("out") and edges sharing a
// destination atom ("in").  Attention logits are biased by log e_ij, the
// envelope weight of the key edge, and the energy is a weighted sum of edge
// readouts plus per-element offsets.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bsct/autodiff.hpp"
#include "bsct/chem.hpp"
#include "bsct/graphs.hpp"
#include "bsct/reference.hpp"

namespace bsct {

enum class ForceHead { direct, gradient };
enum class GraphKind { hard_knn, diff_knn, diff_knn_memeff };

std::string to_string(ForceHead h);
std::string to_string(GraphKind g);
ForceHead parse_force_head(const std::string& s);
GraphKind parse_graph_kind(const std::string& s);

using FlatConfig = std::map<std::string, std::string>;

struct PotentialConfig {
  int embed_dim = 512;
  int hidden_factor = 2;
  int n_layers = 8;
  int n_heads = 32;
  int k = 30;
  double r_c = 6.0;
  double d0 = 0.2;
  double beta = 10.0;
  int delta = 20;
  int n_radial = 128;
  double gamma = 1.0;  // smearing scale: sigma = gamma * center spacing
  int l_max = 5;
  double tau = 1.0;    // attention temperature
  ForceHead head = ForceHead::gradient;
  GraphKind graph = GraphKind::diff_knn;
  bool value_scaling = false;  // also multiply attention values by e_ij
  double repulsion = 0.0;      // weight of the fixed short-range pair prior; 0 disables it
  double repulsion_cutoff = 0.6;  // prior range as a fraction of the covalent-radius sum

  void validate() const;
  int head_dim() const { return embed_dim / n_heads; }

  /// Keys are prefixed with "model.".
  FlatConfig to_flat() const;
  /// Applies the "model.*" entries of `flat`; unknown model keys throw.
  void apply(const FlatConfig& flat);
};

/// Named parameter arrays, iterated in name order.
using Parameters = std::map<std::string, ad::Array>;

Parameters init_parameters(const PotentialConfig& cfg, std::uint64_t seed);
/// Throws when names or shapes disagree with the configuration.
void check_parameters(const PotentialConfig& cfg, const Parameters& p);
std::size_t parameter_count(const Parameters& p);

// ---------------------------------------------------------------------------
// Featurization and attention primitives
// ---------------------------------------------------------------------------

/// n_radial Gaussians with centers evenly spaced on [0, r_c].
std::vector<double> radial_features(double d, int n_radial, double r_c, double gamma);
ad::Tensor radial_features(const ad::Tensor& d, int n_radial, double r_c, double gamma);

/// C(l_max + 3, 3)
int angular_feature_count(int l_max);
/// Monomials x^a y^b z^c with a + b + c <= l_max, ordered by total degree and
/// then by decreasing a, decreasing b.
std::vector<double> angular_features(const Vec3& u, int l_max);
ad::Tensor angular_features(const ad::Tensor& u, int l_max);

/// softmax(q k^T / (tau sqrt(d_k)) + bias) v over the last two axes.  `bias`
/// may be undefined or broadcast against the logits.
ad::Tensor attention(const ad::Tensor& q, const ad::Tensor& k, const ad::Tensor& v, double tau,
                     const ad::Tensor& bias = {});

/// Fixed short-range prior: sum over pairs of the ZBL universal screened
/// nuclear repulsion times envelope(r / r_cut), r_cut = cutoff * (r_cov,i +
/// r_cov,j), scaled by `weight`.  Smooth everywhere and exactly zero beyond
/// r_cut, so bonded geometries are untouched for cutoff < 1.
double zbl_pair(int z_i, int z_j, double r, double cutoff);
EnergyForces repulsion_prior(const std::vector<int>& species, const std::vector<Vec3>& x, double weight,
                             double cutoff);

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

/// Edge graph of a batch of structures, treated as one disjoint union.
struct BatchGraph {
  std::size_t n_atoms = 0;
  std::size_t n_structures = 0;
  std::vector<int> species;        // per atom
  std::vector<int> atom_structure; // per atom
  std::vector<std::size_t> atom_offset;  // first atom of each structure
  ad::Array positions;             // n_atoms x 3
  std::vector<int> src, dst;       // global atom indices
  std::vector<int> edge_structure;
  std::vector<DiffGraph> parts;    // per-structure graphs (local indices)
  std::vector<std::size_t> edge_offset;

  // Attention groups: slots[g * width + m] is an edge index or -1; pos[e] is
  // the flat slot holding edge e.
  struct Groups {
    std::size_t count = 0, width = 0;
    std::vector<int> slots;
    std::vector<int> pos;
  };
  Groups out_groups, in_groups;
};

BatchGraph build_batch_graph(const PotentialConfig& cfg, const std::vector<const Structure*>& batch);

/// Per-edge log envelope weight as a function of (taped) positions.
ad::Tensor edge_log_weights(const PotentialConfig& cfg, const BatchGraph& g, const ad::Tensor& positions);

/// One residual block (attention + feedforward) of layer `layer`.
ad::Tensor windowed_block(const PotentialConfig& cfg, const std::map<std::string, ad::Tensor>& params,
                          int layer, const BatchGraph::Groups& groups, const ad::Tensor& h,
                          const ad::Tensor& log_w);

struct ForwardResult {
  ad::Tensor energies;  // [n_structures]
  ad::Tensor forces;    // [n_atoms, 3]
};

/// Full forward pass.  For the gradient head, forces are -dE/dx computed on
/// `positions`, which must be a variable on the same tape as the parameters
/// whenever create_graph is set.  With `with_forces` false only energies are
/// computed and `forces` is left undefined.
ForwardResult forward(const PotentialConfig& cfg, const std::map<std::string, ad::Tensor>& params,
                      const BatchGraph& g, const ad::Tensor& positions, bool create_graph,
                      bool with_forces = true);

class Potential {
 public:
  Potential(PotentialConfig cfg, Parameters params);

  const PotentialConfig& config() const noexcept { return cfg_; }
  const Parameters& parameters() const noexcept { return params_; }

  double energy(const Structure& s) const;
  EnergyForces evaluate(const Structure& s) const;
  std::vector<EnergyForces> evaluate_batch(const std::vector<const Structure*>& batch) const;

 private:
  PotentialConfig cfg_;
  Parameters params_;
  std::map<std::string, ad::Tensor> constants_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  PotentialConfig config;
  Parameters params;
  Parameters ema;          // may be empty
  FlatConfig metadata;     // free-form extra keys (training settings etc.)
};

/// Single file: a text manifest followed by raw little-endian float64 arrays.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bsct
