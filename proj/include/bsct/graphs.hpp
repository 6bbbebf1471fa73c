#pragma once

// Neighbor graphs: radius graphs, hard kNN, differentiable kNN with a smooth
// envelope, its memory-efficient bump-kernel variant, and neighbor counting.
//
// Edge ordering is canonical for every builder: by source atom, then by
// distance, then by destination index.

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bsct/autodiff.hpp"
#include "bsct/chem.hpp"

namespace bsct {

struct EdgeSet {
  std::size_t n_nodes = 0;
  std::vector<int> src, dst;
  std::vector<Vec3> vec;      // x_dst - x_src
  std::vector<double> dist;

  // Row layout: slots[i * row_width + m] is the m-th shortest out-edge of
  // node i, or -1 for padding.
  std::size_t row_width = 0;
  std::vector<int> slots;

  std::size_t size() const noexcept { return src.size(); }
  void add(int i, int j, const std::vector<Vec3>& x);
  /// Sorts edges canonically and rebuilds the row layout.
  void finalize();
};

/// All directed pairs closer than r_c, found with a cell list.
EdgeSet radius_graph(const std::vector<Vec3>& x, double r_c);

/// The k nearest other atoms of every atom (ties to the smaller index),
/// optionally restricted to distances below r_c.
EdgeSet hard_knn(const std::vector<Vec3>& x, int k,
                 double r_c = std::numeric_limits<double>::infinity());

double logistic(double x);

/// Sum over j' != self of sigmoid((d_self - d_j') / d0).
double soft_rank(std::span<const double> neighborhood, std::size_t self, double d0);

/// 0 for x <= -1, 1 for x >= 1, C-infinity smooth step in between.
double bump(double x);

/// f^2 / (1 - f^2) for f < 1, +infinity otherwise.
double envelope_exponent(double f);
/// exp(-f^2 / (1 - f^2)); exactly 0 once the exponent would underflow.
double envelope(double f);

/// Smooth maximum: log(exp(b*fr) + exp(b*fd)) / b.
double combine_rank_radius(double f_rank, double f_dist, double beta);

enum class RankKernel { sigmoid, bump };

struct DiffKnnParams {
  int k = 30;
  double d0 = 0.2;
  double r_c = 6.0;
  double beta = 10.0;
  RankKernel kernel = RankKernel::sigmoid;
  int delta = -1;  // >= 0: keep only the k + delta shortest candidates
};

struct DiffGraph {
  EdgeSet base;  // retained edges
  std::vector<double> soft_ranks, f_rank, f_dist, f_env, weights, log_weights;
  DiffKnnParams params;

  // Comparison sets: candidates of node i are cand_dst[cand_offset[i] ..
  // cand_offset[i+1]), sorted by distance.  edge_cand[e] locates retained
  // edge e in that list.
  std::vector<int> cand_offset, cand_dst;
  std::vector<double> cand_dist;
  std::vector<int> edge_cand;

  // Memory-efficient variant only: per node, whether truncation provably left
  // the result unchanged.
  std::vector<char> truncation_valid;
  std::size_t truncation_violations = 0;
};

DiffGraph diff_knn(const std::vector<Vec3>& x, const DiffKnnParams& params);
DiffGraph diff_knn(const std::vector<Vec3>& x, int k, double d0, double r_c, double beta);
/// Bump-kernel ranking restricted to the k + delta shortest candidates.
DiffGraph diff_knn_memeff(const std::vector<Vec3>& x, int k, int delta, double d0, double r_c, double beta);

/// Differentiable counterparts, evaluated on a (possibly taped) N x 3 tensor
/// of positions with the graph's discrete structure held fixed.
ad::Tensor edge_vectors(const ad::Tensor& positions, const EdgeSet& edges);
ad::Tensor edge_lengths(const ad::Tensor& vectors);
/// Elementwise bump on a tensor.
ad::Tensor bump(const ad::Tensor& x);
/// log of the envelope weight of every retained edge.
ad::Tensor diff_knn_log_weights(const ad::Tensor& positions, const DiffGraph& graph);
/// log envelope(d / r_c) of every edge.
ad::Tensor radial_log_weights(const ad::Tensor& positions, const EdgeSet& edges, double r_c);

struct NeighborStats {
  double cutoff = 0.0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int max = 0;
};

std::vector<NeighborStats> neighbor_stats(const std::vector<Structure>& structures,
                                          const std::vector<double>& cutoffs);
std::string neighbor_stats_csv(const std::vector<NeighborStats>& stats);

}  // namespace bsct
