#include "bsct/graphs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <tuple>

namespace bsct {

namespace {

// Past this exponent exp(-x) underflows to a subnormal or zero.
constexpr double kMaxEnvelopeExponent = 700.0;

struct Candidate {
  int j;
  double d;
};

bool closer(const Candidate& a, const Candidate& b) { return std::tie(a.d, a.j) < std::tie(b.d, b.j); }

// Per-node candidate lists (d < r_c), each sorted by (distance, index).
std::vector<std::vector<Candidate>> candidates_within(const std::vector<Vec3>& x, double r_c) {
  const std::size_t n = x.size();
  std::vector<std::vector<Candidate>> out(n);
  if (n == 0) return out;
  auto push = [&](std::size_t i, std::size_t j) {
    const double d = distance(x[i], x[j]);
    if (d < r_c) out[i].push_back({static_cast<int>(j), d});
  };
  if (!std::isfinite(r_c) || n < 32) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) push(i, j);
      }
    }
  } else {
    // Cell list with cell edge r_c: neighbors lie in the 27 surrounding cells.
    Vec3 lo = x[0];
    for (const auto& p : x) {
      for (int c = 0; c < 3; ++c) lo[c] = std::min(lo[c], p[c]);
    }
    auto cell_of = [&](const Vec3& p) {
      return std::array<long, 3>{static_cast<long>(std::floor((p[0] - lo[0]) / r_c)),
                                 static_cast<long>(std::floor((p[1] - lo[1]) / r_c)),
                                 static_cast<long>(std::floor((p[2] - lo[2]) / r_c))};
    };
    std::map<std::array<long, 3>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < n; ++i) cells[cell_of(x[i])].push_back(i);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = cell_of(x[i]);
      for (long dx = -1; dx <= 1; ++dx) {
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dz = -1; dz <= 1; ++dz) {
            const auto it = cells.find({c[0] + dx, c[1] + dy, c[2] + dz});
            if (it == cells.end()) continue;
            for (const std::size_t j : it->second) {
              if (j != i) push(i, j);
            }
          }
        }
      }
    }
  }
  for (auto& row : out) std::sort(row.begin(), row.end(), closer);
  return out;
}

double rank_kernel(double t, RankKernel kernel) { return kernel == RankKernel::sigmoid ? logistic(t) : bump(t); }

void check_params(const DiffKnnParams& p) {
  if (p.k < 1 || !(p.d0 > 0) || !(p.r_c > 0) || !(p.beta > 0)) throw Error("diff_knn: invalid parameters");
}

}  // namespace

void EdgeSet::add(int i, int j, const std::vector<Vec3>& x) {
  src.push_back(i);
  dst.push_back(j);
  vec.push_back(x[j] - x[i]);
  dist.push_back(norm(vec.back()));
}

void EdgeSet::finalize() {
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(src[a], dist[a], dst[a]) < std::tie(src[b], dist[b], dst[b]);
  });
  auto permute = [&](auto& v) {
    auto copy = v;
    for (std::size_t e = 0; e < order.size(); ++e) v[e] = copy[order[e]];
  };
  permute(src);
  permute(dst);
  permute(vec);
  permute(dist);
  std::vector<std::size_t> degree(n_nodes, 0);
  for (const int s : src) ++degree[s];
  row_width = degree.empty() ? 0 : *std::max_element(degree.begin(), degree.end());
  slots.assign(n_nodes * row_width, -1);
  std::fill(degree.begin(), degree.end(), 0);
  for (std::size_t e = 0; e < size(); ++e) slots[src[e] * row_width + degree[src[e]]++] = static_cast<int>(e);
}

EdgeSet radius_graph(const std::vector<Vec3>& x, double r_c) {
  if (!(r_c > 0)) throw Error("radius_graph: r_c must be positive");
  EdgeSet g;
  g.n_nodes = x.size();
  const auto cand = candidates_within(x, r_c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (const auto& c : cand[i]) g.add(static_cast<int>(i), c.j, x);
  }
  g.finalize();
  return g;
}

EdgeSet hard_knn(const std::vector<Vec3>& x, int k, double r_c) {
  if (k < 1) throw Error("hard_knn: k must be at least 1");
  EdgeSet g;
  g.n_nodes = x.size();
  const auto cand = candidates_within(x, r_c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t take = std::min<std::size_t>(k, cand[i].size());
    for (std::size_t m = 0; m < take; ++m) g.add(static_cast<int>(i), cand[i][m].j, x);
  }
  g.finalize();
  return g;
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double soft_rank(std::span<const double> neighborhood, std::size_t self, double d0) {
  double r = 0.0;
  for (std::size_t j = 0; j < neighborhood.size(); ++j) {
    if (j != self) r += logistic((neighborhood[self] - neighborhood[j]) / d0);
  }
  return r;
}

double bump(double x) {
  if (x <= -1.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return logistic(2.0 / (1.0 - x) - 2.0 / (1.0 + x));
}

double envelope_exponent(double f) {
  if (!(f < 1.0)) return std::numeric_limits<double>::infinity();
  const double f2 = f * f;
  return f2 / (1.0 - f2);
}

double envelope(double f) {
  const double e = envelope_exponent(f);
  return e > kMaxEnvelopeExponent ? 0.0 : std::exp(-e);
}

double combine_rank_radius(double f_rank, double f_dist, double beta) {
  const double m = std::max(f_rank, f_dist);
  return m + std::log(std::exp(beta * (f_rank - m)) + std::exp(beta * (f_dist - m))) / beta;
}

namespace {

DiffGraph build_diff_graph(const std::vector<Vec3>& x, const DiffKnnParams& p) {
  check_params(p);
  const std::size_t n = x.size();
  DiffGraph g;
  g.params = p;
  g.base.n_nodes = n;
  g.cand_offset.assign(1, 0);
  g.truncation_valid.assign(n, 1);
  const auto all = candidates_within(x, p.r_c);

  struct Kept {
    int i, j, cand;
    double rank, fr, fd, fe, w, lw;
  };
  std::vector<Kept> kept;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = all[i];
    std::size_t m = row.size();
    if (p.delta >= 0) m = std::min<std::size_t>(m, static_cast<std::size_t>(p.k + p.delta));
    const int offset = static_cast<int>(g.cand_dst.size());
    for (std::size_t a = 0; a < m; ++a) {
      g.cand_dst.push_back(row[a].j);
      g.cand_dist.push_back(row[a].d);
    }
    g.cand_offset.push_back(static_cast<int>(g.cand_dst.size()));
    double max_retained = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < m; ++a) {
      double rank = 0.0;
      for (std::size_t b = 0; b < m; ++b) {
        if (b != a) rank += rank_kernel((row[a].d - row[b].d) / p.d0, p.kernel);
      }
      const double fr = rank / p.k;
      const double fd = row[a].d / p.r_c;
      const double fe = combine_rank_radius(fr, fd, p.beta);
      const double ex = envelope_exponent(fe);
      if (!(ex <= kMaxEnvelopeExponent)) continue;
      kept.push_back({static_cast<int>(i), row[a].j, offset + static_cast<int>(a), rank, fr, fd, fe, std::exp(-ex), -ex});
      max_retained = std::max(max_retained, row[a].d);
    }
    if (m < row.size()) {
      // The first excluded candidate must not reach any retained edge through
      // the kernel, and its own rank (bounded below using the kept set alone)
      // must already rule it out.
      const double d_ex = row[m].d;
      double lower = 0.0;
      for (std::size_t b = 0; b < m; ++b) lower += rank_kernel((d_ex - row[b].d) / p.d0, p.kernel);
      const bool ok = d_ex >= max_retained + p.d0 && lower >= p.k;
      if (!ok) {
        g.truncation_valid[i] = 0;
        ++g.truncation_violations;
      }
    }
  }
  // kept is already in canonical order (source, distance, index).
  for (const auto& e : kept) {
    g.base.add(e.i, e.j, x);
    g.edge_cand.push_back(e.cand);
    g.soft_ranks.push_back(e.rank);
    g.f_rank.push_back(e.fr);
    g.f_dist.push_back(e.fd);
    g.f_env.push_back(e.fe);
    g.weights.push_back(e.w);
    g.log_weights.push_back(e.lw);
  }
  g.base.finalize();
  return g;
}

}  // namespace

DiffGraph diff_knn(const std::vector<Vec3>& x, const DiffKnnParams& params) { return build_diff_graph(x, params); }

DiffGraph diff_knn(const std::vector<Vec3>& x, int k, double d0, double r_c, double beta) {
  return build_diff_graph(x, DiffKnnParams{k, d0, r_c, beta, RankKernel::sigmoid, -1});
}

DiffGraph diff_knn_memeff(const std::vector<Vec3>& x, int k, int delta, double d0, double r_c, double beta) {
  if (delta < 0) throw Error("diff_knn_memeff: delta must be nonnegative");
  return build_diff_graph(x, DiffKnnParams{k, d0, r_c, beta, RankKernel::bump, delta});
}

// ---------------------------------------------------------------------------
// Differentiable versions
// ---------------------------------------------------------------------------

ad::Tensor edge_vectors(const ad::Tensor& positions, const EdgeSet& edges) {
  return ad::gather(positions, edges.dst) - ad::gather(positions, edges.src);
}

ad::Tensor edge_lengths(const ad::Tensor& vectors) { return ad::sqrt(ad::sum(ad::square(vectors), 1)); }

ad::Tensor bump(const ad::Tensor& x) {
  ad::Array inside = ad::Array::zeros(x.shape());
  ad::Array outer = ad::Array::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    inside.data[i] = std::abs(x[i]) < 1.0 ? 1.0 : 0.0;
    outer.data[i] = x[i] >= 1.0 ? 1.0 : 0.0;
  }
  const auto xs = ad::where(inside, x, ad::Tensor::scalar(0.0));
  const auto mid = ad::sigmoid(2.0 / (1.0 - xs) - 2.0 / (1.0 + xs));
  return ad::where(inside, mid, ad::Tensor(outer));
}

ad::Tensor diff_knn_log_weights(const ad::Tensor& positions, const DiffGraph& g) {
  const std::size_t n_edges = g.base.size();
  if (n_edges == 0) return ad::Tensor(ad::Array::zeros({0}));
  // Candidate distances as a differentiable function of positions.
  std::vector<int> cand_src;
  for (std::size_t i = 0; i + 1 < g.cand_offset.size(); ++i) {
    for (int c = g.cand_offset[i]; c < g.cand_offset[i + 1]; ++c) cand_src.push_back(static_cast<int>(i));
  }
  const auto cvec = ad::gather(positions, g.cand_dst) - ad::gather(positions, cand_src);
  const auto cdist = edge_lengths(cvec);

  std::size_t width = 0;
  for (std::size_t i = 0; i + 1 < g.cand_offset.size(); ++i) {
    width = std::max<std::size_t>(width, g.cand_offset[i + 1] - g.cand_offset[i]);
  }
  std::vector<int> cmp(n_edges * width, -1);
  ad::Array mask = ad::Array::zeros({n_edges, width});
  for (std::size_t e = 0; e < n_edges; ++e) {
    const int i = g.base.src[e];
    std::size_t m = 0;
    for (int c = g.cand_offset[i]; c < g.cand_offset[i + 1]; ++c, ++m) {
      if (c == g.edge_cand[e]) continue;
      cmp[e * width + m] = c;
      mask.data[e * width + m] = 1.0;
    }
  }
  const auto d_edge = ad::gather(cdist, g.edge_cand);
  const auto d_cmp = ad::reshape(ad::gather(cdist, cmp), {n_edges, width});
  const auto t = (ad::reshape(d_edge, {n_edges, 1}) - d_cmp) / g.params.d0;
  const auto k = g.params.kernel == RankKernel::sigmoid ? ad::sigmoid(t) : bump(t);
  const auto rank = ad::sum(k * ad::Tensor(mask), 1);
  const auto fr = rank / static_cast<double>(g.params.k);
  const auto fd = d_edge / g.params.r_c;
  ad::Array shift = ad::Array::zeros({n_edges});
  for (std::size_t e = 0; e < n_edges; ++e) shift.data[e] = std::max(fr[e], fd[e]);
  const ad::Tensor m(shift);
  const double b = g.params.beta;
  const auto fe = m + ad::log(ad::exp((fr - m) * b) + ad::exp((fd - m) * b)) / b;
  const auto f2 = ad::square(fe);
  return -(f2 / (1.0 - f2));
}

ad::Tensor radial_log_weights(const ad::Tensor& positions, const EdgeSet& edges, double r_c) {
  if (edges.size() == 0) return ad::Tensor(ad::Array::zeros({0}));
  const auto f2 = ad::square(edge_lengths(edge_vectors(positions, edges)) / r_c);
  return -(f2 / (1.0 - f2));
}

// ---------------------------------------------------------------------------
// Neighbor statistics
// ---------------------------------------------------------------------------

std::vector<NeighborStats> neighbor_stats(const std::vector<Structure>& structures,
                                          const std::vector<double>& cutoffs) {
  std::vector<NeighborStats> out;
  for (const double rc : cutoffs) {
    std::vector<int> counts;
    for (const auto& s : structures) {
      const auto cand = candidates_within(s.positions, rc);
      for (const auto& row : cand) counts.push_back(static_cast<int>(row.size()));
    }
    NeighborStats st;
    st.cutoff = rc;
    if (!counts.empty()) {
      double sum = 0.0;
      for (const int c : counts) sum += c;
      st.mean = sum / counts.size();
      double var = 0.0;
      for (const int c : counts) var += (c - st.mean) * (c - st.mean);
      st.std = std::sqrt(var / counts.size());
      st.max = *std::max_element(counts.begin(), counts.end());
    }
    out.push_back(st);
  }
  return out;
}

std::string neighbor_stats_csv(const std::vector<NeighborStats>& stats) {
  std::string out = "cutoff,mean,std,max\n";
  char buf[128];
  for (const auto& s : stats) {
    std::snprintf(buf, sizeof buf, "%.6g,%.12g,%.12g,%d\n", s.cutoff, s.mean, s.std, s.max);
    out += buf;
  }
  return out;
}

}  // namespace bsct
