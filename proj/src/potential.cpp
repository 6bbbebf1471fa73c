#include "bsct/potential.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace bsct {

using ad::Array;
using ad::Shape;
using ad::Tensor;

std::string to_string(ForceHead h) { return h == ForceHead::direct ? "direct" : "gradient"; }

std::string to_string(GraphKind g) {
  switch (g) {
    case GraphKind::hard_knn: return "hard_knn";
    case GraphKind::diff_knn: return "diff_knn";
    case GraphKind::diff_knn_memeff: return "diff_knn_memeff";
  }
  return "?";
}

ForceHead parse_force_head(const std::string& s) {
  if (s == "direct") return ForceHead::direct;
  if (s == "gradient") return ForceHead::gradient;
  throw Error("unknown force head '" + s + "' (expected direct|gradient)");
}

GraphKind parse_graph_kind(const std::string& s) {
  if (s == "hard_knn") return GraphKind::hard_knn;
  if (s == "diff_knn") return GraphKind::diff_knn;
  if (s == "diff_knn_memeff") return GraphKind::diff_knn_memeff;
  throw Error("unknown graph kind '" + s + "' (expected hard_knn|diff_knn|diff_knn_memeff)");
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

void PotentialConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("invalid model config: " + what); };
  if (embed_dim < 1 || n_heads < 1 || embed_dim % n_heads != 0) fail("embed_dim must be a positive multiple of n_heads");
  if (hidden_factor < 1) fail("hidden_factor must be >= 1");
  if (n_layers < 0) fail("n_layers must be >= 0");
  if (k < 1) fail("k must be >= 1");
  if (!(r_c > 0) || !(d0 > 0) || !(beta > 0)) fail("r_c, d0 and beta must be positive");
  if (delta < 0) fail("delta must be >= 0");
  if (n_radial < 2) fail("n_radial must be >= 2");
  if (!(gamma >= 1.0)) fail("gamma must be >= 1");
  if (l_max < 0) fail("l_max must be >= 0");
  if (!(tau > 0)) fail("tau must be positive");
  if (!(repulsion >= 0)) fail("repulsion must be >= 0");
  if (!(repulsion_cutoff > 0)) fail("repulsion_cutoff must be positive");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used == v.size()) return r;
  } catch (...) {
  }
  throw Error("config key " + key + ": expected an integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used == v.size()) return r;
  } catch (...) {
  }
  throw Error("config key " + key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("config key " + key + ": expected true/false, got '" + v + "'");
}

}  // namespace

FlatConfig PotentialConfig::to_flat() const {
  return {
      {"model.embed_dim", std::to_string(embed_dim)},
      {"model.hidden_factor", std::to_string(hidden_factor)},
      {"model.n_layers", std::to_string(n_layers)},
      {"model.n_heads", std::to_string(n_heads)},
      {"model.k", std::to_string(k)},
      {"model.r_c", fmt(r_c)},
      {"model.d0", fmt(d0)},
      {"model.beta", fmt(beta)},
      {"model.delta", std::to_string(delta)},
      {"model.n_radial", std::to_string(n_radial)},
      {"model.gamma", fmt(gamma)},
      {"model.l_max", std::to_string(l_max)},
      {"model.tau", fmt(tau)},
      {"model.head", to_string(head)},
      {"model.graph", to_string(graph)},
      {"model.value_scaling", value_scaling ? "true" : "false"},
      {"model.repulsion", fmt(repulsion)},
      {"model.repulsion_cutoff", fmt(repulsion_cutoff)},
  };
}

void PotentialConfig::apply(const FlatConfig& flat) {
  for (const auto& [key, v] : flat) {
    if (key.rfind("model.", 0) != 0) continue;
    const std::string k_ = key.substr(6);
    if (k_ == "embed_dim") embed_dim = to_int(key, v);
    else if (k_ == "hidden_factor") hidden_factor = to_int(key, v);
    else if (k_ == "n_layers") n_layers = to_int(key, v);
    else if (k_ == "n_heads") n_heads = to_int(key, v);
    else if (k_ == "k") k = to_int(key, v);
    else if (k_ == "r_c") r_c = to_double(key, v);
    else if (k_ == "d0") d0 = to_double(key, v);
    else if (k_ == "beta") beta = to_double(key, v);
    else if (k_ == "delta") delta = to_int(key, v);
    else if (k_ == "n_radial") n_radial = to_int(key, v);
    else if (k_ == "gamma") gamma = to_double(key, v);
    else if (k_ == "l_max") l_max = to_int(key, v);
    else if (k_ == "tau") tau = to_double(key, v);
    else if (k_ == "head") head = parse_force_head(v);
    else if (k_ == "graph") graph = parse_graph_kind(v);
    else if (k_ == "value_scaling") value_scaling = to_bool(key, v);
    else if (k_ == "repulsion") repulsion = to_double(key, v);
    else if (k_ == "repulsion_cutoff") repulsion_cutoff = to_double(key, v);
    else throw Error("unknown config key: " + key);
  }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kTableRows = kMaxAtomicNumber + 1;

std::map<std::string, Shape> parameter_shapes(const PotentialConfig& c) {
  const std::size_t d = c.embed_dim, h = static_cast<std::size_t>(c.embed_dim) * c.hidden_factor;
  std::map<std::string, Shape> s{
      {"embed.src", {kTableRows, d}},
      {"embed.dst", {kTableRows, d}},
      {"feat.radial.w", {static_cast<std::size_t>(c.n_radial), d}},
      {"feat.angular.w", {static_cast<std::size_t>(angular_feature_count(c.l_max)), d}},
      {"feat.b", {d}},
      {"final_ln.scale", {d}},
      {"final_ln.shift", {d}},
      {"energy.w1", {d, d}},
      {"energy.b1", {d}},
      {"energy.w2", {d, 1}},
      {"energy.b2", {1}},
      {"offsets", {kTableRows}},
  };
  if (c.head == ForceHead::direct) {
    s["force.w1"] = {d, d};
    s["force.b1"] = {d};
    s["force.w2"] = {d, 1};
    s["force.b2"] = {1};
  }
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    for (const char* n : {"ln1.scale", "ln1.shift", "ln2.scale", "ln2.shift", "attn.o.b", "ff.b2"}) s[p + n] = {d};
    for (const char* n : {"attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w"}) s[p + n] = {d, d};
    s[p + "ff.w1"] = {d, h};
    s[p + "ff.b1"] = {h};
    s[p + "ff.w2"] = {h, d};
  }
  return s;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Parameters init_parameters(const PotentialConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Parameters p;
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Array a = Array::zeros(shape);
    if (ends_with(name, ".scale")) {
      std::fill(a.data.begin(), a.data.end(), 1.0);
    } else if (name.rfind("embed.", 0) == 0) {
      for (auto& v : a.data) v = 0.5 * normal(rng);
    } else if (shape.size() == 2) {
      const double s = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& v : a.data) v = s * normal(rng);
    }
    p.emplace(name, std::move(a));
  }
  return p;
}

void check_parameters(const PotentialConfig& cfg, const Parameters& p) {
  const auto shapes = parameter_shapes(cfg);
  if (shapes.size() != p.size()) {
    throw Error("parameter set has " + std::to_string(p.size()) + " arrays, configuration expects " +
                std::to_string(shapes.size()));
  }
  for (const auto& [name, shape] : shapes) {
    const auto it = p.find(name);
    if (it == p.end()) throw Error("missing parameter " + name);
    if (it->second.shape != shape) {
      throw Error("parameter " + name + " has shape " + ad::shape_str(it->second.shape) + ", expected " +
                  ad::shape_str(shape));
    }
    for (double v : it->second.data) {
      if (!std::isfinite(v)) throw Error("parameter " + name + " is not finite");
    }
  }
}

std::size_t parameter_count(const Parameters& p) {
  std::size_t n = 0;
  for (const auto& [name, a] : p) n += a.size();
  return n;
}

// ---------------------------------------------------------------------------
// Features and attention
// ---------------------------------------------------------------------------

namespace {

double radial_sigma(int n_radial, double r_c, double gamma) { return gamma * r_c / (n_radial - 1); }

std::vector<std::array<int, 3>> monomial_exponents(int l_max) {
  std::vector<std::array<int, 3>> out;
  for (int n = 0; n <= l_max; ++n) {
    for (int a = n; a >= 0; --a) {
      for (int b = n - a; b >= 0; --b) out.push_back({a, b, n - a - b});
    }
  }
  return out;
}

}  // namespace

std::vector<double> radial_features(double d, int n_radial, double r_c, double gamma) {
  const double dx = r_c / (n_radial - 1);
  const double sigma = radial_sigma(n_radial, r_c, gamma);
  std::vector<double> v(n_radial);
  for (int i = 0; i < n_radial; ++i) {
    const double t = d - i * dx;
    v[i] = std::exp(-t * t / (2.0 * sigma * sigma));
  }
  return v;
}

Tensor radial_features(const Tensor& d, int n_radial, double r_c, double gamma) {
  const double dx = r_c / (n_radial - 1);
  const double sigma = radial_sigma(n_radial, r_c, gamma);
  Array mu = Array::zeros({static_cast<std::size_t>(n_radial)});
  for (int i = 0; i < n_radial; ++i) mu.data[i] = i * dx;
  const auto t = ad::reshape(d, {d.size(), 1}) - Tensor(mu);
  return ad::exp(ad::square(t) * (-1.0 / (2.0 * sigma * sigma)));
}

int angular_feature_count(int l_max) { return (l_max + 1) * (l_max + 2) * (l_max + 3) / 6; }

std::vector<double> angular_features(const Vec3& u, int l_max) {
  std::vector<double> out;
  for (const auto& [a, b, c] : monomial_exponents(l_max)) {
    out.push_back(std::pow(u[0], a) * std::pow(u[1], b) * std::pow(u[2], c));
  }
  return out;
}

Tensor angular_features(const Tensor& u, int l_max) {
  const std::size_t n = u.dim(0);
  // powers[c][p] = u_c^p as an [n, 1] column; p = 0 is left undefined (= 1).
  std::array<std::vector<Tensor>, 3> powers;
  for (int c = 0; c < 3; ++c) {
    powers[c].resize(l_max + 1);
    if (l_max >= 1) powers[c][1] = ad::slice(u, 1, c, c + 1);
    for (int p = 2; p <= l_max; ++p) powers[c][p] = powers[c][p - 1] * powers[c][1];
  }
  std::vector<Tensor> cols;
  for (const auto& e : monomial_exponents(l_max)) {
    Tensor m;
    for (int c = 0; c < 3; ++c) {
      if (e[c] == 0) continue;
      m = m.defined() ? m * powers[c][e[c]] : powers[c][e[c]];
    }
    cols.push_back(m.defined() ? m : Tensor(Array::filled({n, 1}, 1.0)));
  }
  return ad::concat(cols, 1);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double tau, const Tensor& bias) {
  if (!(tau > 0)) throw Error("attention temperature must be positive");
  const double scale = 1.0 / (tau * std::sqrt(static_cast<double>(q.shape().back())));
  auto logits = ad::matmul(q, ad::transpose(k)) * scale;
  if (bias.defined()) logits = logits + bias;
  return ad::matmul(ad::softmax(logits), v);
}

// ---------------------------------------------------------------------------
// Short-range prior
// ---------------------------------------------------------------------------

namespace {

// Universal screening function coefficients (Ziegler, Biersack, Littmark).
constexpr std::array<double, 4> kZblC{0.18175, 0.50986, 0.28022, 0.02817};
constexpr std::array<double, 4> kZblB{3.19980, 0.94229, 0.40290, 0.20162};

double zbl_length(int z_i, int z_j) { return 0.46850 / (std::pow(z_i, 0.23) + std::pow(z_j, 0.23)); }

// Pair energy and dE/dr, including the envelope.
std::pair<double, double> prior_pair(int z_i, int z_j, double r, double cutoff) {
  const double rc = cutoff * (covalent_radius(z_i) + covalent_radius(z_j));
  if (r >= rc) return {0.0, 0.0};
  const double a = zbl_length(z_i, z_j), pre = units::kCoulombEvA * z_i * z_j;
  double s = 0.0, ds = 0.0;
  for (std::size_t k = 0; k < kZblC.size(); ++k) {
    const double t = kZblC[k] * std::exp(-kZblB[k] * r / a);
    s += t;
    ds -= t * kZblB[k] / a;
  }
  const double phi = pre * s / r, dphi = pre * (ds / r - s / (r * r));
  const double f = r / rc, env = envelope(f);
  const double denv = env * (-2.0 * f / ((1.0 - f * f) * (1.0 - f * f))) / rc;
  return {phi * env, dphi * env + phi * denv};
}

}  // namespace

double zbl_pair(int z_i, int z_j, double r, double cutoff) {
  if (!(r > 0)) throw Error("zbl_pair: distance must be positive");
  return prior_pair(z_i, z_j, r, cutoff).first;
}

EnergyForces repulsion_prior(const std::vector<int>& species, const std::vector<Vec3>& x, double weight,
                             double cutoff) {
  EnergyForces out;
  out.forces.assign(x.size(), Vec3{0, 0, 0});
  if (weight == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const Vec3 v = x[j] - x[i];
      const double r = norm(v);
      if (!(r > 0)) throw Error("repulsion prior: coincident atoms");
      const auto [e, de] = prior_pair(species[i], species[j], r, cutoff);
      if (e == 0.0 && de == 0.0) continue;
      out.energy += weight * e;
      const Vec3 f = (weight * de / r) * v;  // force on i is +dE/dr * v/r
      out.forces[i] = out.forces[i] + f;
      out.forces[j] = out.forces[j] - f;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch graph
// ---------------------------------------------------------------------------

namespace {

BatchGraph::Groups make_groups(std::size_t n_atoms, const std::vector<int>& key) {
  BatchGraph::Groups g;
  g.count = n_atoms;
  std::vector<std::size_t> fill(n_atoms, 0);
  for (const int a : key) ++fill[a];
  g.width = std::max<std::size_t>(1, fill.empty() ? 1 : *std::max_element(fill.begin(), fill.end()));
  g.slots.assign(n_atoms * g.width, -1);
  g.pos.assign(key.size(), -1);
  std::fill(fill.begin(), fill.end(), 0);
  for (std::size_t e = 0; e < key.size(); ++e) {
    const std::size_t slot = key[e] * g.width + fill[key[e]]++;
    g.slots[slot] = static_cast<int>(e);
    g.pos[e] = static_cast<int>(slot);
  }
  return g;
}

}  // namespace

BatchGraph build_batch_graph(const PotentialConfig& cfg, const std::vector<const Structure*>& batch) {
  BatchGraph g;
  g.n_structures = batch.size();
  for (const auto* s : batch) g.n_atoms += s->size();
  g.positions = Array::zeros({g.n_atoms, 3});
  std::size_t offset = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Structure& s = *batch[b];
    g.atom_offset.push_back(offset);
    for (std::size_t i = 0; i < s.size(); ++i) {
      g.species.push_back(s.species[i]);
      g.atom_structure.push_back(static_cast<int>(b));
      for (int c = 0; c < 3; ++c) g.positions.data[(offset + i) * 3 + c] = s.positions[i][c];
    }
    DiffGraph part;
    switch (cfg.graph) {
      case GraphKind::hard_knn:
        part.base = hard_knn(s.positions, cfg.k, cfg.r_c);
        break;
      case GraphKind::diff_knn:
        part = diff_knn(s.positions, DiffKnnParams{cfg.k, cfg.d0, cfg.r_c, cfg.beta, RankKernel::sigmoid, -1});
        break;
      case GraphKind::diff_knn_memeff:
        part = diff_knn_memeff(s.positions, cfg.k, cfg.delta, cfg.d0, cfg.r_c, cfg.beta);
        break;
    }
    g.edge_offset.push_back(g.src.size());
    for (std::size_t e = 0; e < part.base.size(); ++e) {
      g.src.push_back(static_cast<int>(offset) + part.base.src[e]);
      g.dst.push_back(static_cast<int>(offset) + part.base.dst[e]);
      g.edge_structure.push_back(static_cast<int>(b));
    }
    g.parts.push_back(std::move(part));
    offset += s.size();
  }
  g.out_groups = make_groups(g.n_atoms, g.src);
  g.in_groups = make_groups(g.n_atoms, g.dst);
  return g;
}

Tensor edge_log_weights(const PotentialConfig& cfg, const BatchGraph& g, const Tensor& positions) {
  std::vector<Tensor> pieces;
  for (std::size_t b = 0; b < g.parts.size(); ++b) {
    const auto& part = g.parts[b];
    if (part.base.size() == 0) continue;
    const std::size_t lo = g.atom_offset[b];
    const auto local = ad::slice(positions, 0, lo, lo + part.base.n_nodes);
    pieces.push_back(cfg.graph == GraphKind::hard_knn ? radial_log_weights(local, part.base, cfg.r_c)
                                                      : diff_knn_log_weights(local, part));
  }
  if (pieces.empty()) return Tensor(Array::zeros({0}));
  return pieces.size() == 1 ? pieces[0] : ad::concat(pieces, 0);
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

const Tensor& param(const std::map<std::string, Tensor>& p, const std::string& name) {
  const auto it = p.find(name);
  if (it == p.end()) throw Error("missing parameter " + name);
  return it->second;
}

Tensor mlp(const std::map<std::string, Tensor>& p, const std::string& prefix, const Tensor& x) {
  const auto h = ad::silu(ad::linear(x, param(p, prefix + ".w1"), param(p, prefix + ".b1")));
  return ad::linear(h, param(p, prefix + ".w2"), param(p, prefix + ".b2"));
}

}  // namespace

Tensor windowed_block(const PotentialConfig& cfg, const std::map<std::string, Tensor>& p, int layer,
                      const BatchGraph::Groups& groups, const Tensor& h, const Tensor& log_w) {
  const std::string pre = "layer" + std::to_string(layer) + ".";
  const std::size_t n_edges = h.dim(0);
  const std::size_t dim = cfg.embed_dim, dk = cfg.head_dim();
  const std::size_t G = groups.count, M = groups.width;

  const auto x = ad::layer_norm(h, param(p, pre + "ln1.scale"), param(p, pre + "ln1.shift"));
  const auto q = ad::linear(x, param(p, pre + "attn.q.w"), {});
  const auto k = ad::linear(x, param(p, pre + "attn.k.w"), {});
  auto v = ad::linear(x, param(p, pre + "attn.v.w"), {});
  if (cfg.value_scaling) v = v * ad::reshape(ad::exp(log_w), {n_edges, 1});

  auto grouped = [&](const Tensor& t) { return ad::reshape(ad::gather(t, groups.slots), {G, M, dim}); };
  const auto Q = grouped(q), K = grouped(k), V = grouped(v);
  Array pad = Array::zeros({G * M});
  for (std::size_t s = 0; s < groups.slots.size(); ++s) {
    if (groups.slots[s] < 0) pad.data[s] = -1e30;
  }
  const auto bias = ad::reshape(ad::gather(log_w, groups.slots) + Tensor(pad), {G, 1, M});

  std::vector<Tensor> heads;
  for (int hh = 0; hh < cfg.n_heads; ++hh) {
    const std::size_t a = hh * dk, b = a + dk;
    heads.push_back(attention(ad::slice(Q, 2, a, b), ad::slice(K, 2, a, b), ad::slice(V, 2, a, b), cfg.tau, bias));
  }
  const auto merged = heads.size() == 1 ? heads[0] : ad::concat(heads, 2);
  const auto back = ad::gather(ad::reshape(merged, {G * M, dim}), groups.pos);
  const auto h1 = h + ad::linear(back, param(p, pre + "attn.o.w"), param(p, pre + "attn.o.b"));

  const auto y = ad::layer_norm(h1, param(p, pre + "ln2.scale"), param(p, pre + "ln2.shift"));
  const auto ff = ad::linear(ad::silu(ad::linear(y, param(p, pre + "ff.w1"), param(p, pre + "ff.b1"))),
                             param(p, pre + "ff.w2"), param(p, pre + "ff.b2"));
  return h1 + ff;
}

namespace {

// Adds the parameter-free repulsion prior as constants.
void add_prior(const PotentialConfig& cfg, const BatchGraph& g, const Tensor& positions, ForwardResult& r) {
  if (cfg.repulsion == 0.0) return;
  Array e = Array::zeros({g.n_structures});
  Array f = Array::zeros({g.n_atoms, 3});
  for (std::size_t b = 0; b < g.n_structures; ++b) {
    const std::size_t lo = g.atom_offset[b];
    const std::size_t hi = b + 1 < g.n_structures ? g.atom_offset[b + 1] : g.n_atoms;
    std::vector<int> z(g.species.begin() + lo, g.species.begin() + hi);
    std::vector<Vec3> x(hi - lo);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (int c = 0; c < 3; ++c) x[i][c] = positions[(lo + i) * 3 + c];
    }
    const auto ef = repulsion_prior(z, x, cfg.repulsion, cfg.repulsion_cutoff);
    e.data[b] = ef.energy;
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (int c = 0; c < 3; ++c) f.data[(lo + i) * 3 + c] = ef.forces[i][c];
    }
  }
  r.energies = r.energies + Tensor(std::move(e));
  if (r.forces.defined()) r.forces = r.forces + Tensor(std::move(f));
}

ForwardResult forward_model(const PotentialConfig& cfg, const std::map<std::string, Tensor>& p, const BatchGraph& g,
                            const Tensor& positions, bool create_graph, bool with_forces) {
  ForwardResult r;
  const std::size_t n_edges = g.src.size();
  const auto atom_e = ad::gather(param(p, "offsets"), g.species);
  r.energies = ad::scatter_add(atom_e, g.atom_structure, g.n_structures);
  if (n_edges == 0) {
    if (with_forces) r.forces = Tensor(Array::zeros({g.n_atoms, 3}));
    return r;
  }
  const auto vec = ad::gather(positions, g.dst) - ad::gather(positions, g.src);
  const auto d = edge_lengths(vec);
  const auto u = vec / ad::reshape(d, {n_edges, 1});

  std::vector<int> zs(n_edges), zd(n_edges);
  for (std::size_t e = 0; e < n_edges; ++e) {
    zs[e] = g.species[g.src[e]];
    zd[e] = g.species[g.dst[e]];
  }
  auto h = ad::linear(radial_features(d, cfg.n_radial, cfg.r_c, cfg.gamma), param(p, "feat.radial.w"), {}) +
           ad::linear(angular_features(u, cfg.l_max), param(p, "feat.angular.w"), param(p, "feat.b")) +
           ad::gather(param(p, "embed.src"), zs) + ad::gather(param(p, "embed.dst"), zd);

  const auto log_w = edge_log_weights(cfg, g, positions);
  for (int l = 0; l < cfg.n_layers; ++l) {
    h = windowed_block(cfg, p, l, l % 2 == 0 ? g.out_groups : g.in_groups, h, log_w);
  }
  h = ad::layer_norm(h, param(p, "final_ln.scale"), param(p, "final_ln.shift"));
  const auto w = ad::exp(log_w);
  const auto edge_e = w * ad::reshape(mlp(p, "energy", h), {n_edges});
  r.energies = r.energies + ad::scatter_add(edge_e, g.edge_structure, g.n_structures);

  if (!with_forces) return r;
  if (cfg.head == ForceHead::gradient) {
    if (!positions.on_tape()) throw Error("gradient head needs positions on a tape");
    r.forces = -ad::grad(ad::sum(r.energies), {positions}, create_graph)[0];
  } else {
    const auto s = w * ad::reshape(mlp(p, "force", h), {n_edges});
    r.forces = ad::scatter_add(u * ad::reshape(s, {n_edges, 1}), g.src, g.n_atoms);
  }
  return r;
}

}  // namespace

ForwardResult forward(const PotentialConfig& cfg, const std::map<std::string, Tensor>& p, const BatchGraph& g,
                      const Tensor& positions, bool create_graph, bool with_forces) {
  auto r = forward_model(cfg, p, g, positions, create_graph, with_forces);
  add_prior(cfg, g, positions, r);
  return r;
}

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

Potential::Potential(PotentialConfig cfg, Parameters params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  check_parameters(cfg_, params_);
  for (const auto& [name, a] : params_) constants_.emplace(name, Tensor(a));
}

double Potential::energy(const Structure& s) const {
  const auto g = build_batch_graph(cfg_, {&s});
  return forward(cfg_, constants_, g, Tensor(g.positions), false, false).energies[0];
}

std::vector<EnergyForces> Potential::evaluate_batch(const std::vector<const Structure*>& batch) const {
  const auto g = build_batch_graph(cfg_, batch);
  ad::Tape tape;
  const Tensor pos = cfg_.head == ForceHead::gradient ? tape.variable(g.positions) : Tensor(g.positions);
  const auto r = forward(cfg_, constants_, g, pos, false);
  std::vector<EnergyForces> out(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    out[b].energy = r.energies[b];
    const std::size_t lo = g.atom_offset[b];
    out[b].forces.resize(batch[b]->size());
    for (std::size_t i = 0; i < batch[b]->size(); ++i) {
      for (int c = 0; c < 3; ++c) out[b].forces[i][c] = r.forces[(lo + i) * 3 + c];
    }
  }
  return out;
}

EnergyForces Potential::evaluate(const Structure& s) const { return evaluate_batch({&s})[0]; }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMagic = "BSCT-CHECKPOINT 1";

void append_le(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string manifest, blob;
  for (const auto& [k, v] : ckpt.config.to_flat()) manifest += "config " + k + " " + v + "\n";
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error("checkpoint metadata must not contain spaces in keys or newlines");
    }
    manifest += "meta " + k + " " + v + "\n";
  }
  auto add = [&](const std::string& group, const Parameters& p) {
    for (const auto& [name, a] : p) {
      manifest += "array " + group + "/" + name + " " + std::to_string(blob.size() / 8) + " " +
                  std::to_string(a.size());
      for (const auto d : a.shape) manifest += " " + std::to_string(d);
      manifest += "\n";
      for (const double v : a.data) append_le(blob, v);
    }
  };
  add("params", ckpt.params);
  add("ema", ckpt.ema);
  std::string out = std::string(kMagic) + "\n" + std::to_string(manifest.size()) + "\n" + manifest + blob;
  write_text_file(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string raw = read_text_file(path);
  auto bad = [&](const std::string& what) { return Error("checkpoint " + path.string() + ": " + what); };
  const std::size_t l1 = raw.find('\n');
  if (l1 == std::string::npos || raw.substr(0, l1) != kMagic) throw bad("not a checkpoint file");
  const std::size_t l2 = raw.find('\n', l1 + 1);
  if (l2 == std::string::npos) throw bad("truncated header");
  std::size_t manifest_size = 0;
  try {
    manifest_size = std::stoull(raw.substr(l1 + 1, l2 - l1 - 1));
  } catch (...) {
    throw bad("bad manifest size");
  }
  if (l2 + 1 + manifest_size > raw.size()) throw bad("truncated manifest");
  const std::string manifest = raw.substr(l2 + 1, manifest_size);
  const char* blob = raw.data() + l2 + 1 + manifest_size;
  const std::size_t blob_values = (raw.size() - (l2 + 1 + manifest_size)) / 8;

  Checkpoint c;
  FlatConfig flat;
  std::istringstream in(manifest);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind, key;
    ls >> kind >> key;
    if (kind == "config" || kind == "meta") {
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value[0] == ' ') value.erase(0, 1);
      (kind == "config" ? flat : c.metadata)[key] = value;
    } else if (kind == "array") {
      std::size_t offset = 0, count = 0, dim = 0;
      ls >> offset >> count;
      Shape shape;
      while (ls >> dim) shape.push_back(dim);
      if (ad::shape_size(shape) != count || offset + count > blob_values) throw bad("array " + key + " out of bounds");
      Array a = Array::zeros(shape);
      for (std::size_t i = 0; i < count; ++i) a.data[i] = read_le(blob + 8 * (offset + i));
      const auto slash = key.find('/');
      const std::string group = key.substr(0, slash), name = key.substr(slash + 1);
      if (group == "params") c.params.emplace(name, std::move(a));
      else if (group == "ema") c.ema.emplace(name, std::move(a));
      else throw bad("unknown array group " + group);
    } else if (!kind.empty()) {
      throw bad("unknown manifest entry '" + kind + "'");
    }
  }
  c.config.apply(flat);
  c.config.validate();
  check_parameters(c.config, c.params);
  if (!c.ema.empty()) check_parameters(c.config, c.ema);
  return c;
}

}  // namespace bsct
