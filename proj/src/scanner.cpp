#include "bsct/scanner.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <deque>
#include <random>

#include "bsct/parallel.hpp"
#include "json.hpp"

namespace bsct {

namespace {

std::vector<std::vector<std::pair<int, int>>> adjacency(std::size_t n, const std::vector<Bond>& bonds) {
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, edge id)
  for (std::size_t e = 0; e < bonds.size(); ++e) {
    const auto [i, j] = bonds[e];
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= n || static_cast<std::size_t>(j) >= n) {
      throw Error("bond index out of range");
    }
    adj[i].push_back({j, static_cast<int>(e)});
    adj[j].push_back({i, static_cast<int>(e)});
  }
  return adj;
}

Bond canonical(Bond b) { return b.first < b.second ? b : Bond{b.second, b.first}; }

}  // namespace

std::vector<Bond> find_bridge_bonds(std::size_t n, const std::vector<Bond>& bonds) {
  const auto adj = adjacency(n, bonds);
  std::vector<int> disc(n, -1), low(n, 0);
  std::vector<Bond> out;
  int timer = 0;
  // Iterative DFS; each frame remembers the edge used to enter the node.
  struct Frame {
    int node, parent_edge;
    std::size_t next;
  };
  for (std::size_t root = 0; root < n; ++root) {
    if (disc[root] >= 0) continue;
    std::vector<Frame> stack{{static_cast<int>(root), -1, 0}};
    disc[root] = low[root] = timer++;
    while (!stack.empty()) {
      auto& f = stack.back();
      if (f.next < adj[f.node].size()) {
        const auto [to, eid] = adj[f.node][f.next++];
        if (eid == f.parent_edge) continue;
        if (disc[to] >= 0) {
          low[f.node] = std::min(low[f.node], disc[to]);
        } else {
          disc[to] = low[to] = timer++;
          stack.push_back({to, eid, 0});
        }
        continue;
      }
      const Frame done = f;
      stack.pop_back();
      if (!stack.empty()) {
        const int parent = stack.back().node;
        low[parent] = std::min(low[parent], low[done.node]);
        if (low[done.node] > disc[parent]) out.push_back(canonical(bonds[done.parent_edge]));
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> fragment_labels(std::size_t n, const std::vector<Bond>& bonds, Bond bridge) {
  const Bond key = canonical(bridge);
  int bridge_id = -1;
  for (std::size_t e = 0; e < bonds.size(); ++e) {
    if (canonical(bonds[e]) == key) bridge_id = static_cast<int>(e);
  }
  if (bridge_id < 0) {
    throw NotABridge("(" + std::to_string(bridge.first) + ", " + std::to_string(bridge.second) +
                     ") is not a bond");
  }
  const auto adj = adjacency(n, bonds);
  std::vector<int> labels(n, 0);
  auto flood = [&](int start, int value) {
    std::deque<int> queue{start};
    labels[start] = value;
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (const auto& [v, eid] : adj[u]) {
        if (eid == bridge_id || labels[v] != 0) continue;
        if (labels[v] == -value) continue;
        labels[v] = value;
        queue.push_back(v);
      }
    }
  };
  flood(bridge.first, -1);
  if (labels[bridge.second] != 0) {
    throw NotABridge("removing (" + std::to_string(bridge.first) + ", " + std::to_string(bridge.second) +
                     ") does not disconnect the molecule");
  }
  flood(bridge.second, +1);
  return labels;
}

Structure BondScan::frame(std::size_t m) const {
  Structure s = with_positions(base, frames.at(m));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", alpha_grid.at(m));
  s.info["alpha"] = buf;
  return s;
}

double BondScan::bond_length(std::size_t m) const {
  return distance(frames.at(m)[bond.first], frames.at(m)[bond.second]);
}

BondScan make_scan(const Structure& s, Bond bridge, std::vector<double> alpha_grid) {
  s.validate();
  if (alpha_grid.empty()) throw Error("empty alpha grid");
  if (alpha_grid.size() >= 2) {
    const double step = (alpha_grid.back() - alpha_grid.front()) / static_cast<double>(alpha_grid.size() - 1);
    if (!(step > 0)) throw Error("alpha grid must be increasing");
    for (std::size_t m = 1; m < alpha_grid.size(); ++m) {
      const double d = alpha_grid[m] - alpha_grid[m - 1];
      if (!(d > 0) || std::abs(d - step) > 1e-9 * std::max(1.0, std::abs(step))) {
        throw Error("alpha grid must be uniform and increasing");
      }
    }
  }
  BondScan scan;
  scan.base = s;
  scan.base.bonds = perceive_bonds(s);
  scan.bond = bridge;
  scan.labels = fragment_labels(s.size(), *scan.base.bonds, bridge);
  const Vec3 axis = s.positions[bridge.second] - s.positions[bridge.first];
  const double len = norm(axis);
  if (!(len > 0)) throw Error("bridge atoms coincide");
  scan.direction = (1.0 / len) * axis;
  scan.alpha_grid = std::move(alpha_grid);
  const auto minus = std::count(scan.labels.begin(), scan.labels.end(), -1);
  const auto plus = std::count(scan.labels.begin(), scan.labels.end(), +1);
  scan.single_atom_fragment = minus == 1 || plus == 1;
  scan.frames.reserve(scan.alpha_grid.size());
  for (const double alpha : scan.alpha_grid) {
    std::vector<Vec3> x = s.positions;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (scan.labels[i] == 0) continue;
      const double shift = alpha * scan.labels[i];
      for (int c = 0; c < 3; ++c) x[i][c] += shift * scan.direction[c];
    }
    scan.frames.push_back(std::move(x));
  }
  return scan;
}

std::vector<double> scan_alpha_range(const Structure& s, Bond bridge, int n_frames) {
  if (n_frames < 2) throw Error("n_frames must be at least 2");
  const double r = covalent_radius(s.species.at(bridge.first)) + covalent_radius(s.species.at(bridge.second));
  const double l0 = distance(s.positions.at(bridge.first), s.positions.at(bridge.second));
  const double lo = (0.5 * r - l0) / 2.0;
  const double hi = (2.0 * r - l0) / 2.0;
  std::vector<double> grid(n_frames);
  const double step = (hi - lo) / (n_frames - 1);
  for (int m = 0; m < n_frames; ++m) grid[m] = lo + m * step;
  grid.back() = hi;
  return grid;
}

OverlapVerdict filter_overlaps(const BondScan& scan, double factor) {
  OverlapVerdict v;
  const auto& z = scan.base.species;
  const Bond key = canonical(scan.bond);
  v.keep.assign(scan.frames.size(), 1);
  for (std::size_t m = 0; m < scan.frames.size(); ++m) {
    const auto& x = scan.frames[m];
    for (std::size_t i = 0; i < x.size() && v.keep[m]; ++i) {
      for (std::size_t j = i + 1; j < x.size(); ++j) {
        if (Bond{static_cast<int>(i), static_cast<int>(j)} == key) continue;
        if (distance(x[i], x[j]) < factor * (covalent_radius(z[i]) + covalent_radius(z[j]))) {
          v.keep[m] = 0;
          break;
        }
      }
    }
    if (!v.keep[m]) v.accepted = false;
  }
  return v;
}

bool has_energy_jump(const std::vector<double>& energies, double threshold) {
  for (std::size_t m = 1; m < energies.size(); ++m) {
    if (std::abs(energies[m] - energies[m - 1]) > threshold) return true;
  }
  return false;
}

ElementPair element_pair(int za, int zb) { return {std::min(za, zb), std::max(za, zb)}; }

std::set<ElementPair> default_bond_types() { return parse_bond_types("CC,CN,CO,CP,CS,NN,NO,NP,OP"); }

std::set<ElementPair> parse_bond_types(const std::string& spec) {
  std::set<ElementPair> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t end = std::min(spec.find(',', pos), spec.size());
    std::string tok = spec.substr(pos, end - pos);
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); }), tok.end());
    pos = end + 1;
    if (tok.empty()) continue;
    tok.erase(std::remove(tok.begin(), tok.end(), '-'), tok.end());
    // Split into two element symbols: an uppercase letter starts each one.
    std::vector<std::string> syms;
    for (char c : tok) {
      if (std::isupper(static_cast<unsigned char>(c))) {
        syms.emplace_back(1, c);
      } else if (!syms.empty()) {
        syms.back() += c;
      } else {
        throw Error("bad bond type '" + tok + "'");
      }
    }
    if (syms.size() != 2) throw Error("bad bond type '" + tok + "'");
    out.insert(element_pair(atomic_number(syms[0]), atomic_number(syms[1])));
  }
  return out;
}

std::string bond_type_name(ElementPair p) {
  return std::string(element(p.first).symbol) + std::string(element(p.second).symbol);
}

namespace {

struct StructureResult {
  std::vector<BondScan> scans;
  std::vector<SampleDecision> decisions;
};

StructureResult sample_one(const Structure& s, std::size_t index, const SampleOptions& opt) {
  StructureResult r;
  const auto bonds = perceive_bonds(s, opt.bond_scale);
  Structure topo = s;
  topo.bonds = bonds;
  std::vector<Bond> candidates;
  for (const auto& b : find_bridge_bonds(s.size(), bonds)) {
    if (opt.allowed.count(element_pair(s.species[b.first], s.species[b.second]))) candidates.push_back(b);
  }
  if (candidates.empty()) {
    r.decisions.push_back({s.tag, {-1, -1}, false, "no eligible bridge bond"});
    return r;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  for (std::size_t i = candidates.size(); i > 1; --i) {
    std::swap(candidates[i - 1], candidates[rng() % i]);
  }
  int taken = 0;
  for (const auto& b : candidates) {
    if (taken >= opt.scans_per_structure) break;
    SampleDecision d{s.tag, b, false, ""};
    BondScan scan = make_scan(topo, b, scan_alpha_range(topo, b, opt.n_frames));
    if (scan.single_atom_fragment && !opt.allow_single_atom_fragments) {
      d.reason = "single-atom fragment";
    } else if (!filter_overlaps(scan, opt.overlap_factor).accepted) {
      d.reason = "overlap";
    } else if (opt.validator) {
      if (auto why = opt.validator(scan)) d.reason = *why;
    }
    if (d.reason.empty()) {
      d.accepted = true;
      r.scans.push_back(std::move(scan));
      ++taken;
    }
    r.decisions.push_back(std::move(d));
  }
  return r;
}

}  // namespace

std::vector<BondScan> sample_scan_dataset(const std::vector<Structure>& structures, const SampleOptions& options,
                                          std::vector<SampleDecision>* log) {
  std::vector<StructureResult> results(structures.size());
  parallel_for(structures.size(), options.jobs,
               [&](std::size_t i) { results[i] = sample_one(structures[i], i, options); });
  std::vector<BondScan> out;
  for (auto& r : results) {
    for (auto& s : r.scans) out.push_back(std::move(s));
    if (log) log->insert(log->end(), r.decisions.begin(), r.decisions.end());
  }
  return out;
}

void write_scan_dir(const std::filesystem::path& dir, const BondScan& scan) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["tag"] = scan.base.tag;
  j["bond"] = {scan.bond.first, scan.bond.second};
  j["bond_type"] = bond_type_name(element_pair(scan.base.species[scan.bond.first], scan.base.species[scan.bond.second]));
  j["labels"] = scan.labels;
  j["direction"] = scan.direction;
  j["alpha_grid"] = scan.alpha_grid;
  j["single_atom_fragment"] = scan.single_atom_fragment;
  j["species"] = scan.base.species;
  j["base_positions"] = scan.base.positions;
  nlohmann::json bonds = nlohmann::json::array();
  for (const auto& b : *scan.base.bonds) bonds.push_back({b.first, b.second});
  j["topology"] = bonds;
  j["n_frames"] = scan.frames.size();
  write_text_file(dir / "scan.json", j.dump(2) + "\n");
  std::string frames;
  for (std::size_t m = 0; m < scan.frames.size(); ++m) frames += to_xyz(scan.frame(m));
  write_text_file(dir / "frames.xyz", frames);
}

BondScan read_scan_dir(const std::filesystem::path& dir) {
  const auto name = dir.filename().string();
  if (!std::filesystem::exists(dir / "scan.json")) throw Error("scan " + name + ": missing scan.json");
  if (!std::filesystem::exists(dir / "frames.xyz")) throw Error("scan " + name + ": missing frames.xyz");
  BondScan scan;
  try {
    const auto j = nlohmann::json::parse(read_text_file(dir / "scan.json"));
    scan.base.tag = j.at("tag").get<std::string>();
    scan.bond = {j.at("bond")[0].get<int>(), j.at("bond")[1].get<int>()};
    scan.labels = j.at("labels").get<std::vector<int>>();
    scan.direction = j.at("direction").get<Vec3>();
    scan.alpha_grid = j.at("alpha_grid").get<std::vector<double>>();
    scan.single_atom_fragment = j.at("single_atom_fragment").get<bool>();
    scan.base.species = j.at("species").get<std::vector<int>>();
    scan.base.positions = j.at("base_positions").get<std::vector<Vec3>>();
    std::vector<Bond> bonds;
    for (const auto& b : j.at("topology")) bonds.push_back({b[0].get<int>(), b[1].get<int>()});
    scan.base.bonds = bonds;
  } catch (const nlohmann::json::exception& e) {
    throw Error("scan " + name + ": bad scan.json: " + e.what());
  }
  std::vector<Structure> frames;
  try {
    frames = parse_xyz_frames(read_text_file(dir / "frames.xyz"));
  } catch (const ParseError& e) {
    throw Error("scan " + name + ": frames.xyz " + e.what());
  }
  if (frames.size() != scan.alpha_grid.size()) {
    throw Error("scan " + name + ": " + std::to_string(frames.size()) + " frames for " +
                std::to_string(scan.alpha_grid.size()) + " alpha values");
  }
  for (auto& f : frames) {
    if (f.species != scan.base.species) throw Error("scan " + name + ": frame species mismatch");
    scan.frames.push_back(std::move(f.positions));
  }
  scan.base.validate();
  return scan;
}

}  // namespace bsct
