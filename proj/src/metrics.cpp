#include "bsct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "bsct/parallel.hpp"
#include "json.hpp"

namespace bsct {

using json = nlohmann::json;

std::size_t ScanCurve::min_e_index() const {
  if (energies.empty()) throw Error("curve " + id + " has no frames");
  return static_cast<std::size_t>(std::min_element(energies.begin(), energies.end()) - energies.begin());
}

void ScanCurve::validate() const {
  if (energies.size() != alpha.size() || forces.size() != alpha.size()) {
    throw Error("curve " + id + ": alpha, energies and forces have different lengths");
  }
  for (const auto& f : forces) {
    if (f.size() != 3 * n_atoms) throw Error("curve " + id + ": force array does not match n_atoms");
  }
}

std::vector<double> delta_force_norm_sq(const ScanCurve& c) {
  c.validate();
  const auto& f0 = c.forces[c.min_e_index()];
  std::vector<double> out(c.size(), 0.0);
  for (std::size_t m = 0; m < c.size(); ++m) {
    double s = 0.0;
    for (std::size_t i = 0; i < f0.size(); ++i) {
      const double d = c.forces[m][i] - f0[i];
      s += d * d;
    }
    out[m] = s;
  }
  return out;
}

FsdResult fsd_from_norms(std::span<const double> alpha, std::span<const double> model_sq,
                         std::span<const double> ref_sq, double alpha_split, double floor) {
  const std::size_t n = alpha.size();
  if (model_sq.size() != n || ref_sq.size() != n) throw Error("fsd: inputs have different lengths");
  if (n < 2) throw InsufficientData("fsd: fewer than 3 valid points");
  const double h = alpha[1] - alpha[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs(alpha[i] - alpha[i - 1] - h) > 1e-9 * std::max(1.0, std::abs(h)) || !(h > 0)) {
      throw Error("fsd: alpha grid must be uniform and increasing");
    }
  }
  const double max_m = *std::max_element(model_sq.begin(), model_sq.end());
  const double max_r = *std::max_element(ref_sq.begin(), ref_sq.end());

  FsdResult r;
  r.alpha_split = alpha_split;
  std::vector<char> valid(n, 0);
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    valid[i] = max_m > 0 && max_r > 0 && model_sq[i] >= floor * max_m && ref_sq[i] >= floor * max_r &&
               std::isfinite(model_sq[i]) && std::isfinite(ref_sq[i]);
    if (valid[i]) {
      g[i] = std::log(model_sq[i]) - std::log(ref_sq[i]);
      ++r.n_valid;
    }
  }
  if (r.n_valid < 3) throw InsufficientData("fsd: fewer than 3 valid points");

  r.derivative.assign(n, std::numeric_limits<double>::quiet_NaN());
  std::size_t valid_left = 0, valid_right = 0;
  double max_left = -1.0, max_right = -1.0, max_full = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    if (alpha[i] < alpha_split) ++valid_left;
    if (alpha[i] > alpha_split) ++valid_right;
    double d;
    if (i > 0 && i + 1 < n) {
      if (!valid[i - 1] || !valid[i + 1]) continue;
      d = (g[i + 1] - g[i - 1]) / (2.0 * h);
    } else if (i == 0) {
      if (!valid[1]) continue;
      d = (g[1] - g[0]) / h;
    } else {
      if (!valid[i - 1]) continue;
      d = (g[i] - g[i - 1]) / h;
    }
    r.derivative[i] = d;
    const double a = std::abs(d);
    max_full = std::max(max_full, a);
    if (alpha[i] < alpha_split) max_left = std::max(max_left, a);
    if (alpha[i] > alpha_split) max_right = std::max(max_right, a);
  }
  if (max_full < 0) throw InsufficientData("fsd: no valid derivative stencil");
  r.full = max_full;
  if (valid_left >= 3 && max_left >= 0) r.compress = max_left;
  if (valid_right >= 3 && max_right >= 0) r.stretch = max_right;
  return r;
}

FsdResult fsd(const ScanCurve& model, const ScanCurve& ref, const FsdOptions& opt) {
  model.validate();
  ref.validate();
  if (model.alpha.size() != ref.alpha.size()) throw Error("fsd: alpha grids of " + model.id + " differ in length");
  for (std::size_t i = 0; i < model.alpha.size(); ++i) {
    if (std::abs(model.alpha[i] - ref.alpha[i]) > 1e-9) throw Error("fsd: alpha grids of " + model.id + " differ");
  }
  const double split = opt.split == SplitPoint::zero ? 0.0 : ref.alpha[ref.min_e_index()];
  const auto m = delta_force_norm_sq(model), r = delta_force_norm_sq(ref);
  return fsd_from_norms(ref.alpha, m, r, split, opt.floor);
}

double mae_energy(std::span<const double> pred, std::span<const double> ref, std::span<const std::size_t> n_atoms) {
  if (pred.size() != ref.size() || pred.size() != n_atoms.size()) throw Error("mae_energy: shape mismatch");
  if (pred.empty()) throw Error("mae_energy: no frames");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (n_atoms[i] == 0) throw Error("mae_energy: frame without atoms");
    s += std::abs(pred[i] - ref[i]) / static_cast<double>(n_atoms[i]);
  }
  return 1000.0 * s / static_cast<double>(pred.size());
}

double mae_forces(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& ref) {
  if (pred.size() != ref.size()) throw Error("mae_forces: shape mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    if (pred[f].size() != ref[f].size()) throw Error("mae_forces: shape mismatch");
    for (std::size_t i = 0; i < pred[f].size(); ++i) s += std::abs(pred[f][i] - ref[f][i]);
    n += pred[f].size();
  }
  if (n == 0) throw Error("mae_forces: no force components");
  return 1000.0 * s / static_cast<double>(n);
}

double mae_energy(const ScanCurve& pred, const ScanCurve& ref) {
  if (pred.n_atoms != ref.n_atoms) throw Error("mae_energy: atom counts differ");
  const std::vector<std::size_t> n(pred.size(), pred.n_atoms);
  return mae_energy(pred.energies, ref.energies, n);
}

double mae_forces(const ScanCurve& pred, const ScanCurve& ref) { return mae_forces(pred.forces, ref.forces); }

// ---------------------------------------------------------------------------
// Synthetic PES
// ---------------------------------------------------------------------------

std::vector<double> uniform_grid(double lo, double hi, std::size_t n) {
  if (n < 2 || !(hi > lo)) throw Error("uniform_grid: need n >= 2 and hi > lo");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

SynthPair synth_pes(SynthKind kind, const std::vector<double>& grid, const SynthParams& p) {
  SynthPair out;
  out.reference.id = out.model.id = kind == SynthKind::pes1 ? "pes1" : "pes2";
  out.reference.source = "reference";
  out.model.source = out.model.id;
  for (auto* c : {&out.reference, &out.model}) {
    c->n_atoms = 1;
    c->alpha = grid;
  }
  for (const double a : grid) {
    const double e_ref = 0.5 * p.k * a * a, f_ref = -p.k * a;
    double e = e_ref + p.cubic * a * a * a + p.quartic * a * a * a * a;
    double f = f_ref - 3.0 * p.cubic * a * a - 4.0 * p.quartic * a * a * a;
    if (kind == SynthKind::pes2) {
      const double t = (a - p.dip_center) / p.dip_width;
      const double dip = p.dip_depth * std::exp(-0.5 * t * t);
      e -= dip;
      f -= dip * t / p.dip_width;
    }
    out.reference.energies.push_back(e_ref);
    out.reference.forces.push_back({f_ref, 0.0, 0.0});
    out.model.energies.push_back(e);
    out.model.forces.push_back({f, 0.0, 0.0});
  }
  return out;
}

SynthDemo synth_demo(std::size_t n_points, double lo, double hi) {
  const auto grid = uniform_grid(lo, hi, n_points);
  const auto a = synth_pes(SynthKind::pes1, grid), b = synth_pes(SynthKind::pes2, grid);
  SynthDemo d;
  d.fsd_pes1 = fsd(a.model, a.reference).full;
  d.fsd_pes2 = fsd(b.model, b.reference).full;
  d.mae_forces_pes1 = mae_forces(a.model, a.reference);
  d.mae_forces_pes2 = mae_forces(b.model, b.reference);
  d.mae_energy_pes1 = mae_energy(a.model, a.reference);
  d.mae_energy_pes2 = mae_energy(b.model, b.reference);
  return d;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::vector<ScanFsd> evaluate_fsd(const std::vector<ScanCurve>& model, const std::vector<ScanCurve>& ref,
                                  const FsdOptions& opt, int jobs) {
  std::map<std::string, const ScanCurve*> by_id;
  for (const auto& c : ref) by_id[c.id] = &c;
  for (const auto& c : model) {
    const auto it = by_id.find(c.id);
    if (it == by_id.end()) throw Error("no reference curve for scan " + c.id);
    const auto& r = *it->second;
    if (r.alpha.size() != c.alpha.size()) throw Error("alpha grid mismatch for scan " + c.id);
    for (std::size_t i = 0; i < r.alpha.size(); ++i) {
      if (std::abs(r.alpha[i] - c.alpha[i]) > 1e-9) throw Error("alpha grid mismatch for scan " + c.id);
    }
  }
  std::vector<ScanFsd> out(model.size());
  parallel_for(model.size(), resolve_jobs(jobs), [&](std::size_t i) {
    ScanFsd& s = out[i];
    s.id = model[i].id;
    try {
      const auto r = fsd(model[i], *by_id.at(s.id), opt);
      s.valid = true;
      s.full = r.full;
      s.compress = r.compress;
      s.stretch = r.stretch;
      s.n_valid = r.n_valid;
    } catch (const InsufficientData& e) {
      s.error = e.what();
    }
  });
  return out;
}

FsdReport aggregate_report(std::vector<ScanFsd> scans) {
  FsdReport r;
  r.scans = std::move(scans);
  double full = 0.0, comp = 0.0, str = 0.0;
  for (const auto& s : r.scans) {
    if (!s.valid) continue;
    ++r.count;
    full += s.full;
    if (s.compress) {
      ++r.count_compress;
      comp += *s.compress;
    }
    if (s.stretch) {
      ++r.count_stretch;
      str += *s.stretch;
    }
  }
  if (r.count == 0) throw InsufficientData("no valid scans to aggregate");
  r.mean_full = full / static_cast<double>(r.count);
  if (r.count_compress) r.mean_compress = comp / static_cast<double>(r.count_compress);
  if (r.count_stretch) r.mean_stretch = str / static_cast<double>(r.count_stretch);
  return r;
}

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> json_opt(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string csv_num(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

}  // namespace

std::string fsd_report_json(const FsdReport& r) {
  json j;
  j["scans"] = json::array();
  for (const auto& s : r.scans) {
    json e{{"id", s.id}, {"valid", s.valid}, {"n_valid_points", s.n_valid}};
    e["fsd_full"] = s.valid ? json(s.full) : json(nullptr);
    e["fsd_compress"] = opt_json(s.compress);
    e["fsd_stretch"] = opt_json(s.stretch);
    if (!s.valid) e["error"] = s.error;
    j["scans"].push_back(e);
  }
  j["aggregate"] = {{"mean_fsd_full", r.mean_full},
                    {"mean_fsd_compress", opt_json(r.mean_compress)},
                    {"mean_fsd_stretch", opt_json(r.mean_stretch)},
                    {"count", r.count},
                    {"count_compress", r.count_compress},
                    {"count_stretch", r.count_stretch}};
  return j.dump(2) + "\n";
}

std::string fsd_report_csv(const FsdReport& r) {
  std::ostringstream out;
  out << "id,valid,fsd_full,fsd_compress,fsd_stretch,n_valid_points\n";
  for (const auto& s : r.scans) {
    out << s.id << ',' << (s.valid ? 1 : 0) << ',' << (s.valid ? csv_num(s.full) : "") << ','
        << csv_num(s.compress) << ',' << csv_num(s.stretch) << ',' << s.n_valid << '\n';
  }
  return out.str();
}

FsdReport parse_fsd_report_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    FsdReport r;
    for (const auto& e : j.at("scans")) {
      ScanFsd s;
      s.id = e.at("id").get<std::string>();
      s.valid = e.at("valid").get<bool>();
      s.n_valid = e.at("n_valid_points").get<std::size_t>();
      if (s.valid) s.full = e.at("fsd_full").get<double>();
      s.compress = json_opt(e.at("fsd_compress"));
      s.stretch = json_opt(e.at("fsd_stretch"));
      if (e.contains("error")) s.error = e["error"].get<std::string>();
      r.scans.push_back(std::move(s));
    }
    const auto& a = j.at("aggregate");
    r.mean_full = a.at("mean_fsd_full").get<double>();
    r.mean_compress = json_opt(a.at("mean_fsd_compress"));
    r.mean_stretch = json_opt(a.at("mean_fsd_stretch"));
    r.count = a.at("count").get<std::size_t>();
    r.count_compress = a.at("count_compress").get<std::size_t>();
    r.count_stretch = a.at("count_stretch").get<std::size_t>();
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("invalid FSD report: ") + e.what());
  }
}

std::string curves_json(const std::vector<ScanCurve>& curves) {
  json j = json::array();
  for (const auto& c : curves) {
    j.push_back({{"id", c.id},
                 {"source", c.source},
                 {"n_atoms", c.n_atoms},
                 {"alpha", c.alpha},
                 {"energies", c.energies},
                 {"forces", c.forces}});
  }
  json out;
  out["curves"] = std::move(j);
  return out.dump() + "\n";
}

std::vector<ScanCurve> parse_curves_json(const std::string& text) {
  std::vector<ScanCurve> out;
  try {
    const auto doc = json::parse(text);
    for (const auto& e : doc.at("curves")) {
      ScanCurve c;
      c.id = e.at("id").get<std::string>();
      c.source = e.at("source").get<std::string>();
      c.n_atoms = e.at("n_atoms").get<std::size_t>();
      c.alpha = e.at("alpha").get<std::vector<double>>();
      c.energies = e.at("energies").get<std::vector<double>>();
      c.forces = e.at("forces").get<std::vector<std::vector<double>>>();
      c.validate();
      out.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw Error(std::string("invalid curves file: ") + e.what());
  }
  return out;
}

std::vector<ScanCurve> read_curves(const std::filesystem::path& path) {
  try {
    return parse_curves_json(read_text_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace bsct
