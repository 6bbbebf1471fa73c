#include "bsct/run.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "bsct/parallel.hpp"

namespace bsct {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double num(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used == v.size()) return r;
  } catch (...) {
  }
  throw Error("config key " + key + ": expected a number, got '" + v + "'");
}

long long integer(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used == v.size()) return r;
  } catch (...) {
  }
  throw Error("config key " + key + ": expected an integer, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> num_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(num(key, trim(item)));
  if (out.empty()) throw Error("config key " + key + ": empty list");
  return out;
}

}  // namespace

void RunConfig::apply(const FlatConfig& flat) {
  FlatConfig model_keys, train_keys;
  for (const auto& [key, v] : flat) {
    const auto dot = key.find('.');
    const std::string group = key.substr(0, dot);
    const std::string k = dot == std::string::npos ? "" : key.substr(dot + 1);
    if (group == "model") {
      model_keys[key] = v;
    } else if (group == "train") {
      train_keys[key] = v;
    } else if (group == "scan") {
      if (k == "frames") scan.frames = static_cast<int>(integer(key, v));
      else if (k == "seed") scan.seed = static_cast<std::uint64_t>(integer(key, v));
      else if (k == "bond_types") scan.bond_types = v;
      else if (k == "scans_per_structure") scan.scans_per_structure = static_cast<int>(integer(key, v));
      else if (k == "overlap_factor") scan.overlap_factor = num(key, v);
      else if (k == "bond_scale") scan.bond_scale = num(key, v);
      else throw Error("unknown config key: " + key);
    } else if (group == "md") {
      if (k == "dt") md.dt = num(key, v);
      else if (k == "steps") md.steps = static_cast<long>(integer(key, v));
      else if (k == "friction") md.friction = num(key, v);
      else if (k == "temperature") md.temperature = num(key, v);
      else if (k == "seed") md.seed = static_cast<std::uint64_t>(integer(key, v));
      else if (k == "record_every") md.record_every = static_cast<int>(integer(key, v));
      else if (k == "temperatures") md.temperatures = num_list(key, v);
      else if (k == "seeds") md.seeds = static_cast<int>(integer(key, v));
      else if (k == "equilibration_steps") md.equilibration_steps = static_cast<long>(integer(key, v));
      else if (k == "production_steps") md.production_steps = static_cast<long>(integer(key, v));
      else if (k == "relax_tol") md.relax_tol = num(key, v);
      else if (k == "relax_steps") md.relax_steps = static_cast<int>(integer(key, v));
      else throw Error("unknown config key: " + key);
    } else if (group == "data") {
      if (k == "samples_per_molecule") data.samples_per_molecule = static_cast<std::size_t>(integer(key, v));
      else if (k == "perturbation") data.perturbation = num(key, v);
      else if (k == "stretch_fraction") data.stretch_fraction = num(key, v);
      else if (k == "stretch_max") data.stretch_max = num(key, v);
      else if (k == "thermal_fraction") data.thermal_fraction = num(key, v);
      else if (k == "thermal_min") data.thermal_min = num(key, v);
      else if (k == "thermal_max") data.thermal_max = num(key, v);
      else if (k == "thermal_steps") data.thermal_steps = static_cast<long>(integer(key, v));
      else if (k == "contact_fraction") data.contact_fraction = num(key, v);
      else if (k == "contact_min") data.contact_min = num(key, v);
      else if (k == "contact_max") data.contact_max = num(key, v);
      else if (k == "seed") data.seed = static_cast<std::uint64_t>(integer(key, v));
      else throw Error("unknown config key: " + key);
    } else if (group == "fsd") {
      if (k == "split") {
        if (v == "min") fsd.split = SplitPoint::reference_min;
        else if (v == "zero") fsd.split = SplitPoint::zero;
        else throw Error("config key fsd.split: expected min or zero, got '" + v + "'");
      } else if (k == "floor") {
        fsd.floor = num(key, v);
      } else {
        throw Error("unknown config key: " + key);
      }
    } else if (key == "run.jobs") {
      jobs = static_cast<int>(integer(key, v));
    } else {
      throw Error("unknown config key: " + key);
    }
  }
  model.apply(model_keys);
  train.apply(train_keys);
  train.jobs = jobs;
}

FlatConfig RunConfig::to_flat() const {
  FlatConfig f = model.to_flat();
  for (auto& kv : train.to_flat()) f.insert(kv);
  f["scan.frames"] = std::to_string(scan.frames);
  f["scan.seed"] = std::to_string(scan.seed);
  f["scan.bond_types"] = scan.bond_types;
  f["scan.scans_per_structure"] = std::to_string(scan.scans_per_structure);
  f["scan.overlap_factor"] = fmt(scan.overlap_factor);
  f["scan.bond_scale"] = fmt(scan.bond_scale);
  f["md.dt"] = fmt(md.dt);
  f["md.steps"] = std::to_string(md.steps);
  f["md.friction"] = fmt(md.friction);
  f["md.temperature"] = fmt(md.temperature);
  f["md.seed"] = std::to_string(md.seed);
  f["md.record_every"] = std::to_string(md.record_every);
  std::string temps;
  for (std::size_t i = 0; i < md.temperatures.size(); ++i) temps += (i ? "," : "") + fmt(md.temperatures[i]);
  f["md.temperatures"] = temps;
  f["md.seeds"] = std::to_string(md.seeds);
  f["md.equilibration_steps"] = std::to_string(md.equilibration_steps);
  f["md.production_steps"] = std::to_string(md.production_steps);
  f["md.relax_tol"] = fmt(md.relax_tol);
  f["md.relax_steps"] = std::to_string(md.relax_steps);
  f["data.samples_per_molecule"] = std::to_string(data.samples_per_molecule);
  f["data.perturbation"] = fmt(data.perturbation);
  f["data.stretch_fraction"] = fmt(data.stretch_fraction);
  f["data.stretch_max"] = fmt(data.stretch_max);
  f["data.thermal_fraction"] = fmt(data.thermal_fraction);
  f["data.thermal_min"] = fmt(data.thermal_min);
  f["data.thermal_max"] = fmt(data.thermal_max);
  f["data.thermal_steps"] = std::to_string(data.thermal_steps);
  f["data.contact_fraction"] = fmt(data.contact_fraction);
  f["data.contact_min"] = fmt(data.contact_min);
  f["data.contact_max"] = fmt(data.contact_max);
  f["data.seed"] = std::to_string(data.seed);
  f["fsd.split"] = fsd.split == SplitPoint::zero ? "zero" : "min";
  f["fsd.floor"] = fmt(fsd.floor);
  f["run.jobs"] = std::to_string(jobs);
  return f;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  auto fail = [](const std::string& what) { throw Error("invalid config: " + what); };
  if (scan.frames < 2) fail("scan.frames must be >= 2");
  if (scan.scans_per_structure < 1) fail("scan.scans_per_structure must be >= 1");
  if (!(scan.overlap_factor > 0) || !(scan.bond_scale > 0)) fail("scan factors must be positive");
  if (!scan.bond_types.empty()) parse_bond_types(scan.bond_types);
  if (!(md.dt > 0)) fail("md.dt must be positive");
  if (md.steps < 0 || md.equilibration_steps < 0 || md.production_steps < 1) fail("md step counts out of range");
  if (!(md.friction >= 0)) fail("md.friction must be >= 0");
  if (!(md.temperature >= 0)) fail("md.temperature must be >= 0");
  for (double t : md.temperatures) {
    if (!(t >= 0)) fail("md.temperatures must be >= 0");
  }
  if (md.record_every < 1) fail("md.record_every must be >= 1");
  if (md.seeds < 1) fail("md.seeds must be >= 1");
  if (!(fsd.floor >= 0)) fail("fsd.floor must be >= 0");
  if (jobs < 0) fail("run.jobs must be >= 0");
}

SampleOptions RunConfig::sample_options() const {
  SampleOptions o;
  if (!scan.bond_types.empty()) o.allowed = parse_bond_types(scan.bond_types);
  o.n_frames = scan.frames;
  o.seed = scan.seed;
  o.scans_per_structure = scan.scans_per_structure;
  o.bond_scale = scan.bond_scale;
  o.overlap_factor = scan.overlap_factor;
  o.jobs = resolve_jobs(jobs);
  return o;
}

StabilityOptions RunConfig::stability_options() const {
  StabilityOptions o;
  o.temperatures = md.temperatures;
  o.n_seeds = md.seeds;
  o.dt = md.dt;
  o.equilibration_steps = md.equilibration_steps;
  o.production_steps = md.production_steps;
  o.friction = md.friction;
  o.relax_tol = md.relax_tol;
  o.relax_steps = md.relax_steps;
  o.seed = md.seed;
  o.jobs = jobs;
  return o;
}

MdOptions RunConfig::md_options(Ensemble e) const {
  MdOptions o;
  o.ensemble = e;
  o.dt = md.dt;
  o.steps = md.steps;
  o.friction = md.friction;
  o.temperature = md.temperature;
  o.seed = md.seed;
  o.record_every = md.record_every;
  return o;
}

FsdOptions RunConfig::fsd_options() const {
  FsdOptions o;
  o.split = fsd.split;
  o.floor = fsd.floor;
  return o;
}

FlatConfig parse_flat_config(const std::string& text) {
  FlatConfig out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(lineno, "empty key");
    if (!out.emplace(key, value).second) throw ParseError(lineno, "duplicate key " + key);
  }
  return out;
}

std::string flat_config_text(const FlatConfig& flat) {
  std::string s;
  for (const auto& [k, v] : flat) s += k + " = " + v + "\n";
  return s;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  RunConfig c;
  try {
    c.apply(parse_flat_config(read_text_file(path)));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return c;
}

LoadedModel potential_model(const PotentialConfig& cfg, const Parameters& params, std::string name) {
  auto pot = std::make_shared<const Potential>(cfg, params);
  LoadedModel m;
  m.name = std::move(name);
  m.model = [pot](const Structure& s) { return pot->evaluate(s); };
  m.config = cfg;
  return m;
}

LoadedModel load_model(const std::string& spec, bool use_ema) {
  if (spec == "reference") {
    LoadedModel m;
    m.name = "reference";
    const ReferencePotential ref;
    m.model = [ref](const Structure& s) { return ref.evaluate(s); };
    return m;
  }
  const auto ck = load_checkpoint(spec);
  const bool ema = use_ema && !ck.ema.empty();
  return potential_model(ck.config, ema ? ck.ema : ck.params, std::filesystem::path(spec).stem().string());
}

ScanCurve scan_curve(const BondScan& scan, const StructureModel& model, const std::string& id,
                     const std::string& source, int jobs) {
  ScanCurve c;
  c.id = id;
  c.source = source;
  c.n_atoms = scan.base.size();
  c.alpha = scan.alpha_grid;
  const std::size_t n = scan.frames.size();
  c.energies.assign(n, 0.0);
  c.forces.assign(n, {});
  parallel_for(n, resolve_jobs(jobs), [&](std::size_t m) {
    const auto ef = model(scan.frame(m));
    c.energies[m] = ef.energy;
    auto& f = c.forces[m];
    f.reserve(3 * ef.forces.size());
    for (const auto& v : ef.forces) f.insert(f.end(), v.begin(), v.end());
  });
  c.validate();
  return c;
}

std::string scan_dir_name(const BondScan& scan) {
  const std::string tag = scan.base.tag.empty() ? "structure" : scan.base.tag;
  return tag + "_" + std::to_string(scan.bond.first) + "-" + std::to_string(scan.bond.second);
}

std::vector<std::filesystem::path> list_scan_dirs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_directory() && std::filesystem::exists(e.path() / "scan.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace bsct
