#include "bsct/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <map>
#include <sstream>

#include "bsct/parallel.hpp"
#include "json.hpp"

namespace bsct {

ForceFn bind_structure(const StructureModel& model, const Structure& s) {
  return [model, s](const std::vector<Vec3>& x) { return model(with_positions(s, x)); };
}

void MdState::validate() const {
  if (velocities.size() != positions.size() || masses.size() != positions.size()) {
    throw Error("MD state: positions, velocities and masses differ in length");
  }
  for (const double m : masses) {
    if (!(m > 0)) throw Error("MD state: masses must be positive");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      if (!std::isfinite(positions[i][c]) || !std::isfinite(velocities[i][c])) throw Error("MD state is not finite");
    }
  }
}

MdState make_state(const Structure& s) {
  MdState st;
  st.positions = s.positions;
  st.velocities.assign(s.size(), Vec3{0, 0, 0});
  for (const int z : s.species) st.masses.push_back(atomic_mass(z));
  return st;
}

namespace {

void evaluate(MdState& st, const ForceFn& fn) {
  auto r = fn(st.positions);
  if (r.forces.size() != st.size()) throw Error("force callback returned the wrong number of atoms");
  if (!std::isfinite(r.energy)) throw IntegrationBlowup(st.step, "non-finite energy");
  for (const auto& f : r.forces) {
    if (!std::isfinite(f[0]) || !std::isfinite(f[1]) || !std::isfinite(f[2])) {
      throw IntegrationBlowup(st.step, "non-finite force");
    }
  }
  st.forces = std::move(r.forces);
  st.potential = r.energy;
  st.has_forces = true;
}

void kick(MdState& st, double dt) {
  for (std::size_t i = 0; i < st.size(); ++i) {
    const double s = 0.5 * dt * units::kAccelEvPerAmuA / st.masses[i];
    for (int c = 0; c < 3; ++c) st.velocities[i][c] += s * st.forces[i][c];
  }
}

void drift(MdState& st, double dt) {
  for (std::size_t i = 0; i < st.size(); ++i) {
    for (int c = 0; c < 3; ++c) st.positions[i][c] += dt * st.velocities[i][c];
  }
}

}  // namespace

void ensure_forces(MdState& st, const ForceFn& fn) {
  if (!st.has_forces) evaluate(st, fn);
}

void velocity_verlet_step(MdState& st, const ForceFn& fn, double dt) {
  if (!(dt > 0)) throw Error("time step must be positive");
  ensure_forces(st, fn);
  kick(st, dt);
  drift(st, dt);
  ++st.step;
  st.time += dt;
  evaluate(st, fn);
  kick(st, dt);
}

void langevin_step(MdState& st, const ForceFn& fn, double dt, double friction, double temperature,
                   std::mt19937_64& rng) {
  if (!(dt > 0)) throw Error("time step must be positive");
  if (!(friction >= 0) || !(temperature >= 0)) throw Error("friction and temperature must be non-negative");
  ensure_forces(st, fn);
  kick(st, dt);
  drift(st, 0.5 * dt);
  const double c1 = std::exp(-friction * dt);
  const double c2 = std::sqrt(1.0 - c1 * c1);
  if (friction > 0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < st.size(); ++i) {
      const double sigma = std::sqrt(units::kBoltzmann * temperature / (st.masses[i] * units::kAmuA2PerFs2ToEv));
      for (int c = 0; c < 3; ++c) st.velocities[i][c] = c1 * st.velocities[i][c] + c2 * sigma * normal(rng);
    }
  }
  drift(st, 0.5 * dt);
  ++st.step;
  st.time += dt;
  evaluate(st, fn);
  kick(st, dt);
}

double kinetic_energy(std::span<const Vec3> v, std::span<const double> m) {
  if (v.size() != m.size()) throw Error("kinetic_energy: size mismatch");
  double ke = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) ke += 0.5 * m[i] * dot(v[i], v[i]);
  return ke * units::kAmuA2PerFs2ToEv;
}

double kinetic_temperature(std::span<const Vec3> v, std::span<const double> m) {
  if (v.empty()) throw Error("kinetic_temperature: no atoms");
  return 2.0 * kinetic_energy(v, m) / (3.0 * static_cast<double>(v.size()) * units::kBoltzmann);
}

std::vector<Vec3> maxwell_boltzmann(std::span<const double> masses, double temperature, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vec3> v(masses.size());
  Vec3 p{0, 0, 0};
  double total = 0.0;
  for (std::size_t i = 0; i < masses.size(); ++i) {
    const double sigma = std::sqrt(units::kBoltzmann * temperature / (masses[i] * units::kAmuA2PerFs2ToEv));
    for (int c = 0; c < 3; ++c) v[i][c] = sigma * normal(rng);
    p = p + masses[i] * v[i];
    total += masses[i];
  }
  if (masses.size() > 1) {
    for (auto& x : v) x = x - (1.0 / total) * p;
  }
  return v;
}

double max_temp_jump(std::span<const double> times, std::span<const double> temps, double window) {
  if (times.size() != temps.size()) throw Error("max_temp_jump: size mismatch");
  // Sliding-window minimum of T over [t_j - window, t_j].
  std::deque<std::size_t> mins;
  double best = 0.0;
  std::size_t lo = 0;
  for (std::size_t j = 0; j < times.size(); ++j) {
    if (j > 0 && times[j] < times[j - 1]) throw Error("max_temp_jump: times must be non-decreasing");
    while (!mins.empty() && temps[mins.back()] >= temps[j]) mins.pop_back();
    mins.push_back(j);
    while (times[j] - times[lo] > window) ++lo;
    while (mins.front() < lo) mins.pop_front();
    best = std::max(best, temps[j] - temps[mins.front()]);
  }
  return best;
}

double energy_drift(std::span<const double> e, std::size_t n_atoms) {
  if (e.size() < 2) throw Error("energy_drift: need at least two samples");
  if (n_atoms == 0) throw Error("energy_drift: no atoms");
  return 1000.0 * std::abs(e.back() - e[1]) / static_cast<double>(n_atoms);
}

RelaxResult relax(const ForceFn& fn, std::vector<Vec3> positions, double force_tol, int max_steps) {
  auto fmax = [](const std::vector<Vec3>& f) {
    double m = 0.0;
    for (const auto& x : f) m = std::max(m, norm(x));
    return m;
  };
  RelaxResult r;
  auto cur = fn(positions);
  double step = 0.1;  // max displacement, A
  for (r.steps = 0; r.steps < max_steps; ++r.steps) {
    const double fm = fmax(cur.forces);
    if (!std::isfinite(fm) || !std::isfinite(cur.energy)) break;
    if (fm < force_tol) {
      r.converged = true;
      break;
    }
    bool moved = false;
    for (int tries = 0; tries < 30; ++tries) {
      auto trial = positions;
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = trial[i] + (step / fm) * cur.forces[i];
      auto next = fn(trial);
      if (std::isfinite(next.energy) && next.energy < cur.energy) {
        positions = std::move(trial);
        cur = std::move(next);
        step = std::min(step * 1.2, 0.2);
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  r.max_force = fmax(cur.forces);
  r.converged = r.converged || r.max_force < force_tol;
  r.energy = cur.energy;
  r.positions = std::move(positions);
  return r;
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

MdReport run_md(MdState& st, const ForceFn& fn, const MdOptions& opt) {
  st.validate();
  if (opt.record_every < 1) throw Error("record_every must be >= 1");
  MdReport r;
  r.n_atoms = st.size();
  r.seed = opt.seed;
  r.bath_temperature = opt.ensemble == Ensemble::langevin ? opt.temperature : 0.0;
  std::mt19937_64 rng(opt.seed);

  double e_first = 0.0;
  auto record = [&] {
    const double ke = kinetic_energy(st.velocities, st.masses);
    r.steps.push_back(st.step);
    r.time.push_back(st.time);
    r.kinetic.push_back(ke);
    r.total_energy.push_back(st.potential + ke);
    r.temperature.push_back(kinetic_temperature(st.velocities, st.masses));
  };
  try {
    ensure_forces(st, fn);
    record();
    e_first = r.total_energy.back();
    for (long s = 0; s < opt.steps; ++s) {
      if (opt.ensemble == Ensemble::nve) {
        velocity_verlet_step(st, fn, opt.dt);
      } else {
        langevin_step(st, fn, opt.dt, opt.friction, opt.temperature, rng);
      }
      if (s == 0) e_first = st.potential + kinetic_energy(st.velocities, st.masses);
      if ((s + 1) % opt.record_every == 0 || s + 1 == opt.steps) record();
    }
  } catch (const IntegrationBlowup& e) {
    r.aborted = true;
    r.abort_step = e.step();
    r.error = e.what();
  }
  if (!r.total_energy.empty()) {
    r.drift = 1000.0 * std::abs(r.total_energy.back() - e_first) / static_cast<double>(r.n_atoms);
  }
  r.max_jump = max_temp_jump(r.time, r.temperature, 10.0);
  return r;
}

std::string md_series_csv(const MdReport& r) {
  std::ostringstream out;
  out << "step,time,E_total,E_kin,T_kin\n";
  char buf[160];
  for (std::size_t i = 0; i < r.time.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%ld,%.10g,%.17g,%.17g,%.17g\n", r.steps[i], r.time[i], r.total_energy[i],
                  r.kinetic[i], r.temperature[i]);
    out << buf;
  }
  return out.str();
}

namespace {

nlohmann::json report_object(const MdReport& r, bool include_series) {
  nlohmann::json j{{"structure", r.structure},
                   {"bath_temperature", r.bath_temperature},
                   {"seed", r.seed},
                   {"n_atoms", r.n_atoms},
                   {"relaxed", r.relaxed},
                   {"aborted", r.aborted},
                   {"abort_step", r.abort_step},
                   {"energy_drift_mev_per_atom", r.drift},
                   {"max_temp_jump_10fs", r.max_jump},
                   {"n_samples", r.time.size()}};
  if (!r.error.empty()) j["error"] = r.error;
  if (include_series) {
    j["series"] = {{"step", r.steps},
                   {"time", r.time},
                   {"E_total", r.total_energy},
                   {"E_kin", r.kinetic},
                   {"T_kin", r.temperature}};
  }
  return j;
}

}  // namespace

std::string md_report_json(const MdReport& r, bool include_series) {
  return report_object(r, include_series).dump(2) + "\n";
}

std::vector<MdReport> run_stability_protocol(const StructureModel& model, const std::vector<Structure>& structures,
                                             const StabilityOptions& opt) {
  const std::size_t nt = opt.temperatures.size(), ns = static_cast<std::size_t>(opt.n_seeds);
  const std::size_t total = structures.size() * nt * ns;

  // Relaxation is shared by every temperature and seed of a structure.
  std::vector<RelaxResult> relaxed(structures.size());
  parallel_for(structures.size(), resolve_jobs(opt.jobs), [&](std::size_t i) {
    relaxed[i] = relax(bind_structure(model, structures[i]), structures[i].positions, opt.relax_tol, opt.relax_steps);
  });

  std::vector<MdReport> out(total);
  parallel_for(total, resolve_jobs(opt.jobs), [&](std::size_t job) {
    const std::size_t si = job / (nt * ns), ti = (job / ns) % nt, seed_i = job % ns;
    const Structure& s = structures[si];
    const double temp = opt.temperatures[ti];
    MdReport& rep = out[job];
    rep.structure = s.tag;
    rep.bath_temperature = temp;
    rep.n_atoms = s.size();
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                      static_cast<std::uint32_t>(si), static_cast<std::uint32_t>(ti),
                      static_cast<std::uint32_t>(seed_i)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    rep.seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    if (!relaxed[si].converged) {
      rep.relaxed = false;
      rep.error = "relaxation did not converge";
      return;
    }
    const auto fn = bind_structure(model, s);
    MdState st = make_state(with_positions(s, relaxed[si].positions));
    std::mt19937_64 rng(rep.seed);
    st.velocities = maxwell_boltzmann(st.masses, temp, rng);
    MdOptions md;
    md.ensemble = Ensemble::langevin;
    md.dt = opt.dt;
    md.friction = opt.friction;
    md.temperature = temp;
    try {
      for (long k = 0; k < opt.equilibration_steps; ++k) langevin_step(st, fn, opt.dt, opt.friction, temp, rng);
    } catch (const IntegrationBlowup& e) {
      rep.aborted = true;
      rep.abort_step = e.step();
      rep.error = std::string("during equilibration: ") + e.what();
      return;
    }
    md.steps = opt.production_steps;
    md.seed = rng();
    const auto prod = run_md(st, fn, md);
    const auto keep_seed = rep.seed;
    rep = prod;
    rep.structure = s.tag;
    rep.bath_temperature = temp;
    rep.seed = keep_seed;
  });
  return out;
}

std::vector<JumpSummary> summarize_jumps(const std::vector<MdReport>& reports) {
  std::map<double, JumpSummary> by_t;
  std::map<double, std::pair<double, std::size_t>> completed;
  for (const auto& r : reports) {
    if (!r.relaxed) continue;
    auto& s = by_t[r.bath_temperature];
    s.temperature = r.bath_temperature;
    ++s.runs;
    s.mean_jump_all += r.max_jump;
    if (r.aborted) {
      ++s.aborted;
    } else {
      completed[r.bath_temperature].first += r.max_jump;
      ++completed[r.bath_temperature].second;
    }
  }
  std::vector<JumpSummary> out;
  for (auto& [t, s] : by_t) {
    s.mean_jump_all /= static_cast<double>(s.runs);
    const auto& c = completed[t];
    if (c.second) s.mean_jump_completed = c.first / static_cast<double>(c.second);
    out.push_back(s);
  }
  return out;
}

}  // namespace bsct
