#include <cmath>
#include <limits>
#include <random>

#include "bsct/dynamics.hpp"
#include "bsct/molecules.hpp"
#include "doctest.h"
#include "testing.hpp"

using namespace bsct;

namespace {

EnergyForces zero_forces(const std::vector<Vec3>& x) { return {0.0, std::vector<Vec3>(x.size(), Vec3{0, 0, 0})}; }

MdState free_particles(std::size_t n, double mass = 1.0) {
  MdState st;
  st.positions.assign(n, Vec3{0, 0, 0});
  st.velocities.assign(n, Vec3{0, 0, 0});
  st.masses.assign(n, mass);
  return st;
}

Structure jittered(const std::string& name, std::uint64_t seed, double sigma = 0.05) {
  auto s = builtin_molecule(name);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sigma);
  for (auto& x : s.positions) x = x + Vec3{nd(rng), nd(rng), nd(rng)};
  s.bonds = perceive_bonds(builtin_molecule(name));
  return s;
}

StructureModel reference_model() {
  return [](const Structure& s) { return ReferencePotential().evaluate(s); };
}

}  // namespace

TEST_CASE("velocity Verlet") {
  SUBCASE("ballistic free particle") {
    auto st = free_particles(1);
    st.velocities[0] = {0.1, 0, 0};
    for (int s = 1; s <= 10; ++s) {
      velocity_verlet_step(st, zero_forces, 1.0);
      CHECK(st.positions[0][0] == doctest::Approx(0.1 * s));
      CHECK(st.velocities[0][0] == 0.1);
    }
    CHECK(st.time == 10.0);
  }

  SUBCASE("harmonic oscillator against the closed form") {
    const double omega = 0.01, m = 1.0;  // 1/fs, amu
    const double k = omega * omega * m / units::kAccelEvPerAmuA;  // eV/A^2
    const double x0 = 0.1;
    std::size_t n_evals = 0;
    ForceFn fn = [&](const std::vector<Vec3>& x) {
      ++n_evals;
      return EnergyForces{0.5 * k * x[0][0] * x[0][0], {Vec3{-k * x[0][0], 0, 0}}};
    };
    auto st = free_particles(1, m);
    st.positions[0] = {x0, 0, 0};
    const double e0 = 0.5 * k * x0 * x0;
    double worst_early = 0.0, worst_late = 0.0;
    const int steps = 10000;
    for (int s = 1; s <= steps; ++s) {
      velocity_verlet_step(st, fn, 1.0);
      const double e = st.potential + kinetic_energy(st.velocities, st.masses);
      const double dev = std::abs(e - e0) / e0;
      (s <= 1000 ? worst_early : worst_late) = std::max(s <= 1000 ? worst_early : worst_late, dev);
    }
    CHECK(n_evals == steps + 1);  // one evaluation per step plus the initial one
    CHECK(worst_late < 1e-4);
    CHECK(worst_late < 1.5 * worst_early);  // bounded oscillation, no secular growth
    CHECK(std::abs(st.positions[0][0] - x0 * std::cos(omega * steps)) < 1e-3 * x0);
  }

  SUBCASE("time reversibility") {
    const auto mol = jittered("ethanol", 1);
    const auto fn = bind_structure(reference_model(), mol);
    auto st = make_state(mol);
    std::mt19937_64 rng(2);
    st.velocities = maxwell_boltzmann(st.masses, 300.0, rng);
    for (int s = 0; s < 500; ++s) velocity_verlet_step(st, fn, 0.5);
    for (auto& v : st.velocities) v = -1.0 * v;
    for (int s = 0; s < 500; ++s) velocity_verlet_step(st, fn, 0.5);
    double worst = 0.0;
    for (std::size_t i = 0; i < mol.size(); ++i) worst = std::max(worst, norm(st.positions[i] - mol.positions[i]));
    CHECK(worst < 1e-8);
  }

  SUBCASE("non-finite force aborts with the step index") {
    ForceFn fn = [](const std::vector<Vec3>& x) {
      const double bad = x[0][0] > 0.45 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
      return EnergyForces{0.0, {Vec3{bad, 0, 0}}};
    };
    auto st = free_particles(1);
    st.velocities[0] = {0.1, 0, 0};
    MdOptions opt;
    opt.steps = 20;
    const auto r = run_md(st, fn, opt);
    CHECK(r.aborted);
    CHECK(r.abort_step == 5);
    CHECK(r.time.size() == 5);
  }
}

TEST_CASE("Langevin") {
  SUBCASE("zero friction and temperature reduce to velocity Verlet") {
    const auto mol = jittered("methanol", 3);
    const auto fn = bind_structure(reference_model(), mol);
    auto a = make_state(mol), b = make_state(mol);
    std::mt19937_64 rng(4), unused(5);
    a.velocities = b.velocities = maxwell_boltzmann(a.masses, 200.0, rng);
    for (int s = 0; s < 200; ++s) {
      velocity_verlet_step(a, fn, 0.5);
      langevin_step(b, fn, 0.5, 0.0, 0.0, unused);
    }
    for (std::size_t i = 0; i < mol.size(); ++i) {
      CHECK(norm(a.positions[i] - b.positions[i]) < 1e-12);
      CHECK(norm(a.velocities[i] - b.velocities[i]) < 1e-12);
    }
  }

  SUBCASE("fixed seed reproduces the trajectory bitwise") {
    const auto mol = jittered("methylamine", 6);
    const auto fn = bind_structure(reference_model(), mol);
    MdOptions opt;
    opt.ensemble = Ensemble::langevin;
    opt.steps = 300;
    opt.seed = 99;
    opt.friction = 0.01;
    auto a = make_state(mol), b = make_state(mol);
    const auto ra = run_md(a, fn, opt), rb = run_md(b, fn, opt);
    CHECK(ra.total_energy == rb.total_energy);
    CHECK(a.positions == b.positions);
    opt.seed = 100;
    auto c = make_state(mol);
    CHECK(run_md(c, fn, opt).total_energy != ra.total_energy);
  }

  SUBCASE("free particles equilibrate to the bath temperature") {
    const std::size_t n = 100;
    auto st = free_particles(n, 12.0);
    std::mt19937_64 rng(7);
    st.velocities = maxwell_boltzmann(st.masses, 300.0, rng);
    double sum = 0.0;
    const long steps = 1000000;
    for (long s = 0; s < steps; ++s) {
      langevin_step(st, zero_forces, 1.0, 1e-3, 300.0, rng);
      sum += kinetic_temperature(st.velocities, st.masses);
    }
    const double mean = sum / steps;
    MESSAGE("time-averaged kinetic temperature " << mean << " K");
    CHECK(mean == doctest::Approx(300.0).epsilon(0.02));
  }
}

TEST_CASE("kinetic temperature") {
  const std::vector<double> m{1.0};
  std::vector<Vec3> v{{0.01, 0, 0}};
  CHECK(kinetic_energy(v, m) == doctest::Approx(5.1821e-3).epsilon(1e-4));
  CHECK(kinetic_temperature(v, m) == doctest::Approx(40.09).epsilon(1e-3));
  const double t = kinetic_temperature(v, m);
  v[0] = 2.0 * v[0];
  CHECK(kinetic_temperature(v, m) == doctest::Approx(4.0 * t));
  CHECK(kinetic_temperature(std::vector<Vec3>{{0, 0, 0}}, m) == 0.0);

  std::mt19937_64 rng(8);
  const std::vector<double> masses(5000, 14.0);
  const auto mb = maxwell_boltzmann(masses, 500.0, rng);
  CHECK(kinetic_temperature(mb, masses) == doctest::Approx(500.0).epsilon(0.05));
  Vec3 p{0, 0, 0};
  for (const auto& x : mb) p = p + 14.0 * x;
  CHECK(norm(p) < 1e-9);
}

TEST_CASE("max temperature jump") {
  const std::vector<double> t0{0, 1, 2}, c{300, 300, 300};
  CHECK(max_temp_jump(t0, c) == 0.0);
  CHECK(max_temp_jump(std::vector<double>{0, 5, 20}, std::vector<double>{300, 900, 310}) == 600.0);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1000.0), dt(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> times, temps;
    double now = 0.0;
    for (int i = 0; i < 200; ++i) {
      now += trial % 3 == 0 ? 1.0 : dt(rng);
      times.push_back(now);
      temps.push_back(u(rng));
    }
    const double window = trial % 2 ? 10.0 : 4.5;
    double brute = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      for (std::size_t j = i; j < times.size(); ++j) {
        if (times[j] - times[i] <= window) brute = std::max(brute, temps[j] - temps[i]);
      }
    }
    CHECK(max_temp_jump(times, temps, window) == brute);
  }
  CHECK_THROWS_AS(max_temp_jump(std::vector<double>{0, 2, 1}, std::vector<double>{0, 0, 0}), Error);
}

TEST_CASE("energy drift") {
  CHECK(energy_drift(std::vector<double>{5, 5, 5}, 3) == 0.0);
  CHECK(energy_drift(std::vector<double>{10.0, 10.0, 10.002, 10.004}, 2) == doctest::Approx(2.0));
  // A first-step offset is not counted.
  CHECK(energy_drift(std::vector<double>{9.0, 10.0, 10.0}, 2) == 0.0);
}

TEST_CASE("relaxation") {
  Structure co;
  co.species = {6, 8};
  co.positions = {{0, 0, 0}, {0, 0, 1.8}};
  co.bonds = std::vector<Bond>{{0, 1}};
  const auto r = relax(bind_structure(reference_model(), co), co.positions);
  CHECK(r.converged);
  CHECK(r.max_force < 0.02);
  CHECK(norm(r.positions[1] - r.positions[0]) == doctest::Approx(covalent_radius(6) + covalent_radius(8)).epsilon(1e-2));

  const auto mol = jittered("propane", 10, 0.1);
  const auto rp = relax(bind_structure(reference_model(), mol), mol.positions);
  CHECK(rp.converged);
  CHECK(rp.energy < ReferencePotential().evaluate(mol).energy);
}

TEST_CASE("stability protocol") {
  SUBCASE("a structure at rest in its minimum stays cold") {
    Structure co;
    co.tag = "co";
    co.species = {6, 8};
    co.positions = {{0, 0, 0}, {0, 0, covalent_radius(6) + covalent_radius(8)}};
    co.bonds = std::vector<Bond>{{0, 1}};
    StabilityOptions opt;
    opt.temperatures = {0.0};
    opt.n_seeds = 2;
    opt.equilibration_steps = 50;
    opt.production_steps = 100;
    const auto reps = run_stability_protocol(reference_model(), {co}, opt);
    REQUIRE(reps.size() == 2);
    for (const auto& r : reps) {
      CHECK(r.max_jump == 0.0);
      CHECK(*std::max_element(r.temperature.begin(), r.temperature.end()) == 0.0);
    }
  }

  SUBCASE("grid of structures, temperatures and seeds") {
    std::vector<Structure> mols;
    for (const auto& name : builtin_molecule_names()) {
      if (mols.size() == 7) break;
      auto s = builtin_molecule(name);
      s.bonds = perceive_bonds(s);
      mols.push_back(s);
    }
    StabilityOptions opt;
    opt.temperatures = {300.0, 600.0, 900.0};
    opt.n_seeds = 10;
    opt.equilibration_steps = 5;
    opt.production_steps = 20;
    opt.seed = 3;
    const auto reps = run_stability_protocol(reference_model(), mols, opt);
    REQUIRE(reps.size() == 210);
    CHECK(reps[0].structure == mols[0].tag);
    CHECK(reps[10].bath_temperature == 600.0);
    CHECK(reps[209].structure == mols[6].tag);
    CHECK(reps[209].bath_temperature == 900.0);
    for (const auto& r : reps) CHECK(r.relaxed);

    opt.jobs = 1;
    const auto again = run_stability_protocol(reference_model(), mols, opt);
    for (std::size_t i = 0; i < reps.size(); ++i) CHECK(again[i].temperature == reps[i].temperature);
    const auto summary = summarize_jumps(reps);
    REQUIRE(summary.size() == 3);
    CHECK(summary[2].runs == 70);
    CHECK(summary[2].mean_jump_completed.has_value());
  }
}

TEST_CASE("report output") {
  auto st = free_particles(2);
  st.velocities[0] = {0.01, 0, 0};
  MdOptions opt;
  opt.steps = 3;
  const auto r = run_md(st, zero_forces, opt);
  const auto csv = md_series_csv(r);
  CHECK(csv.rfind("step,time,E_total,E_kin,T_kin\n0,0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(md_report_json(r).find("\"max_temp_jump_10fs\"") != std::string::npos);
}
