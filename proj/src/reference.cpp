#include "bsct/reference.hpp"

#include <cmath>
#include <set>

namespace bsct {

double taper(double r, double r_on, double r_c, double* deriv) {
  if (deriv) *deriv = 0.0;
  if (r <= r_on) return 1.0;
  if (r >= r_c) return 0.0;
  const double w = r_c - r_on;
  const double x = (r - r_on) / w;
  const double x2 = x * x, x3 = x2 * x;
  if (deriv) *deriv = (-30.0 * x2 + 60.0 * x3 - 30.0 * x3 * x) / w;
  return 1.0 - 10.0 * x3 + 15.0 * x3 * x - 6.0 * x3 * x2;
}

EnergyForces ReferencePotential::evaluate(const Structure& s) const {
  return evaluate(s.species, s.positions, s.bonds ? *s.bonds : perceive_bonds(s, p_.bond_scale));
}

EnergyForces ReferencePotential::evaluate(const std::vector<int>& z, const std::vector<Vec3>& x,
                                          const std::vector<Bond>& bonds) const {
  const std::size_t n = x.size();
  EnergyForces out;
  out.forces.assign(n, Vec3{0, 0, 0});
  std::set<Bond> bonded;
  for (const auto& [i, j] : bonds) bonded.insert({std::min(i, j), std::max(i, j)});
  const double r_on = p_.taper_onset * p_.cutoff;

  // dE/dr along the pair axis, applied as equal and opposite forces.
  auto apply = [&](std::size_t i, std::size_t j, double dedr, const Vec3& v, double r) {
    for (int c = 0; c < 3; ++c) {
      const double f = dedr * v[c] / r;
      out.forces[i][c] += f;
      out.forces[j][c] -= f;
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const Vec3 v = x[j] - x[i];
      const double r = norm(v);
      const double rsum = covalent_radius(z[i]) + covalent_radius(z[j]);
      if (bonded.count({static_cast<int>(i), static_cast<int>(j)})) {
        const double e = std::exp(-p_.morse_width * (r - rsum));
        out.energy += p_.morse_depth * (1.0 - e) * (1.0 - e);
        apply(i, j, 2.0 * p_.morse_depth * p_.morse_width * (1.0 - e) * e, v, r);
        continue;
      }
      if (r >= p_.cutoff) continue;
      double ds = 0.0;
      const double s = taper(r, r_on, p_.cutoff, &ds);
      const double sr6 = std::pow(p_.lj_sigma_scale * rsum / r, 6);
      const double lj = 4.0 * p_.lj_epsilon * (sr6 * sr6 - sr6);
      const double dlj = 4.0 * p_.lj_epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r;
      out.energy += lj * s;
      apply(i, j, dlj * s + lj * ds, v, r);
    }
  }
  return out;
}

EnergyForces reference_potential(const Structure& s) { return ReferencePotential().evaluate(s); }

}  // namespace bsct
