#pragma once

// Analytic reference potential standing in for quantum-chemistry labels:
// Morse terms on a fixed bond topology plus Lennard-Jones between all other
// pairs, the latter tapered smoothly to zero at the cutoff.

#include <vector>

#include "bsct/chem.hpp"

namespace bsct {

struct EnergyForces {
  double energy = 0.0;
  std::vector<Vec3> forces;
};

struct ReferenceParams {
  double morse_depth = 4.0;      // eV
  double morse_width = 2.0;      // 1/A
  double lj_epsilon = 0.01;      // eV
  double lj_sigma_scale = 0.9;   // sigma = scale * (r_i + r_j)
  double cutoff = 6.0;           // A
  double taper_onset = 0.8;      // fraction of the cutoff
  double bond_scale = 1.2;       // perception threshold when no bonds are given
};

/// Quintic switch: 1 below r_on, 0 above r_c, C2 in between.  Returns the
/// value and stores dS/dr in `deriv`.
double taper(double r, double r_on, double r_c, double* deriv = nullptr);

class ReferencePotential {
 public:
  explicit ReferencePotential(ReferenceParams p = {}) : p_(p) {}

  /// Uses s.bonds when present, otherwise perceives them.
  EnergyForces evaluate(const Structure& s) const;
  EnergyForces evaluate(const std::vector<int>& species, const std::vector<Vec3>& x,
                        const std::vector<Bond>& bonds) const;

  const ReferenceParams& params() const noexcept { return p_; }

 private:
  ReferenceParams p_;
};

EnergyForces reference_potential(const Structure& s);

}  // namespace bsct
