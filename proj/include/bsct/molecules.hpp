#pragma once

// A handful of small closed-shell molecules with idealized tetrahedral
// geometries (bond lengths at covalent-radii sums).  The same files ship in
// data/molecules for the command-line tools.

#include <string>
#include <vector>

#include "bsct/chem.hpp"

namespace bsct {

std::vector<std::string> builtin_molecule_names();
Structure builtin_molecule(const std::string& name);
std::vector<Structure> builtin_molecules();

}  // namespace bsct
