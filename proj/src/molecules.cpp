#include "bsct/molecules.hpp"

#include <map>

namespace bsct {

namespace {

const std::map<std::string, const char*>& table() {
  static const std::map<std::string, const char*> t{
      {"dimethyl_ether", R"(9
tag=dimethyl_ether
C 0.000000 0.000000 0.000000
O 1.420000 0.000000 0.000000
C 1.893305 0.000000 -1.338799
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 2.012179 1.008813 -1.675050
H 1.188481 -0.504407 -1.966252
H 2.835878 -0.504407 -1.383848
)"},
      {"ethane", R"(8
tag=ethane
C 0.000000 0.000000 0.000000
C 1.520000 0.000000 0.000000
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 1.876645 0.000000 -1.008813
H 1.876645 -0.873658 0.504407
H 1.876645 0.873658 0.504407
)"},
      {"ethanol", R"(9
tag=ethanol
C 0.000000 0.000000 0.000000
C 1.520000 0.000000 0.000000
O 1.993305 0.000000 -1.338799
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 1.876645 -0.873658 0.504407
H 1.876645 0.873658 0.504407
H 2.101070 0.914532 -1.643624
)"},
      {"ethylamine", R"(10
tag=ethylamine
C 0.000000 0.000000 0.000000
C 1.520000 0.000000 0.000000
N 2.009970 0.000000 -1.385940
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 1.876645 -0.873658 0.504407
H 1.876645 0.873658 0.504407
H 2.123290 0.961672 -1.706478
H 1.338082 -0.480836 -1.984072
)"},
      {"hydrazine", R"(6
tag=hydrazine
N 0.000000 0.000000 0.000000
N 1.420000 0.000000 0.000000
H -0.339980 0.000000 0.961672
H -0.339980 -0.832833 -0.480836
H 1.759980 0.000000 -0.961672
H 1.759980 -0.832833 0.480836
)"},
      {"hydroxylamine", R"(5
tag=hydroxylamine
N 0.000000 0.000000 0.000000
O 1.370000 0.000000 0.000000
H -0.339980 0.000000 0.961672
H -0.339980 -0.832833 -0.480836
H 1.693314 0.000000 -0.914532
)"},
      {"methanethiol", R"(6
tag=methanethiol
C 0.000000 0.000000 0.000000
S 1.810000 0.000000 0.000000
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 2.263306 0.000000 -1.282230
)"},
      {"methanol", R"(6
tag=methanol
C 0.000000 0.000000 0.000000
O 1.420000 0.000000 0.000000
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 1.743314 0.000000 -0.914532
)"},
      {"methoxyamine", R"(8
tag=methoxyamine
C 0.000000 0.000000 0.000000
O 1.420000 0.000000 0.000000
N 1.876639 0.000000 -1.291658
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 1.989959 0.961672 -1.612196
H 1.204751 -0.480836 -1.889790
)"},
      {"methylamine", R"(7
tag=methylamine
C 0.000000 0.000000 0.000000
N 1.470000 0.000000 0.000000
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 1.809980 0.000000 -0.961672
H 1.809980 -0.832833 0.480836
)"},
      {"methylphosphine", R"(7
tag=methylphosphine
C 0.000000 0.000000 0.000000
P 1.830000 0.000000 0.000000
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 2.289972 0.000000 -1.301086
H 2.289972 -1.126774 0.650543
)"},
      {"propane", R"(11
tag=propane
C 0.000000 0.000000 0.000000
C 1.520000 0.000000 0.000000
C 2.026636 0.000000 -1.433081
H -0.356645 0.000000 1.008813
H -0.356645 -0.873658 -0.504407
H -0.356645 0.873658 -0.504407
H 1.876645 -0.873658 0.504407
H 1.876645 0.873658 0.504407
H 2.145511 1.008813 -1.769331
H 1.321812 -0.504407 -2.060533
H 2.969209 -0.504407 -1.478130
)"},
  };
  return t;
}

}  // namespace

std::vector<std::string> builtin_molecule_names() {
  std::vector<std::string> out;
  for (const auto& [name, text] : table()) out.push_back(name);
  return out;
}

Structure builtin_molecule(const std::string& name) {
  const auto it = table().find(name);
  if (it == table().end()) throw Error("unknown builtin molecule: " + name);
  return parse_xyz(it->second);
}

std::vector<Structure> builtin_molecules() {
  std::vector<Structure> out;
  for (const auto& name : builtin_molecule_names()) out.push_back(builtin_molecule(name));
  return out;
}

}  // namespace bsct
