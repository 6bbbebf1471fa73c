#include "bsct/chem.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace bsct {

namespace {

// Covalent radii: Cordero et al., "Covalent radii revisited", Dalton Trans.
// 2008, 2832 (C taken as sp3, Mn/Fe/Co low spin).  Masses: IUPAC standard
// atomic weights.
constexpr std::array<Element, kMaxAtomicNumber + 1> kElements{{
    {0, "X", 0.0, 0.0},
    {1, "H", 0.31, 1.008},
    {2, "He", 0.28, 4.002602},
    {3, "Li", 1.28, 6.94},
    {4, "Be", 0.96, 9.0121831},
    {5, "B", 0.84, 10.81},
    {6, "C", 0.76, 12.011},
    {7, "N", 0.71, 14.007},
    {8, "O", 0.66, 15.999},
    {9, "F", 0.57, 18.998403163},
    {10, "Ne", 0.58, 20.1797},
    {11, "Na", 1.66, 22.98976928},
    {12, "Mg", 1.41, 24.305},
    {13, "Al", 1.21, 26.9815385},
    {14, "Si", 1.11, 28.085},
    {15, "P", 1.07, 30.973761998},
    {16, "S", 1.05, 32.06},
    {17, "Cl", 1.02, 35.45},
    {18, "Ar", 1.06, 39.948},
    {19, "K", 2.03, 39.0983},
    {20, "Ca", 1.76, 40.078},
    {21, "Sc", 1.70, 44.955908},
    {22, "Ti", 1.60, 47.867},
    {23, "V", 1.53, 50.9415},
    {24, "Cr", 1.39, 51.9961},
    {25, "Mn", 1.39, 54.938044},
    {26, "Fe", 1.32, 55.845},
    {27, "Co", 1.26, 58.933194},
    {28, "Ni", 1.24, 58.6934},
    {29, "Cu", 1.32, 63.546},
    {30, "Zn", 1.22, 65.38},
    {31, "Ga", 1.22, 69.723},
    {32, "Ge", 1.20, 72.630},
    {33, "As", 1.19, 74.921595},
    {34, "Se", 1.20, 78.971},
    {35, "Br", 1.20, 79.904},
    {36, "Kr", 1.16, 83.798},
    {37, "Rb", 2.20, 85.4678},
    {38, "Sr", 1.95, 87.62},
    {39, "Y", 1.90, 88.90584},
    {40, "Zr", 1.75, 91.224},
    {41, "Nb", 1.64, 92.90637},
    {42, "Mo", 1.54, 95.95},
    {43, "Tc", 1.47, 98.0},
    {44, "Ru", 1.46, 101.07},
    {45, "Rh", 1.42, 102.90550},
    {46, "Pd", 1.39, 106.42},
    {47, "Ag", 1.45, 107.8682},
    {48, "Cd", 1.44, 112.414},
    {49, "In", 1.42, 114.818},
    {50, "Sn", 1.39, 118.710},
    {51, "Sb", 1.39, 121.760},
    {52, "Te", 1.38, 127.60},
    {53, "I", 1.39, 126.90447},
    {54, "Xe", 1.40, 131.293},
}};

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view tok, double& out) {
  // std::from_chars rejects a leading '+', strtod accepts Fortran-free forms we need.
  std::string buf(tok);
  char* end = nullptr;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size() && !buf.empty() && std::isfinite(out);
}

bool parse_int(std::string_view tok, long& out) {
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

// key=value pairs; values may be double-quoted.  Bare words become key=true.
std::map<std::string, std::string> parse_comment_metadata(std::string_view line) {
  std::map<std::string, std::string> kv;
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
  };
  while (true) {
    skip_ws();
    if (i >= line.size()) break;
    std::size_t k0 = i;
    while (i < line.size() && line[i] != '=' && line[i] != ' ' && line[i] != '\t') ++i;
    std::string key(line.substr(k0, i - k0));
    if (i < line.size() && line[i] == '=') {
      ++i;
      std::string value;
      if (i < line.size() && line[i] == '"') {
        ++i;
        std::size_t v0 = i;
        while (i < line.size() && line[i] != '"') ++i;
        value = std::string(line.substr(v0, i - v0));
        if (i < line.size()) ++i;
      } else {
        std::size_t v0 = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
        value = std::string(line.substr(v0, i - v0));
      }
      kv[key] = value;
    } else if (!key.empty()) {
      kv[key] = "true";
    }
  }
  return kv;
}

std::vector<Bond> parse_bond_list(std::string_view text, int line_no) {
  std::vector<Bond> bonds;
  std::string s(text);
  std::replace(s.begin(), s.end(), ',', ' ');
  for (auto tok : split_ws(s)) {
    const auto dash = tok.find('-');
    long a = 0, b = 0;
    if (dash == std::string_view::npos || !parse_int(tok.substr(0, dash), a) ||
        !parse_int(tok.substr(dash + 1), b)) {
      throw ParseError(line_no, "malformed bond entry '" + std::string(tok) + "'");
    }
    bonds.emplace_back(static_cast<int>(a), static_cast<int>(b));
  }
  return bonds;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);
  return buf;
}

bool needs_quotes(const std::string& v) {
  return v.empty() || v.find_first_of(" \t=") != std::string::npos;
}

// Parses a single frame starting at `lines[start]`; returns the index one past it.
std::size_t parse_frame(const std::vector<std::string_view>& lines, std::size_t start,
                        Structure& out) {
  const int count_line = static_cast<int>(start) + 1;
  long n = 0;
  if (!parse_int(trim(lines[start]), n) || n < 0) {
    throw ParseError(count_line, "expected atom count, got '" + std::string(trim(lines[start])) + "'");
  }
  if (start + 1 >= lines.size()) throw ParseError(count_line + 1, "missing comment line");
  const auto meta = parse_comment_metadata(lines[start + 1]);

  Structure s;
  s.species.reserve(static_cast<std::size_t>(n));
  s.positions.reserve(static_cast<std::size_t>(n));
  for (long a = 0; a < n; ++a) {
    const std::size_t idx = start + 2 + static_cast<std::size_t>(a);
    const int line_no = static_cast<int>(idx) + 1;
    if (idx >= lines.size() || trim(lines[idx]).empty()) {
      // End of input is reported at the last line that was present.
      const int at = idx >= lines.size() ? static_cast<int>(lines.size()) : line_no;
      throw ParseError(at, "expected " + std::to_string(n) + " atom lines, found " +
                                    std::to_string(a));
    }
    const auto toks = split_ws(lines[idx]);
    if (toks.size() < 4) throw ParseError(line_no, "expected 'symbol x y z'");
    int z = 0;
    try {
      z = atomic_number(toks[0]);
    } catch (const UnsupportedElement&) {
      throw ParseError(line_no, "unknown element symbol '" + std::string(toks[0]) + "'");
    }
    Vec3 p{};
    for (int c = 0; c < 3; ++c) {
      if (!parse_double(toks[1 + c], p[c])) {
        throw ParseError(line_no, "unparseable coordinate '" + std::string(toks[1 + c]) + "'");
      }
    }
    s.species.push_back(z);
    s.positions.push_back(p);
  }

  for (const auto& [k, v] : meta) {
    if (k == "tag") {
      s.tag = v;
    } else if (k == "bonds") {
      try {
        s.bonds = canonical_bonds(parse_bond_list(v, count_line + 1), s.size());
      } catch (const ParseError&) {
        throw;
      } catch (const Error& e) {
        throw ParseError(count_line + 1, e.what());
      }
    } else {
      s.info[k] = v;
    }
  }
  out = std::move(s);
  return start + 2 + static_cast<std::size_t>(n);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t i = 0;
  while (i <= text.size()) {
    const auto j = text.find('\n', i);
    if (j == std::string_view::npos) {
      if (i < text.size()) lines.push_back(text.substr(i));
      break;
    }
    lines.push_back(text.substr(i, j - i));
    i = j + 1;
  }
  return lines;
}

}  // namespace

const Element& element(int z) {
  if (!is_supported(z)) {
    throw UnsupportedElement("unsupported element: Z=" + std::to_string(z));
  }
  return kElements[static_cast<std::size_t>(z)];
}

bool is_supported(int z) noexcept { return z >= 1 && z <= kMaxAtomicNumber; }

int atomic_number(std::string_view symbol) {
  for (std::size_t z = 1; z < kElements.size(); ++z) {
    if (kElements[z].symbol == symbol) return static_cast<int>(z);
  }
  throw UnsupportedElement("unsupported element symbol: '" + std::string(symbol) + "'");
}

double covalent_radius(int z) { return element(z).covalent_radius; }
double atomic_mass(int z) { return element(z).mass; }

void Structure::validate() const {
  if (species.size() != positions.size()) {
    throw Error("structure '" + tag + "': species/positions length mismatch");
  }
  for (int z : species) element(z);
  for (const auto& p : positions) {
    for (double c : p) {
      if (!std::isfinite(c)) throw Error("structure '" + tag + "': non-finite position");
    }
  }
  if (bonds) canonical_bonds(*bonds, size());
}

Structure with_positions(const Structure& s, std::vector<Vec3> positions) {
  Structure out = s;
  out.positions = std::move(positions);
  return out;
}

Structure parse_xyz(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError(1, "empty input");
  Structure s;
  const auto next = parse_frame(lines, 0, s);
  for (std::size_t i = next; i < lines.size(); ++i) {
    if (!trim(lines[i]).empty()) {
      throw ParseError(static_cast<int>(i) + 1, "trailing content after declared atoms");
    }
  }
  return s;
}

std::vector<Structure> parse_xyz_frames(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<Structure> frames;
  std::size_t i = 0;
  while (i < lines.size()) {
    if (trim(lines[i]).empty()) {
      ++i;
      continue;
    }
    Structure s;
    i = parse_frame(lines, i, s);
    frames.push_back(std::move(s));
  }
  return frames;
}

std::string to_xyz(const Structure& s) {
  std::ostringstream os;
  os << s.size() << '\n';
  std::vector<std::string> fields;
  if (!s.tag.empty()) fields.push_back("tag=" + (needs_quotes(s.tag) ? '"' + s.tag + '"' : s.tag));
  if (s.bonds) {
    std::string list;
    for (std::size_t b = 0; b < s.bonds->size(); ++b) {
      if (b) list += ',';
      list += std::to_string((*s.bonds)[b].first) + "-" + std::to_string((*s.bonds)[b].second);
    }
    fields.push_back("bonds=\"" + list + "\"");
  }
  for (const auto& [k, v] : s.info) {
    fields.push_back(k + "=" + (needs_quotes(v) ? '"' + v + '"' : v));
  }
  for (std::size_t f = 0; f < fields.size(); ++f) os << (f ? " " : "") << fields[f];
  os << '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << element(s.species[i]).symbol;
    for (double c : s.positions[i]) os << ' ' << format_number(c);
    os << '\n';
  }
  return os.str();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

Structure read_xyz_file(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  try {
    Structure s = parse_xyz(text);
    if (s.tag.empty()) s.tag = path.stem().string();
    return s;
  } catch (const ParseError& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::vector<Structure> load_xyz_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error("not a directory: '" + dir.string() + "'");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".xyz") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Structure> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    Structure s = read_xyz_file(f);
    s.tag = f.stem().string();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Bond> canonical_bonds(std::vector<Bond> bonds, std::size_t n_atoms) {
  for (auto& [i, j] : bonds) {
    if (i == j) throw Error("self bond on atom " + std::to_string(i));
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= n_atoms ||
        static_cast<std::size_t>(j) >= n_atoms) {
      throw Error("bond index out of range: " + std::to_string(i) + "-" + std::to_string(j));
    }
    if (i > j) std::swap(i, j);
  }
  std::sort(bonds.begin(), bonds.end());
  if (std::adjacent_find(bonds.begin(), bonds.end()) != bonds.end()) {
    throw Error("duplicate bond in bond list");
  }
  return bonds;
}

std::vector<Bond> perceive_bonds(const Structure& s, double scale) {
  if (s.bonds) return *s.bonds;
  std::vector<Bond> bonds;
  const auto n = s.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ri = covalent_radius(s.species[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      const double cutoff = scale * (ri + covalent_radius(s.species[j]));
      if (distance(s.positions[i], s.positions[j]) < cutoff) {
        bonds.emplace_back(static_cast<int>(i), static_cast<int>(j));
      }
    }
  }
  return bonds;
}

}  // namespace bsct
