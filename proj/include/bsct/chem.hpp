#pragma once

// Element data, unit conventions and the molecular structure record shared by
// every other module.  Units: Å, eV, eV/Å, fs, amu, K.

#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bsct {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for all domain errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedElement : public Error {
 public:
  explicit UnsupportedElement(const std::string& what) : Error(what) {}
};

class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

// ---------------------------------------------------------------------------
// Units
// ---------------------------------------------------------------------------

namespace units {
inline constexpr double kBoltzmann = 8.617333262e-5;  // eV/K
// 1 amu·Å²/fs² expressed in eV (1.66053906660e-27 kg · 1e10 m²/s² / 1.602176634e-19 J/eV).
inline constexpr double kAmuA2PerFs2ToEv = 103.642697;
// Acceleration produced by 1 eV/Å acting on 1 amu, in Å/fs² (inverse of the above).
inline constexpr double kAccelEvPerAmuA = 9.64853322e-3;
// e^2 / (4 pi eps0) in eV·Å.
inline constexpr double kCoulombEvA = 14.3996454784;
}  // namespace units

// ---------------------------------------------------------------------------
// Small vector helpers
// ---------------------------------------------------------------------------

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(b - a); }

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

struct Element {
  int atomic_number;
  std::string_view symbol;
  double covalent_radius;  // Å, Cordero et al. 2008 (C: sp3)
  double mass;             // amu
};

/// Largest atomic number with an entry in the embedded table.
inline constexpr int kMaxAtomicNumber = 54;

const Element& element(int atomic_number);
int atomic_number(std::string_view symbol);
double covalent_radius(int atomic_number);
double atomic_mass(int atomic_number);
bool is_supported(int atomic_number) noexcept;

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

using Bond = std::pair<int, int>;

struct Structure {
  std::vector<int> species;
  std::vector<Vec3> positions;
  std::optional<std::vector<Bond>> bonds;  // explicit topology, i < j
  std::string tag;
  std::map<std::string, std::string> info;  // extra key=value metadata

  std::size_t size() const noexcept { return species.size(); }

  /// Throws Error when an invariant is violated.
  void validate() const;
};

/// Returns a copy of `s` with positions replaced.
Structure with_positions(const Structure& s, std::vector<Vec3> positions);

// ---------------------------------------------------------------------------
// XYZ I/O
// ---------------------------------------------------------------------------

/// Parses one (extended) XYZ frame.  The comment line may carry key=value
/// metadata; `tag=` and `bonds="i-j,k-l"` are interpreted, everything else is
/// kept in Structure::info.
Structure parse_xyz(std::string_view text);

/// Parses a concatenation of XYZ frames.
std::vector<Structure> parse_xyz_frames(std::string_view text);

/// Serializes with 12 significant digits.
std::string to_xyz(const Structure& s);

Structure read_xyz_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

/// Loads every *.xyz in `dir` (sorted by filename); tag = filename stem.
std::vector<Structure> load_xyz_dir(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Bonds
// ---------------------------------------------------------------------------

/// Explicit bonds win; otherwise (i, j) is bonded iff
/// |x_i - x_j| < scale * (r_cov(i) + r_cov(j)).  Sorted lexicographically.
std::vector<Bond> perceive_bonds(const Structure& s, double scale = 1.2);

/// Normalizes to i < j and sorts; throws on self bonds or duplicates.
std::vector<Bond> canonical_bonds(std::vector<Bond> bonds, std::size_t n_atoms);

}  // namespace bsct
