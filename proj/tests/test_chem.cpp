#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "testing.hpp"

using namespace bsct;

TEST_CASE("covalent radii come from the Cordero table") {
  CHECK(covalent_radius(1) == doctest::Approx(0.31));
  CHECK(covalent_radius(6) == doctest::Approx(0.76));
  for (int z : {1, 6, 7, 8, 9, 15, 16}) {
    CHECK(covalent_radius(z) > 0.0);
    CHECK(atomic_mass(z) > 0.0);
  }
  CHECK_THROWS_AS(covalent_radius(999), UnsupportedElement);
  CHECK_THROWS_AS(covalent_radius(0), UnsupportedElement);
  CHECK(atomic_number("Cl") == 17);
  CHECK_THROWS_AS(atomic_number("Qq"), UnsupportedElement);
}

TEST_CASE("parse_xyz") {
  SUBCASE("minimal file") {
    const auto s = parse_xyz("1\n\nH 0 0 0");
    CHECK(s.size() == 1);
    CHECK(s.species == std::vector<int>{1});
    CHECK(s.positions[0] == Vec3{0, 0, 0});
    CHECK_FALSE(s.bonds.has_value());
  }
  SUBCASE("water") {
    const auto s = parse_xyz("3\nwater molecule\nO 0 0 0\nH 0.96 0 0\nH -0.24 0.93 0\n");
    CHECK(s.species == std::vector<int>{8, 1, 1});
    CHECK(s.positions[2][0] == doctest::Approx(-0.24));
    CHECK(s.positions[2][1] == doctest::Approx(0.93));
  }
  SUBCASE("count mismatch reports the line") {
    try {
      parse_xyz("4\n\nH 0 0 0\nH 1 0 0\nH 2 0 0\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 5);
    }
  }
  SUBCASE("bad coordinate") {
    try {
      parse_xyz("2\n\nH 0 0 0\nH 1 x 0\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 4);
    }
  }
  SUBCASE("unknown symbol") { CHECK_THROWS_AS(parse_xyz("1\n\nXx 0 0 0\n"), ParseError); }
  SUBCASE("metadata and explicit bonds") {
    const auto s = parse_xyz("3\ntag=w bonds=\"1-0,0-2\" energy=1.5\nO 0 0 0\nH 1 0 0\nH 0 1 0\n");
    CHECK(s.tag == "w");
    REQUIRE(s.bonds.has_value());
    CHECK(*s.bonds == std::vector<Bond>{{0, 1}, {0, 2}});
    CHECK(s.info.at("energy") == "1.5");
  }
  SUBCASE("self bond rejected") { CHECK_THROWS_AS(parse_xyz("2\nbonds=\"1-1\"\nH 0 0 0\nH 1 0 0\n"), ParseError); }
}

TEST_CASE("xyz round trip preserves structures to 12 significant digits") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> zdist(1, 17);
  for (int trial = 0; trial < 50; ++trial) {
    Structure s;
    const std::size_t n = 1 + trial % 9;
    s.positions = testing::random_cloud(rng, n, 10.0);
    for (auto& p : s.positions) p = p - Vec3{5, 5, 5};
    for (std::size_t i = 0; i < n; ++i) s.species.push_back(zdist(rng));
    s.tag = "t" + std::to_string(trial);
    if (trial % 2 == 0 && n > 1) s.bonds = std::vector<Bond>{{0, static_cast<int>(n) - 1}};
    const auto text = to_xyz(s);
    const auto back = parse_xyz(text);
    CHECK(back.species == s.species);
    CHECK(back.tag == s.tag);
    CHECK(back.bonds == s.bonds);
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) CHECK(testing::rel_err(back.positions[i][c], s.positions[i][c], 1e-9) < 1e-11);
    }
    CHECK(to_xyz(back) == text);
  }
}

TEST_CASE("multi-frame parsing") {
  const std::string text = "1\n\nH 0 0 0\n2\n\nH 0 0 0\nH 1 0 0\n";
  const auto frames = parse_xyz_frames(text);
  REQUIRE(frames.size() == 2);
  CHECK(frames[1].size() == 2);
}

TEST_CASE("perceive_bonds") {
  SUBCASE("H2 at 0.74 A is bonded (0.74 < 1.2 * 0.62)") {
    Structure s{{1, 1}, {{0, 0, 0}, {0.74, 0, 0}}, std::nullopt, "h2", {}};
    CHECK(perceive_bonds(s) == std::vector<Bond>{{0, 1}});
  }
  SUBCASE("far apart") {
    Structure s{{1, 1}, {{0, 0, 0}, {10, 0, 0}}, std::nullopt, "", {}};
    CHECK(perceive_bonds(s).empty());
  }
  SUBCASE("explicit bonds pass through") {
    Structure s{{1, 1}, {{0, 0, 0}, {10, 0, 0}}, std::vector<Bond>{{0, 1}}, "", {}};
    CHECK(perceive_bonds(s) == std::vector<Bond>{{0, 1}});
  }
  SUBCASE("scale override") {
    Structure s{{1, 1}, {{0, 0, 0}, {0.74, 0, 0}}, std::nullopt, "", {}};
    CHECK(perceive_bonds(s, 1.0).empty());
  }
}

TEST_CASE("perceive_bonds is consistent under atom relabeling") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> zdist(1, 8);
  for (int trial = 0; trial < 30; ++trial) {
    Structure s;
    const std::size_t n = 8;
    s.positions = testing::random_cloud(rng, n, 3.0);
    for (std::size_t i = 0; i < n; ++i) s.species.push_back(zdist(rng));
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Structure p = s;
    for (std::size_t i = 0; i < n; ++i) {
      p.species[static_cast<std::size_t>(perm[i])] = s.species[i];
      p.positions[static_cast<std::size_t>(perm[i])] = s.positions[i];
    }
    std::vector<Bond> mapped;
    for (auto [i, j] : perceive_bonds(s)) mapped.emplace_back(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    CHECK(canonical_bonds(mapped, n) == perceive_bonds(p));
  }
}

TEST_CASE("load_xyz_dir uses file stems as tags") {
  const auto dir = std::filesystem::temp_directory_path() / "bsct_test_chem_dir";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  write_text_file(dir / "b.xyz", "1\n\nH 0 0 0\n");
  write_text_file(dir / "a.xyz", "2\ntag=ignored\nH 0 0 0\nH 0.7 0 0\n");
  write_text_file(dir / "notes.txt", "not a structure");
  const auto all = load_xyz_dir(dir);
  REQUIRE(all.size() == 2);
  CHECK(all[0].tag == "a");
  CHECK(all[1].tag == "b");
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_xyz_dir(dir), Error);
}
