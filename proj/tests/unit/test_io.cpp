#include <cmath>
#include <filesystem>
#include <limits>

#include "bamd/errors.hpp"
#include "bamd/io.hpp"
#include "bamd/rng.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using namespace bamd;
using Eigen::Index;

TEST_SUITE("io") {
  TEST_CASE("format_double round-trips every bit pattern it is given") {
    Rng rng = make_rng(3);
    for (int k = 0; k < 2000; ++k) {
      const double x = std::ldexp(standard_normal(rng), static_cast<int>(rng() % 200) - 100);
      CHECK(io::parse_double(io::format_double(x), "t") == x);
    }
    CHECK(io::format_double(0.1) == "0.1");
    CHECK(io::format_double(15.0) == "15");
    CHECK(io::parse_double(io::format_double(std::numeric_limits<double>::denorm_min()), "t") ==
          std::numeric_limits<double>::denorm_min());
  }

  TEST_CASE("numeric parsing rejects junk") {
    CHECK_THROWS_AS(io::parse_double("1.5x", "ctx"), DataError);
    CHECK_THROWS_AS(io::parse_double("", "ctx"), DataError);
    CHECK_THROWS_AS(io::parse_int("3.0", "ctx"), DataError);
    CHECK(io::parse_int(" -7 ", "ctx") == -7);
  }

  TEST_CASE("split and trim") {
    const auto f = io::split("a, b,,c");
    REQUIRE(f.size() == 4);
    CHECK(f[2].empty());
    CHECK(io::trim("  x y\t") == "x y");
    CHECK(io::trim("   ").empty());
  }

  TEST_CASE("csv skips manifest comments and blank lines") {
    const auto t = io::parse_csv("# seed=1\n\nid,v\n# inner\na,1\nb,2\n", "mem");
    REQUIRE(t.header.size() == 2);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[1][0] == "b");
    CHECK_THROWS_AS(io::parse_csv("id,v\na,1,2\n", "mem"), DataError);
  }

  TEST_CASE("sha256 of a known message") {
    const auto path = fs::temp_directory_path() / "bamd_io_sha.txt";
    io::write_file(path, "abc");
    CHECK(io::sha256_file(path) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(io::read_file(path) == "abc");
    fs::remove(path);
    CHECK_THROWS_AS(io::read_file(path), DataError);
  }
}
