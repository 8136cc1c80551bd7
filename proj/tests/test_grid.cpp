#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mmrd/grid.hpp"

using namespace mmrd;

TEST_CASE("default spacing follows the data range") {
  Mat x1(3, 1);
  x1 << -0.5, 0.1, 0.5;
  CHECK(default_grid_spacing(x1, 1) == Catch::Approx(0.01));

  Mat x2(3, 2);
  x2 << -1, 0, 0.3, 0.5, 1, 0.2;
  CHECK(default_grid_spacing(x2, 2) == Catch::Approx(2.0 / 40.0));  // widest axis

  Mat flat(2, 1);
  flat << 1.0, 1.0;
  CHECK_THROWS_AS(default_grid_spacing(flat, 1), Error);
}

TEST_CASE("lattice covers the padded bounding box") {
  Vec c(1);
  c << 0;
  Mat x(2, 1);
  x << -0.37, 0.41;
  Grid g = build_lattice(x, c, 0.1);
  CHECK(g.lo[0] == -5);  // floor(-3.7) - 1
  CHECK(g.hi[0] == 6);   // ceil(4.1) + 1
  CHECK(g.size() == 12);
  CHECK(g.point(0)[0] == Catch::Approx(-0.5));
  CHECK(g.point(g.size() - 1)[0] == Catch::Approx(0.6));

  SECTION("one-sided data still includes both anchor nodes") {
    Mat right(2, 1);
    right << 0.2, 0.5;
    Grid gr = build_lattice(right, c, 0.1);
    CHECK(gr.lo[0] == -1);
    CHECK(gr.hi[0] == 6);
  }

  SECTION("node cap turns into an actionable error") {
    try {
      build_lattice(x, c, 1e-7);
      FAIL("expected the cap to trip");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Design);
      CHECK(std::string(e.what()).find("grid spacing") != std::string::npos);
    }
  }
}

TEST_CASE("multi-index linearization round-trips") {
  Grid g;
  g.dim = 2;
  g.h = 0.5;
  g.c.resize(2);
  g.c << 1.0, -1.0;
  g.lo.resize(2);
  g.lo << -2, -3;
  g.hi.resize(2);
  g.hi << 2, 1;
  REQUIRE(g.size() == 25);
  for (Eigen::Index lin = 0; lin < g.size(); ++lin) {
    IntVec j = g.multi(lin);
    REQUIRE(g.contains(j));
    CHECK(g.linear(j) == lin);
  }
  IntVec j(2);
  j << 1, -2;
  Vec p = g.point(g.linear(j));
  CHECK(p[0] == Catch::Approx(1.5));
  CHECK(p[1] == Catch::Approx(-2.0));
  IntVec outside(2);
  outside << 3, 0;
  CHECK_FALSE(g.contains(outside));
}

TEST_CASE("nearest node rounds half-cells down and clamps") {
  Grid g;
  g.dim = 1;
  g.h = 1.0;
  g.c = Vec::Zero(1);
  g.lo.resize(1);
  g.lo << -2;
  g.hi.resize(1);
  g.hi << 2;
  auto at = [&](double v) {
    Vec x(1);
    x << v;
    return g.multi(g.nearest(x))[0];
  };
  CHECK(at(0.0) == 0);
  CHECK(at(0.49) == 0);
  CHECK(at(0.5) == 0);    // tie: toward the smaller coordinate
  CHECK(at(-0.5) == -1);  // tie on the negative side too
  CHECK(at(0.51) == 1);
  CHECK(at(10.0) == 2);   // clamped to the lattice
  CHECK(at(-10.0) == -2);
}

TEST_CASE("focal node and its axis offsets") {
  Grid g;
  g.dim = 2;
  g.h = 1.0;
  g.c = Vec::Zero(2);
  g.lo.resize(2);
  g.lo << -2, -2;
  g.hi.resize(2);
  g.hi << 2, 2;
  CHECK(g.focal_index() == 12);  // center of a 5x5 block, row-major
  auto off = g.focal_offset_indices();
  REQUIRE(off.size() == 2);
  CHECK(off[0] == 17);  // (1, 0)
  CHECK(off[1] == 13);  // (0, 1)
  CHECK(g.point(off[0])[0] == Catch::Approx(1.0));
  CHECK(g.point(off[1])[1] == Catch::Approx(1.0));
}

TEST_CASE("direction sets and their angular slack") {
  DirectionSet d1 = direction_set(1, DirectionChoice::Coarse);
  REQUIRE(d1.v.size() == 1);
  CHECK(alpha_squared(d1, 1) == 0.0);

  DirectionSet coarse = direction_set(2, DirectionChoice::Coarse);
  REQUIRE(coarse.v.size() == 4);
  // axes plus both diagonals: maximal gap 45 degrees, slack sin^2(22.5 deg)
  CHECK(alpha_squared(coarse, 2) == Catch::Approx(0.1464466094).epsilon(1e-8));

  DirectionSet fine = direction_set(2, DirectionChoice::Fine);
  REQUIRE(fine.v.size() == 8);
  const double a2 = alpha_squared(fine, 2);
  // largest gap is 45 deg - atan(2/5)
  const double gap = std::atan(1.0) - std::atan(2.0 / 5.0);
  CHECK(a2 == Catch::Approx(std::pow(std::sin(gap / 2.0), 2)).epsilon(1e-10));
  CHECK(a2 <= 0.05);
  CHECK(a2 >= 0.5 * 0.1464466094 * 0.5);  // meaningfully positive

  CHECK_THROWS_AS(direction_set(3, DirectionChoice::Coarse), Error);
}

TEST_CASE("curvature rows enumerate interior second differences") {
  Vec c(1);
  c << 0;
  Grid g;
  g.dim = 1;
  g.h = 0.25;
  g.c = c;
  g.lo.resize(1);
  g.lo << -2;
  g.hi.resize(1);
  g.hi << 2;
  auto rows = curvature_rows(g, direction_set(1, DirectionChoice::Coarse));
  REQUIRE(rows.size() == 3);  // centers -1, 0, 1
  for (const auto& r : rows) {
    CHECK(r.hv_norm_sq == Catch::Approx(0.0625));
    CHECK(r.plus - r.center == r.center - r.minus);
  }
  CHECK(rows[0].center == 1);
  CHECK(rows[2].center == 3);

  SECTION("two dimensions, coarse directions") {
    Grid g2;
    g2.dim = 2;
    g2.h = 1.0;
    g2.c = Vec::Zero(2);
    g2.lo.resize(2);
    g2.lo << -2, -2;
    g2.hi.resize(2);
    g2.hi << 2, 2;
    auto r2 = curvature_rows(g2, direction_set(2, DirectionChoice::Coarse));
    // (1,0): 3x5, (0,1): 5x3, diagonals: 3x3 each
    CHECK(r2.size() == 15 + 15 + 9 + 9);
    // diagonal rows scale with |v|^2 = 2
    CHECK(r2.back().hv_norm_sq == Catch::Approx(2.0));
  }
}
