#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "longreg/grid.hpp"
#include "test_support.hpp"

using namespace longreg;
using namespace longreg::testing;

TEST_CASE("sample_trilinear basics") {
  const GridSpec g = cube(6);
  const Volume vol = random_volume(g, 1);

  SUBCASE("identity positions reproduce the volume bitwise") {
    const Volume out = sample_trilinear(vol, identity_positions(g));
    for (std::size_t v = 0; v < vol.size(); ++v) CHECK(out[v] == vol[v]);
  }
  SUBCASE("constant volume stays constant") {
    const Volume c(g, 2.5);
    const VectorField pts = random_field(g, 2, -1.0, 7.0);
    const Volume out = sample_trilinear(c, pts);
    for (double x : out.data()) CHECK(x == doctest::Approx(2.5).epsilon(1e-14));
  }
  SUBCASE("two-voxel line") {
    Volume line(box(2, 1, 1));
    line[1] = 1.0;
    VectorField p(box(1, 1, 1), Vec3{0.25, 0.0, 0.0});
    CHECK(sample_trilinear(line, p)[0] == doctest::Approx(0.25));
  }
  SUBCASE("out of range positions clamp to the edge") {
    VectorField p(box(1, 1, 1), Vec3{-3.0, 2.0, 99.0});
    CHECK(sample_trilinear(vol, p)[0] == vol.at(0, 2, 5));
  }
  SUBCASE("non-finite positions are rejected") {
    VectorField p(box(1, 1, 1), Vec3{NAN, 0.0, 0.0});
    CHECK_THROWS(sample_trilinear(vol, p));
  }
}

TEST_CASE("warp_field agrees with a per-voxel oracle") {
  const GridSpec g = cube(8);
  const VectorField field = smooth_random_field(g, 3, 1.5, 2.0);
  const VectorField deform = smooth_random_field(g, 4, 1.5, 2.5);
  const VectorField out = warp_field(field, deform);
  for (std::size_t v = 0; v < g.voxel_count(); ++v) {
    const auto c = g.coords(v);
    const Vec3 d = deform[v];
    const Vec3 expect = naive_sample3(field, c[0] + d[0], c[1] + d[1], c[2] + d[2]);
    for (int k = 0; k < 3; ++k) CHECK(out.component(v, k) == doctest::Approx(expect[std::size_t(k)]).epsilon(1e-12));
  }
  SUBCASE("zero displacement is the identity") {
    const VectorField same = warp_field(field, VectorField(g));
    for (std::size_t i = 0; i < field.data().size(); ++i) CHECK(same.data()[i] == field.data()[i]);
  }
  SUBCASE("grid mismatch") { CHECK_THROWS_AS(warp_field(field, VectorField(cube(7))), std::invalid_argument); }
}

TEST_CASE("warp_volume matches naive sampling") {
  const GridSpec g = box(7, 5, 6);
  const Volume vol = random_volume(g, 5);
  const VectorField disp = random_field(g, 6, -2.0, 2.0);
  const Volume out = warp_volume(vol, disp);
  for (std::size_t v = 0; v < g.voxel_count(); ++v) {
    const auto c = g.coords(v);
    const Vec3 d = disp[v];
    CHECK(out[v] == doctest::Approx(naive_sample(vol, c[0] + d[0], c[1] + d[1], c[2] + d[2])).epsilon(1e-12));
  }
}

TEST_CASE("jacobian_fd") {
  const GridSpec g = cube(7);
  SUBCASE("linear field") {
    VectorField f(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) f.set(v, {0.1 * g.coords(v)[0], 0.0, 0.0});
    const JacobianField j = jacobian_fd(f);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      CHECK(j.entry(v, 0, 0) == doctest::Approx(0.1));
      CHECK(j.entry(v, 1, 1) == 0.0);
    }
  }
  SUBCASE("quadratic polynomial against its symbolic derivative") {
    // Central differences are exact for quadratics in the interior.
    auto u = [](double x, double y, double z) {
      return Vec3{0.01 * x * x + 0.02 * x * y, 0.03 * y * z - 0.01 * z * z, 0.005 * x * z + 0.1 * y};
    };
    auto du = [](double x, double y, double z) {
      return Mat3{0.02 * x + 0.02 * y, 0.02 * x, 0.0, 0.0, 0.03 * z, 0.03 * y - 0.02 * z, 0.005 * z, 0.1, 0.005 * x};
    };
    VectorField f(g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      const auto c = g.coords(v);
      f.set(v, u(c[0], c[1], c[2]));
    }
    const JacobianField j = jacobian_fd(f);
    for (int x = 1; x < 6; ++x)
      for (int y = 1; y < 6; ++y)
        for (int z = 1; z < 6; ++z) {
          const Mat3 expect = du(x, y, z);
          const Mat3 got = j[g.index(x, y, z)];
          for (std::size_t k = 0; k < 9; ++k) CHECK(std::abs(got[k] - expect[k]) < 1e-6);
        }
  }
  SUBCASE("needs two samples per axis") { CHECK_THROWS(jacobian_fd(VectorField(box(1, 4, 4)))); }
}

TEST_CASE("jacobian_det") {
  const GridSpec g = cube(6);
  const Volume one = jacobian_det(VectorField(g));
  for (double d : one.data()) CHECK(d == 1.0);
  VectorField scale(g);
  for (std::size_t v = 0; v < g.voxel_count(); ++v) {
    const auto c = g.coords(v);
    scale.set(v, {0.1 * c[0], 0.1 * c[1], 0.1 * c[2]});
  }
  const Volume det = jacobian_det(scale);
  CHECK(det.at(2, 3, 2) == doctest::Approx(1.1 * 1.1 * 1.1));
}

TEST_CASE("downsample") {
  SUBCASE("factor 1 is the identity") {
    const Volume v = random_volume(cube(5), 7);
    const Volume d = downsample(v, 1);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(d[i] == v[i]);
  }
  SUBCASE("constant block") {
    const Volume d = downsample(Volume(cube(2), 3.0), 2);
    REQUIRE(d.size() == 1);
    CHECK(d[0] == 3.0);
  }
  SUBCASE("block means, including partial edge blocks") {
    const GridSpec g = box(5, 4, 3);
    const Volume v = random_volume(g, 8);
    const Volume d = downsample(v, 2);
    CHECK(d.grid().dims == std::array<int, 3>{3, 2, 2});
    CHECK(d.grid().spacing[0] == 2.0);
    for (int X = 0; X < 3; ++X)
      for (int Y = 0; Y < 2; ++Y)
        for (int Z = 0; Z < 2; ++Z) {
          double s = 0.0;
          int n = 0;
          for (int x = 2 * X; x < std::min(5, 2 * X + 2); ++x)
            for (int y = 2 * Y; y < std::min(4, 2 * Y + 2); ++y)
              for (int z = 2 * Z; z < std::min(3, 2 * Z + 2); ++z) {
                s += v.at(x, y, z);
                ++n;
              }
          CHECK(d.at(X, Y, Z) == doctest::Approx(s / n).epsilon(1e-14));
        }
  }
  SUBCASE("bad factor") { CHECK_THROWS_AS(downsample(Volume(cube(2)), 0), std::invalid_argument); }
}

TEST_CASE("upsample_field") {
  const GridSpec fine = cube(8);
  const GridSpec coarse = downsampled_grid(fine, 2);

  SUBCASE("same grid is the identity") {
    const VectorField f = random_field(fine, 9);
    const VectorField u = upsample_field(f, fine);
    for (std::size_t i = 0; i < f.data().size(); ++i) CHECK(u.data()[i] == doctest::Approx(f.data()[i]));
  }
  SUBCASE("constant coarse field doubles in fine voxels") {
    const VectorField u = upsample_field(VectorField(coarse, Vec3{1.0, -0.5, 0.25}), fine);
    for (std::size_t v = 0; v < fine.voxel_count(); ++v) {
      const Vec3 x = u[v];
      CHECK(x[0] == doctest::Approx(2.0));
      CHECK(x[1] == doctest::Approx(-1.0));
      CHECK(x[2] == doctest::Approx(0.5));
    }
  }
  SUBCASE("sample-then-scale oracle") {
    const VectorField f = random_field(coarse, 10);
    const VectorField u = upsample_field(f, fine);
    for (std::size_t v = 0; v < fine.voxel_count(); ++v) {
      const auto c = fine.coords(v);
      // World position of the fine voxel in coarse voxel coordinates.
      Vec3 p;
      for (std::size_t a = 0; a < 3; ++a)
        p[a] = (fine.origin[a] + c[a] * fine.spacing[a] - coarse.origin[a]) / coarse.spacing[a];
      const Vec3 s = naive_sample3(f, p[0], p[1], p[2]);
      for (int k = 0; k < 3; ++k) CHECK(u.component(v, k) == doctest::Approx(2.0 * s[std::size_t(k)]).epsilon(1e-12));
    }
  }
  SUBCASE("downsample then upsample keeps constants") {
    const Volume c(fine, 1.7);
    const Volume d = downsample(c, 2);
    for (double x : d.data()) CHECK(x == doctest::Approx(1.7));
  }
}

TEST_CASE("grid validation") {
  GridSpec g;
  g.spacing = {1.0, 0.0, 1.0};
  CHECK_THROWS_AS(g.validate(), std::invalid_argument);
  CHECK_THROWS_AS(require_same_grid(cube(3), cube(4), "test"), std::invalid_argument);
}
