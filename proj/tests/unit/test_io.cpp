#include <doctest.h>

#include <fstream>
#include <unistd.h>

#include "longreg/errors.hpp"
#include "longreg/io.hpp"
#include "test_support.hpp"

using namespace longreg;
using namespace longreg::testing;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("longreg_unit_io_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Values that survive the float round trip unchanged.
Volume float_volume(const GridSpec& g, std::uint64_t seed) {
  Volume v = random_volume(g, seed);
  for (double& x : v.data()) x = double(float(x));
  return v;
}

}  // namespace

TEST_CASE("MVOL round trips") {
  TempDir tmp;
  GridSpec g = box(5, 4, 3);
  g.spacing = {1.5, 1.0, 0.5};
  g.origin = {-2.0, 0.0, 3.0};

  SUBCASE("f32 volume with metadata") {
    const Volume v = float_volume(g, 1);
    MvolWriteOptions o;
    o.units = "intensity";
    o.time_index = 4;
    o.provenance = {{"seed", 9}};
    write_volume(tmp.path / "a.mvol", v, o);
    CHECK(fs::file_size(tmp.path / "a.mvol") == 4 * 60);
    const Volume r = read_volume(tmp.path / "a.mvol");
    CHECK(r.grid() == g);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(r[i] == v[i]);
    const MvolHeader h = read_mvol_header(tmp.path / "a.mvol");
    CHECK(h.units == "intensity");
    CHECK(h.time_index == 4);
    CHECK(h.provenance["seed"] == 9);
    const json side = read_json_file(mvol_sidecar(tmp.path / "a.mvol"));
    CHECK(side["magic"] == "MVOL1");
    CHECK(side["layout"] == "z-fastest");
    // A second write of the read-back data gives identical bytes.
    write_volume(tmp.path / "b.mvol", r, o);
    std::ifstream fa(tmp.path / "a.mvol", std::ios::binary), fb(tmp.path / "b.mvol", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {}));
  }
  SUBCASE("f64 field is exact") {
    const VectorField f = random_field(g, 2);
    MvolWriteOptions o;
    o.dtype = "f64le";
    write_field(tmp.path / "f.mvol", f, o);
    const VectorField r = read_field(tmp.path / "f.mvol");
    for (std::size_t i = 0; i < f.data().size(); ++i) CHECK(r.data()[i] == f.data()[i]);
  }
  SUBCASE("mask") {
    Mask m(g);
    m.data()[3] = 1;
    m.data()[17] = 1;
    write_mask(tmp.path / "m.mvol", m);
    const Mask r = read_mask(tmp.path / "m.mvol");
    CHECK(r.count() == 2);
    CHECK(r[17]);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(read_volume(tmp.path / "missing.mvol"), InputError);
    write_field(tmp.path / "f.mvol", VectorField(g));
    CHECK_THROWS_AS(read_volume(tmp.path / "f.mvol"), InputError);  // wrong channel count
    write_volume(tmp.path / "t.mvol", Volume(g));
    fs::resize_file(tmp.path / "t.mvol", 10);
    CHECK_THROWS_AS(read_volume(tmp.path / "t.mvol"), InputError);
    write_volume(tmp.path / "h.mvol", Volume(g));
    json side = read_json_file(mvol_sidecar(tmp.path / "h.mvol"));
    side["magic"] = "NOPE";
    write_json_file(mvol_sidecar(tmp.path / "h.mvol"), side);
    CHECK_THROWS_AS(read_volume(tmp.path / "h.mvol"), InputError);
    side["magic"] = "MVOL1";
    side["dtype"] = "i16le";
    write_json_file(mvol_sidecar(tmp.path / "h.mvol"), side);
    CHECK_THROWS_AS(read_volume(tmp.path / "h.mvol"), InputError);
  }
}

TEST_CASE("registration config parsing") {
  SUBCASE("defaults survive a round trip") {
    const RegistrationConfig d;
    const RegistrationConfig r = registration_config_from_json(to_json(d));
    CHECK(to_json(r) == to_json(d));
    CHECK(r.stages.size() == 3);
  }
  SUBCASE("partial configs keep other defaults") {
    const RegistrationConfig r = registration_config_from_json({{"alpha_l2", 0.5}, {"window_radius", 2}});
    CHECK(r.alpha_l2 == 0.5);
    CHECK(r.window_radius == 2);
    CHECK(r.alpha_ss == RegistrationConfig{}.alpha_ss);
  }
  SUBCASE("strict fields") {
    CHECK_THROWS_AS(registration_config_from_json({{"alpha_l3", 1.0}}), InputError);
    CHECK_THROWS_AS(registration_config_from_json({{"alpha_l2", "big"}}), InputError);
    CHECK_THROWS_AS(registration_config_from_json({{"stages", {{{"downsample", 2}, {"bogus", 1}}}}}), InputError);
    CHECK_THROWS(registration_config_from_json({{"alpha_ss", -1.0}}));
  }
}

TEST_CASE("synth config parsing") {
  const SynthConfig d;
  CHECK(to_json(synth_config_from_json(to_json(d))) == to_json(d));
  const SynthConfig s = synth_config_from_json({{"sessions", 5}, {"seed", 3}, {"dims", {8, 9, 10}}});
  CHECK(s.sessions == 5);
  CHECK(s.dims == std::array<int, 3>{8, 9, 10});
  CHECK_THROWS_AS(synth_config_from_json({{"sesions", 5}}), InputError);
}

TEST_CASE("series manifest") {
  TempDir tmp;
  const GridSpec g = cube(4);
  fs::create_directories(tmp.path / "data");
  write_volume(tmp.path / "data/a.mvol", float_volume(g, 1));
  write_volume(tmp.path / "data/b.mvol", float_volume(g, 2));
  Mask m(g, true);
  write_mask(tmp.path / "data/m.mvol", m);

  write_json_file(tmp.path / "data/series.json",
                  {{"sessions", {{{"path", "a.mvol"}, {"time", 0.0}}, {{"path", "b.mvol"}, {"time", 2.5}}}},
                   {"mask", "m.mvol"}});
  const ImageSeries s = read_series_manifest(tmp.path / "data/series.json");
  CHECK(s.images.size() == 2);
  CHECK(s.times == std::vector<double>{0.0, 2.5});
  CHECK(s.mask.count() == g.voxel_count());

  write_json_file(tmp.path / "data/bad.json", {{"sessions", {{{"path", "a.mvol"}}, {{"path", "gone.mvol"}}}}});
  try {
    read_series_manifest(tmp.path / "data/bad.json");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("gone.mvol") != std::string::npos);
  }
  write_json_file(tmp.path / "data/order.json",
                  {{"sessions", {{{"path", "a.mvol"}, {"time", 1.0}}, {{"path", "b.mvol"}, {"time", 1.0}}}}});
  CHECK_THROWS_AS(read_series_manifest(tmp.path / "data/order.json"), InputError);
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp;
  const GridSpec g = cube(5);
  OptimizerSnapshot s;
  s.stage = 1;
  s.iteration = 7;
  s.params.flows = {random_field(g, 1), random_field(g, 2)};
  s.params.rigid = {RigidParams{{0.1, 0.2, 0.3}, {1.0, 2.0, 3.0}}, RigidParams{}};
  for (int k = 0; k < 2; ++k) {
    OptimState f;
    f.m.assign(g.voxel_count() * 3, 0.1 * k + 1e-17);
    f.v.assign(g.voxel_count() * 3, 0.3);
    f.step = 7;
    s.flow_states.push_back(f);
    OptimState r;
    r.m = {1, 2, 3, 4, 5, 6.000000000000001};
    r.v = {1, 1, 1, 1, 1, 1};
    r.step = 7;
    s.rigid_states.push_back(r);
  }
  IterationRecord rec;
  rec.stage = 1;
  rec.iteration = 6;
  rec.lr = 0.0123456789012345;
  rec.loss.total = 0.987654321098765;
  s.trace = {rec};
  save_checkpoint(tmp.path / "ck", s);
  const OptimizerSnapshot r = load_checkpoint(tmp.path / "ck");
  CHECK(r.stage == 1);
  CHECK(r.iteration == 7);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < s.params.flows[k].data().size(); ++i)
      CHECK(r.params.flows[k].data()[i] == s.params.flows[k].data()[i]);
    CHECK(r.flow_states[k].m == s.flow_states[k].m);
    CHECK(r.flow_states[k].v == s.flow_states[k].v);
    CHECK(r.flow_states[k].step == 7);
    CHECK(r.rigid_states[k].m == s.rigid_states[k].m);
    CHECK(r.params.rigid[k].angles == s.params.rigid[k].angles);
  }
  REQUIRE(r.trace.size() == 1);
  CHECK(r.trace[0].lr == rec.lr);
  CHECK(r.trace[0].loss.total == rec.loss.total);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "nothing"), InputError);
}
