#include <doctest.h>

#include <cmath>
#include <numbers>

#include "longreg/optimize.hpp"
#include "longreg/synth.hpp"
#include "test_support.hpp"

using namespace longreg;
using namespace longreg::testing;

TEST_CASE("lr_at schedule") {
  const int n = 100;
  const double lr = 0.1;
  CHECK(lr_at(0, n, lr) == doctest::Approx(lr / 20.0));
  CHECK(lr_at(19, n, lr) == doctest::Approx(lr));
  CHECK(lr_at(20, n, lr) == doctest::Approx(lr));  // cos(0)
  CHECK(lr_at(60, n, lr) == doctest::Approx(lr / 2));
  CHECK(lr_at(99, n, lr) == doctest::Approx(lr * 0.5 * (1 + std::cos(std::numbers::pi * 79.0 / 80.0))));
  CHECK(lr_at(99, n, lr) < 1e-3 * lr);
  for (int i = 0; i < n; ++i) CHECK(lr_at(i, n, lr) <= lr * (1 + 1e-15));
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters and decays moments") {
    OptimState st;
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g0{0.5, 0.5}, z{0.0, 0.0};
    adam_step(st, p, g0, 0.1);
    const std::vector<double> after = p;
    const double m = st.m[0], v = st.v[0];
    adam_step(st, p, z, 0.1);
    CHECK(st.m[0] == doctest::Approx(0.9 * m));
    CHECK(st.v[0] == doctest::Approx(0.999 * v));
    // With momentum the parameter still moves; with fresh state it does not.
    OptimState fresh;
    std::vector<double> q{1.0};
    adam_step(fresh, q, std::vector<double>{0.0}, 0.1);
    CHECK(q[0] == 1.0);
    CHECK(after.size() == 2);
  }
  SUBCASE("constant gradient gives steps of size lr") {
    OptimState st;
    std::vector<double> p{0.0};
    for (int i = 0; i < 500; ++i) {
      const double before = p[0];
      adam_step(st, p, std::vector<double>{3.7}, 0.01);
      CHECK(before - p[0] == doctest::Approx(0.01).epsilon(1e-6));
    }
  }
  SUBCASE("quadratic bowl against a scalar reference") {
    const std::vector<double> curv{0.5, 2.0, 10.0};
    std::vector<double> p{1.0, -1.0, 0.3};
    std::vector<double> ref = p, m(3, 0.0), v(3, 0.0);
    OptimState st;
    for (int t = 1; t <= 200; ++t) {
      std::vector<double> g(3);
      for (int i = 0; i < 3; ++i) g[std::size_t(i)] = curv[std::size_t(i)] * p[std::size_t(i)];
      adam_step(st, p, g, 0.05);
      for (std::size_t i = 0; i < 3; ++i) {
        const double gi = curv[i] * ref[i];
        m[i] = 0.9 * m[i] + 0.1 * gi;
        v[i] = 0.999 * v[i] + 0.001 * gi * gi;
        const double mh = m[i] / (1 - std::pow(0.9, t));
        const double vh = v[i] / (1 - std::pow(0.999, t));
        ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
      }
      for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p[i] - ref[i]) <= 1e-12);
    }
    CHECK(st.step == 200);
  }
}

TEST_CASE("config validation") {
  RegistrationConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha_ss = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = RegistrationConfig{};
  cfg.stages.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

namespace {

ImageSeries phantom_pair(int n, bool moved) {
  const GridSpec g = cube(n);
  const Volume base = make_phantom(g, 2);
  ImageSeries s;
  s.images = {base, moved ? warp_volume(base, smooth_random_field(g, 3, 3.0, 1.5)) : base};
  s.mask = foreground_mask(base);
  return s;
}

RegistrationConfig quick_config() {
  RegistrationConfig cfg;
  cfg.stages = {{2, 4, 30, 0.1}, {1, 2, 20, 0.05}};
  return cfg;
}

bool same_params(const Parameters& a, const Parameters& b) {
  if (a.flows.size() != b.flows.size()) return false;
  for (std::size_t k = 0; k < a.flows.size(); ++k) {
    const auto x = a.flows[k].data(), y = b.flows[k].data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
    if (a.rigid[k].angles != b.rigid[k].angles || a.rigid[k].translation != b.rigid[k].translation) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("stage gradient at a stationary point") {
  const ImageSeries s = phantom_pair(12, false);
  RegistrationConfig cfg;
  cfg.stages = {{1, 2, 1, 0.01}};
  const StageProblem problem(s, cfg, cfg.stages[0]);
  Parameters p;
  p.flows = {VectorField(problem.flow_grid())};
  p.rigid = {RigidParams{}};
  Parameters grad;
  problem.loss_and_grad(p, grad);
  for (double x : grad.flows[0].data()) CHECK(std::abs(x) <= 1e-7);
  for (double x : grad.rigid[0].angles) CHECK(std::abs(x) <= 1e-7);
}

TEST_CASE("stage gradient against finite differences with a small step") {
  const ImageSeries s = phantom_pair(10, true);
  RegistrationConfig cfg;
  cfg.stages = {{1, 2, 1, 0.01}};
  const StageProblem problem(s, cfg, cfg.stages[0]);
  Parameters p;
  p.flows = {smooth_random_field(problem.flow_grid(), 4, 1.0, 0.5)};
  p.rigid = {RigidParams{{0.02, -0.01, 0.03}, {0.2, 0.1, -0.3}}};
  Parameters grad;
  problem.loss_and_grad(p, grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.flows[0].data().size(); i += 17) {
    Parameters a = p, b = p;
    a.flows[0].data()[i] += h;
    b.flows[0].data()[i] -= h;
    const double fd = (problem.loss(a).total - problem.loss(b).total) / (2 * h);
    CHECK(grad.flows[0].data()[i] == doctest::Approx(fd).epsilon(1e-4).scale(1e-6));
  }
  for (int r = 0; r < 6; ++r) {
    Parameters a = p, b = p;
    (r < 3 ? a.rigid[0].angles[std::size_t(r)] : a.rigid[0].translation[std::size_t(r - 3)]) += h;
    (r < 3 ? b.rigid[0].angles[std::size_t(r)] : b.rigid[0].translation[std::size_t(r - 3)]) -= h;
    const double fd = (problem.loss(a).total - problem.loss(b).total) / (2 * h);
    const double got = r < 3 ? grad.rigid[0].angles[std::size_t(r)] : grad.rigid[0].translation[std::size_t(r - 3)];
    CHECK(got == doctest::Approx(fd).epsilon(1e-4).scale(1e-6));
  }
}

TEST_CASE("identical images stay near the identity") {
  const ImageSeries s = phantom_pair(24, false);
  const RegistrationResult r = register_series(s, quick_config());
  const VectorField u = r.deformation(1, 0);
  double mean = 0.0;
  for (std::size_t v = 0; v < u.voxel_count(); ++v) {
    const Vec3 x = u[v];
    mean += std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
  }
  CHECK(mean / double(u.voxel_count()) < 0.05);
  const Volume det = r.jacobian_determinant(1, 0);
  for (double d : det.data()) {
    CHECK(d >= 0.98);
    CHECK(d <= 1.02);
  }
}

TEST_CASE("registration is deterministic and resumes exactly") {
  const ImageSeries s = phantom_pair(16, true);
  RegistrationConfig cfg = quick_config();
  cfg.checkpoint_every = 10;
  std::vector<OptimizerSnapshot> snaps;
  RegisterHooks hooks;
  hooks.on_checkpoint = [&](const OptimizerSnapshot& snap) { snaps.push_back(snap); };
  const RegistrationResult a = register_series(s, cfg, hooks);
  const RegistrationResult b = register_series(s, cfg);
  CHECK(same_params(a.params, b.params));
  REQUIRE(snaps.size() >= 3);

  // Resume from a mid-stage snapshot of the first stage.
  RegisterHooks resume;
  resume.resume = snaps[1];
  CHECK(snaps[1].stage == 0);
  CHECK(snaps[1].iteration == 20);
  const RegistrationResult c = register_series(s, cfg, resume);
  CHECK(same_params(a.params, c.params));
  CHECK(c.trace.size() == a.trace.size());
  CHECK(c.trace.back().loss.total == a.trace.back().loss.total);
}

TEST_CASE("recovers a known displacement") {
  // Smooth enough for the flow grid (pooling 2, then sigma 1) to represent.
  const VectorField truth = smooth_random_field(cube(24), 3, 6.0, 1.5);
  const Volume base = make_phantom(cube(24), 2);
  ImageSeries s;
  s.images = {base, warp_volume(base, truth)};
  s.mask = foreground_mask(base);
  const RegistrationResult r = register_series(s, quick_config());
  const VectorField est = r.deformation(0, 1);
  double num = 0.0, den = 0.0;
  for (std::size_t v = 0; v < truth.voxel_count(); ++v)
    if (s.mask[v])
      for (int c = 0; c < 3; ++c) {
        num += std::pow(est.component(v, c) - truth.component(v, c), 2);
        den += std::pow(truth.component(v, c), 2);
      }
  CHECK(num / den < 0.25);
}

TEST_CASE("register_series input checks") {
  ImageSeries one;
  one.images = {Volume(cube(8))};
  CHECK_THROWS_AS(register_series(one, quick_config()), std::invalid_argument);
}
