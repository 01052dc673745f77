// Acceptance suite. Usage: longreg_acceptance [criterion ...] (default: all).
// Prints one PASS/FAIL line per criterion; exit status is nonzero if any fail.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "longreg/diffeo.hpp"
#include "longreg/evalmetrics.hpp"
#include "longreg/io.hpp"
#include "longreg/objective.hpp"
#include "longreg/optimize.hpp"
#include "longreg/similarity.hpp"
#include "longreg/synth.hpp"
#include "test_support.hpp"

using namespace longreg;
using namespace longreg::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

double mean_norm_in(const VectorField& f, const Mask& m) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < f.voxel_count(); ++v)
    if (m[v]) {
      const Vec3 u = f[v];
      s += std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
      ++n;
    }
  return s / double(n);
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("longreg_acceptance_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1. Reverse-mode gradient of the full loss against central differences.
Outcome gradient_oracle() {
  const GridSpec g = cube(12);
  const Volume base = make_phantom(g, 7);
  const VectorField motion = smooth_random_field(g, 11, 2.0, 1.0);
  Volume moved = warp_volume(base, motion);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (std::size_t v = 0; v < moved.size(); ++v) moved[v] = 1.1 * moved[v] + 0.05 + noise(rng);
  ImageSeries series;
  series.images = {base, moved};

  RegistrationConfig cfg;
  cfg.stages = {{1, 2, 1, 0.01}};
  cfg.alpha_l2 = 0.1;
  const StageProblem problem(series, cfg, cfg.stages[0]);
  Parameters p;
  p.flows = {smooth_random_field(problem.flow_grid(), 3, 1.0, 0.6)};
  p.rigid = {RigidParams{{0.03, -0.02, 0.04}, {0.3, -0.2, 0.1}}};
  Parameters grad;
  problem.loss_and_grad(p, grad);

  // Component ids: flow entries first, then the six rigid parameters.
  const std::size_t n_flow = p.flows[0].data().size();
  std::vector<std::size_t> ids(n_flow);
  for (std::size_t i = 0; i < n_flow; ++i) ids[i] = i;
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(250);
  for (std::size_t r = 0; r < 6; ++r) ids.push_back(n_flow + r);

  auto slot = [&](Parameters& q, std::size_t id) -> double& {
    if (id < n_flow) return q.flows[0].data()[id];
    const std::size_t r = id - n_flow;
    return r < 3 ? q.rigid[0].angles[r] : q.rigid[0].translation[r - 3];
  };
  auto check = [&](double h, double& worst_rel) {
    int bad = 0;
    for (std::size_t id : ids) {
      Parameters q = p;
      const double x0 = slot(q, id);
      slot(q, id) = x0 + h;
      const double lp = problem.loss(q).total;
      slot(q, id) = x0 - h;
      const double lm = problem.loss(q).total;
      const double fd = (lp - lm) / (2 * h);
      const double abs_err = std::abs(slot(grad, id) - fd);
      const double rel_err = abs_err / std::max(std::abs(fd), 1e-300);
      if (!(abs_err <= 1e-6 || rel_err <= 1e-3)) {
        ++bad;
        worst_rel = std::max(worst_rel, rel_err);
      }
    }
    return bad;
  };
  double worst = 0.0, worst_small = 0.0;
  const int bad = check(1e-3, worst);
  // Same comparison with a step small enough to stay inside one interpolation cell.
  const int bad_small = check(1e-5, worst_small);
  return {bad == 0, std::to_string(ids.size()) + " components; h=1e-3: " + std::to_string(bad) +
                        " outside tolerance (worst rel " + fmt(worst) + "); h=1e-5: " + std::to_string(bad_small) +
                        " outside"};
}

// 2. Positive Jacobians and inverse consistency of Exp. Smoothing widths
// cycle through 1..16 voxels, every flow scaled to a maximum of 3 voxels.
Outcome diffeomorphism() {
  const GridSpec g = cube(24);
  const std::vector<double> sigmas{1.0, 2.0, 4.0, 8.0, 16.0};
  std::vector<double> worst_by_sigma(sigmas.size(), 0.0);
  int nonpositive = 0;
  for (int s = 0; s < 50; ++s) {
    const std::size_t si = std::size_t(s) % sigmas.size();
    const VectorField phi = smooth_random_field(g, 100 + std::uint64_t(s), sigmas[si], 3.0);
    const VectorField fwd = exp_flow(phi);
    const VectorField bwd = invert_flow_exp(phi);
    const Volume det = jacobian_det(fwd);
    for (double d : det.data()) nonpositive += d <= 0.0;
    const VectorField comp = bwd + warp_field(fwd, bwd);
    for (int x = 2; x < 22; ++x)
      for (int y = 2; y < 22; ++y)
        for (int z = 2; z < 22; ++z) {
          const Vec3 c = comp[g.index(x, y, z)];
          worst_by_sigma[si] = std::max({worst_by_sigma[si], std::abs(c[0]), std::abs(c[1]), std::abs(c[2])});
        }
  }
  const double worst = *std::max_element(worst_by_sigma.begin(), worst_by_sigma.end());
  std::string detail = "non-positive det voxels " + std::to_string(nonpositive) + "; max interior inverse residual";
  for (std::size_t i = 0; i < sigmas.size(); ++i)
    detail += " sigma " + fmt(sigmas[i]) + ": " + fmt(worst_by_sigma[i], 3) + (i + 1 < sigmas.size() ? "," : "");
  return {nonpositive == 0 && worst < 0.05, detail + " voxel (bound 0.05)"};
}

// 3. Scaling and squaring against dense Euler integration of dx/dt = phi(x).
Outcome exp_vs_ode() {
  const GridSpec g = cube(16);
  double worst_default = 0.0, worst_n7 = 0.0;
  for (int s = 0; s < 4; ++s) {
    const VectorField phi = smooth_random_field(g, 200 + std::uint64_t(s), 2.0, 2.0);
    VectorField u(g);
    const int steps = 512;
    for (int t = 0; t < steps; ++t) {
      VectorField next = u;
      for (std::size_t v = 0; v < g.voxel_count(); ++v) {
        const auto c = g.coords(v);
        const Vec3 d = u[v];
        const Vec3 vel = naive_sample3(phi, c[0] + d[0], c[1] + d[1], c[2] + d[2]);
        next.set(v, {d[0] + vel[0] / steps, d[1] + vel[1] / steps, d[2] + vel[2] / steps});
      }
      u = std::move(next);
    }
    auto rms = [&](const VectorField& e) {
      double s2 = 0.0;
      for (std::size_t i = 0; i < e.data().size(); ++i) s2 += std::pow(e.data()[i] - u.data()[i], 2);
      return std::sqrt(s2 / double(g.voxel_count()));
    };
    worst_default = std::max(worst_default, rms(exp_flow(phi)));
    worst_n7 = std::max(worst_n7, rms(exp_flow(phi, 7)));
  }
  return {worst_default < 0.02 && worst_n7 < 0.02,
          "RMS vs 512-step Euler: adaptive n " + fmt(worst_default) + ", n=7 " + fmt(worst_n7) + " voxel"};
}

// 4. Monte-Carlo E[LNCC] against the closed form.
Outcome lncc_expectation() {
  const std::vector<double> cnr{0.5, 1.0, 2.0, 4.0};
  const auto r9 = mc_lncc_expectation(cnr, 1.0, 9, 100000, 1);
  const auto r27 = mc_lncc_expectation(cnr, 1.0, 27, 100000, 2);
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < cnr.size(); ++i) {
    ok = ok && std::abs(r9[i].residual) <= 0.02 && std::abs(r27[i].residual) < std::abs(r9[i].residual);
    detail += "cnr " + fmt(cnr[i]) + ": |R|=9 " + fmt(r9[i].residual, 3) + ", |R|=27 " + fmt(r27[i].residual, 3) +
              (i + 1 < cnr.size() ? "; " : "");
  }
  return {ok, detail};
}

// 5. Offset landscape at offset 2: LNCC falls and SiLNCC rises with CNR.
Outcome offset_monotonicity() {
  const std::vector<double> cnr{0.5, 1.0, 2.0, 4.0};
  const std::vector<double> offsets{2.0};
  const auto l = mc_offset_landscape(Metric::lncc, cnr, offsets, 4000, 3);
  const auto s = mc_offset_landscape(Metric::silncc, cnr, offsets, 4000, 4);
  bool ok = true;
  std::string dl = "LNCC", ds = "SiLNCC";
  for (std::size_t i = 0; i < cnr.size(); ++i) {
    if (i > 0) ok = ok && l[i].mean < l[i - 1].mean && s[i].mean > s[i - 1].mean;
    dl += " " + fmt(l[i].mean);
    ds += " " + fmt(s[i].mean);
  }
  return {ok, dl + " | " + ds + " (cnr 0.5,1,2,4)"};
}

// 6. SiLNCC of an exact affine copy vanishes.
Outcome silncc_invariance() {
  const GridSpec g = cube(24);
  const Volume a = make_phantom(g, 1);
  double worst = 0.0;
  bool ok = true;
  for (double c : {0.5, 1.0, 2.0})
    for (double d : {-1.0, 0.0, 3.0}) {
      Volume b(g);
      for (std::size_t v = 0; v < b.size(); ++v) b[v] = c * a[v] + d;
      double mean = 0.0;
      for (double x : b.data()) mean += x;
      mean /= double(b.size());
      double var = 0.0;
      for (double x : b.data()) var += (x - mean) * (x - mean);
      var /= double(b.size());
      const double loss = silncc(a, b, 1, default_epsilon(a)).loss;
      ok = ok && loss <= 1e-9 * var;
      worst = std::max(worst, loss / var);
    }
  return {ok, "max loss / mean(centered b^2) = " + fmt(worst)};
}

SynthConfig synthetic(int n, int sessions, double sigma_v) {
  SynthConfig s;
  s.dims = {n, n, n};
  s.sessions = sessions;
  s.sigma_v = sigma_v;
  // Slowly varying velocity so the displacement builds up coherently over the series.
  s.omega_t = 0.01;
  return s;
}

// 7. Synthetic recovery on a 48^3, 8-session series.
Outcome synthetic_recovery() {
  const SynthConfig sc = synthetic(48, 8, 0.3);
  const Volume base = make_phantom(sc.grid(), sc.phantom_seed);
  const SynthSeries s = make_series(base, sc, 1);
  const RegistrationResult r = register_series(s.series, RegistrationConfig{});
  const VectorField est = r.deformation(0, 7);
  const double pcc = vector_pcc(s.truth[7], est, &s.series.mask);
  const BiasFit fit = bias_slope(s.truth[7], est, &s.series.mask);
  const double eu = eu_distance(s.truth[7], est, &s.series.mask);
  return {pcc >= 0.7 && fit.slope >= 0.75, "first-to-last field: PCC " + fmt(pcc) + ", B " + fmt(fit.slope) +
                                               ", Eu " + fmt(eu) + " mm, truth mean |u| " +
                                               fmt(mean_norm_in(s.truth[7], s.series.mask)) + " voxel"};
}

RegistrationConfig reduced_config() {
  RegistrationConfig cfg;
  cfg.stages = {{4, 8, 100, 0.1}, {2, 4, 100, 0.05}, {1, 2, 50, 0.02}};
  return cfg;
}

// 8. More intermediate sessions reduce the bias of the endpoint deformation.
Outcome multi_session_benefit() {
  const SynthConfig sc = synthetic(32, 8, 0.3);
  const Volume base = make_phantom(sc.grid(), sc.phantom_seed);
  const RegistrationConfig cfg = reduced_config();
  const int seeds = 10;
  double sum8 = 0.0, sum2 = 0.0;
  int wins = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    const SynthSeries s = make_series(base, sc, 1000 + std::uint64_t(seed));
    const auto r8 = register_series(s.series, cfg);
    ImageSeries pair;
    pair.images = {s.series.images.front(), s.series.images.back()};
    pair.times = {s.series.times.front(), s.series.times.back()};
    const auto r2 = register_series(pair, cfg);
    const double b8 = bias_slope(s.truth[7], r8.deformation(0, 7), &s.series.mask).slope;
    const double b2 = bias_slope(s.truth[7], r2.deformation(0, 1), &s.series.mask).slope;
    sum8 += b8;
    sum2 += b2;
    wins += std::abs(b8 - 1.0) < std::abs(b2 - 1.0);
  }
  const double m8 = sum8 / seeds, m2 = sum2 / seeds;
  return {std::abs(m8 - 1.0) < std::abs(m2 - 1.0), "mean B: N=8 " + fmt(m8) + ", N=2 " + fmt(m2) + "; N=8 closer in " +
                                                       std::to_string(wins) + "/" + std::to_string(seeds) + " seeds"};
}

// 9. No true motion, full intensity corruption.
Outcome null_motion() {
  const SynthConfig sc = synthetic(32, 4, 0.0);
  const Volume base = make_phantom(sc.grid(), sc.phantom_seed);
  const SynthSeries s = make_series(base, sc, 9);
  const RegistrationResult r = register_series(s.series, RegistrationConfig{});
  double worst = 0.0;
  for (int k = 1; k < 4; ++k) worst = std::max(worst, mean_norm_in(r.deformation(0, k), s.series.mask));
  return {worst < 0.1, "max over sessions of ROI mean |u| = " + fmt(worst) + " voxel"};
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return fa.good() || fa.eof() ? sa == sb : false;
}

// 10. Two identical CLI runs write identical files.
Outcome determinism() {
  const fs::path dir = scratch_dir("determinism");
  write_json_file(dir / "synth.json", {{"dims", {24, 24, 24}}, {"sessions", 3}, {"sigma_v", 0.3}, {"seed", 4}});
  write_json_file(dir / "config.json",
                  {{"stages", {{{"downsample", 2}, {"flow_res", 4}, {"iterations", 20}, {"lr", 0.05}},
                               {{"downsample", 1}, {"flow_res", 2}, {"iterations", 10}, {"lr", 0.02}}}}});
  const std::string cli = LONGREG_CLI;
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > /dev/null").c_str());
  };
  if (run("synth --config " + (dir / "synth.json").string() + " --out " + (dir / "data").string()) != 0)
    return {false, "synth failed"};
  for (const char* out : {"run_a", "run_b"})
    if (run("register --series " + (dir / "data/series.json").string() + " --config " +
            (dir / "config.json").string() + " --out " + (dir / out).string()) != 0)
      return {false, "register failed"};
  int files = 0, diffs = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "run_a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir / "run_a");
    ++files;
    diffs += !(fs::exists(dir / "run_b" / rel) && same_bytes(e.path(), dir / "run_b" / rel));
  }
  for (const auto& e : fs::recursive_directory_iterator(dir / "run_b"))
    if (e.is_regular_file() && !fs::exists(dir / "run_a" / fs::relative(e.path(), dir / "run_b"))) ++diffs;
  fs::remove_all(dir);
  return {files > 0 && diffs == 0, std::to_string(files) + " files compared, " + std::to_string(diffs) + " differ"};
}

// 11. Evaluation metrics on planted maps.
Outcome evaluation_metrics() {
  const GridSpec g = cube(16);
  const VectorField truth = random_field(g, 21, -2.0, 2.0);
  const Mat3 a{0.9, 0.1, -0.05, 0.02, 0.8, 0.07, -0.1, 0.03, 1.1};
  const Vec3 b{0.3, -0.2, 0.5};
  VectorField est(g);
  for (std::size_t v = 0; v < g.voxel_count(); ++v) {
    const Vec3 t = truth[v];
    Vec3 e;
    for (int i = 0; i < 3; ++i)
      e[std::size_t(i)] = a[std::size_t(3 * i)] * t[0] + a[std::size_t(3 * i + 1)] * t[1] +
                          a[std::size_t(3 * i + 2)] * t[2] + b[std::size_t(i)];
    est.set(v, e);
  }
  const BiasFit fit = bias_slope(truth, est);
  double err = std::abs(fit.slope - (0.9 + 0.8 + 1.1) / 3.0);
  for (std::size_t i = 0; i < 9; ++i) err = std::max(err, std::abs(fit.a[i] - a[i]));
  for (std::size_t i = 0; i < 3; ++i) err = std::max(err, std::abs(fit.b[i] - b[i]));
  VectorField scaled = 2.0 * truth;
  for (std::size_t v = 0; v < g.voxel_count(); ++v) {
    const Vec3 t = scaled[v];
    scaled.set(v, {t[0] + 1.0, t[1] - 2.0, t[2] + 0.5});
  }
  const double pcc = vector_pcc(truth, scaled);
  return {err <= 1e-9 && std::abs(pcc - 1.0) <= 1e-12,
          "max |fit - planted| " + fmt(err) + ", PCC(2 truth + c) - 1 = " + fmt(pcc - 1.0)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<std::string, std::function<Outcome()>>> criteria{
      {1, {"gradient oracle", gradient_oracle}},
      {2, {"diffeomorphism and inverse consistency", diffeomorphism}},
      {3, {"Exp vs ODE oracle", exp_vs_ode}},
      {4, {"E[LNCC] analytic vs Monte Carlo", lncc_expectation}},
      {5, {"offset landscape monotonicity", offset_monotonicity}},
      {6, {"SiLNCC affine invariance", silncc_invariance}},
      {7, {"synthetic recovery", synthetic_recovery}},
      {8, {"multi-session benefit", multi_session_benefit}},
      {9, {"null-motion robustness", null_motion}},
      {10, {"determinism", determinism}},
      {11, {"evaluation metrics", evaluation_metrics}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& [id, _] : criteria) selected.push_back(id);

  int failures = 0;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::cout << "criterion " << id << ": FAIL (unknown criterion)\n";
      ++failures;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << id << " (" << it->second.first << "): " << (o.pass ? "PASS" : "FAIL") << " - "
              << o.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
