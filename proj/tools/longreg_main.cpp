// longreg command-line front end: register, synth, eval, lncc-sim.
#include <omp.h>

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "longreg/errors.hpp"
#include "longreg/evalmetrics.hpp"
#include "longreg/io.hpp"
#include "longreg/optimize.hpp"
#include "longreg/similarity.hpp"
#include "longreg/synth.hpp"
#include "longreg/version.hpp"

using namespace longreg;

namespace {

std::string two_digits(int k) {
  std::ostringstream s;
  s << std::setw(2) << std::setfill('0') << k;
  return s.str();
}

void print(const json& j) { std::cout << j.dump() << std::endl; }

struct RegisterArgs {
  std::string series, config, out;
  bool resume = false;
};

int run_register(const RegisterArgs& a) {
  const fs::path out(a.out);
  const ImageSeries series = read_series_manifest(a.series);
  const RegistrationConfig cfg =
      a.config.empty() ? RegistrationConfig{} : registration_config_from_json(read_json_file(a.config));
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint";

  RegisterHooks hooks;
  std::ofstream trace_file;
  if (a.resume && fs::exists(ckpt / "state.json")) {
    hooks.resume = load_checkpoint(ckpt);
    trace_file.open(out / "loss_trace.jsonl", std::ios::trunc);
    for (const auto& rec : hooks.resume->trace) trace_file << to_json(rec).dump() << "\n";
  } else {
    trace_file.open(out / "loss_trace.jsonl", std::ios::trunc);
  }
  if (!trace_file) throw InputError((out / "loss_trace.jsonl").string() + ": cannot open for writing");
  hooks.on_iteration = [&](const IterationRecord& rec) { trace_file << to_json(rec).dump() << "\n" << std::flush; };
  hooks.on_checkpoint = [&](const OptimizerSnapshot& snap) { save_checkpoint(ckpt, snap); };

  const RegistrationResult result = register_series(series, cfg, hooks);
  const int n = result.sessions();
  json outputs = json::array();
  json exp_steps = json::array();
  const GapDisplacements gaps = result.gap_displacements();
  for (int k = 0; k + 1 < n; ++k) {
    const VectorField phi = result.image_flow(k);
    exp_steps.push_back(exp_steps_for(phi, cfg.exp));
    const std::string name = "flow_gap_" + two_digits(k) + ".mvol";
    write_field(out / name, phi, {"f32le", "voxels", k, json()});
    outputs.push_back(name);
  }
  double min_jac = std::numeric_limits<double>::infinity();
  for (int k = 1; k < n; ++k) {
    const VectorField u = compose_chain(gaps, 0, k);
    const Volume det = jacobian_det(u);
    for (double d : det.data()) min_jac = std::min(min_jac, d);
    const std::string dname = "deform_0_to_" + std::to_string(k) + ".mvol";
    const std::string jname = "jacdet_0_to_" + std::to_string(k) + ".mvol";
    write_field(out / dname, u, {"f32le", "voxels", k, json()});
    write_volume(out / jname, det, {"f32le", "ratio", k, json()});
    outputs.push_back(dname);
    outputs.push_back(jname);
  }
  json rigid = json::array();
  for (std::size_t j = 0; j < result.params.rigid.size(); ++j) {
    json r = to_json(result.params.rigid[j]);
    r["session"] = j + 1;
    rigid.push_back(r);
  }
  write_json_file(out / "rigid.json", rigid);

  json manifest = read_json_file(a.series);
  json summary = {{"command", "register"},
                  {"version", kVersion},
                  {"sessions", n},
                  {"iterations", result.trace.size()},
                  {"exp_steps", exp_steps},
                  {"min_jacobian_det", min_jac},
                  {"final", result.trace.empty() ? json() : to_json(result.trace.back())},
                  {"rigid", rigid},
                  {"outputs", outputs}};
  json full = summary;
  full["config"] = to_json(cfg);
  full["series_manifest"] = manifest;
  full["series_path"] = fs::absolute(a.series).string();
  write_json_file(out / "result.json", full);
  summary["out"] = out.string();
  print(summary);
  return 0;
}

int run_synth(const std::string& config, const std::string& out_dir) {
  const json j = read_json_file(config);
  const SynthConfig cfg = synth_config_from_json(j);
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  const fs::path out(out_dir);
  Volume base;
  if (j.contains("base")) {
    fs::path p = j.at("base").get<std::string>();
    if (p.is_relative()) p = fs::path(config).parent_path() / p;
    base = read_volume(p);
  } else {
    base = make_phantom(cfg.grid(), cfg.phantom_seed);
  }
  const SynthSeries s = make_series(base, cfg, seed);
  const json provenance = {{"seed", seed}, {"version", kVersion}};
  json sessions = json::array();
  double max_disp = 0.0;
  for (std::size_t k = 0; k < s.series.images.size(); ++k) {
    const std::string name = "session_" + two_digits(int(k)) + ".mvol";
    write_volume(out / name, s.series.images[k], {"f32le", "intensity", int(k), provenance});
    sessions.push_back({{"path", name}, {"time", s.series.times[k]}});
    if (k > 0) {
      write_field(out / ("truth_0_to_" + std::to_string(k) + ".mvol"), s.truth[k],
                  {"f32le", "voxels", int(k), provenance});
      max_disp = std::max(max_disp, s.truth[k].max_norm());
    }
  }
  write_mask(out / "mask.mvol", s.series.mask);
  write_volume(out / "base.mvol", base, {"f32le", "intensity", std::nullopt, provenance});
  write_json_file(out / "series.json", {{"sessions", sessions}, {"mask", "mask.mvol"}});
  json cfg_json = to_json(cfg);
  write_json_file(out / "synth_manifest.json", {{"version", kVersion}, {"seed", seed}, {"config", cfg_json}});
  print({{"command", "synth"},
         {"out", out.string()},
         {"sessions", cfg.sessions},
         {"seed", seed},
         {"max_truth_displacement_vox", max_disp},
         {"mask_voxels", s.series.mask.count()}});
  return 0;
}

int run_eval(const std::string& truth_path, const std::string& est_path, const std::string& mask_path,
             const std::string& out_dir) {
  const VectorField truth = read_field(truth_path);
  const VectorField est = read_field(est_path);
  if (truth.grid() != est.grid()) throw InputError(est_path + ": grid differs from " + truth_path);
  Mask mask;
  if (!mask_path.empty()) {
    mask = read_mask(mask_path);
    if (mask.grid() != truth.grid()) throw InputError(mask_path + ": grid differs from " + truth_path);
  }
  const Mask* roi = mask_path.empty() ? nullptr : &mask;
  const BiasFit fit = bias_slope(truth, est, roi);
  json a = json::array();
  for (int i = 0; i < 3; ++i)
    a.push_back({fit.a[std::size_t(3 * i)], fit.a[std::size_t(3 * i + 1)], fit.a[std::size_t(3 * i + 2)]});
  const json result = {{"eu_mm", eu_distance(truth, est, roi)},
                       {"pcc", vector_pcc(truth, est, roi)},
                       {"slope_B", fit.slope},
                       {"A", a},
                       {"b", fit.b},
                       {"n_voxels", fit.n_voxels},
                       {"condition", fit.condition},
                       {"ill_conditioned", fit.ill_conditioned}};
  if (!out_dir.empty()) write_json_file(fs::path(out_dir) / "eval.json", result);
  print(result);
  return 0;
}

struct SimArgs {
  std::string mode;
  int region = 9;
  double a_r = 1.0;
  int samples = 100000;
  std::uint64_t seed = 0;
  std::vector<double> cnr{0.5, 1.0, 2.0, 4.0};
  std::vector<double> offsets{0.0, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0};
  std::string metric = "both";
  int radius = 3;
  int length = 64;
  double noise = 1.0;
  std::string out;
  std::string format = "json";
};

std::string num(double x) {
  std::ostringstream s;
  s << std::setprecision(10) << x;
  return s.str();
}

int run_lncc_sim(const SimArgs& a) {
  std::ostringstream csv;
  json result = {{"command", "lncc-sim"}, {"mode", a.mode}, {"seed", a.seed}, {"samples", a.samples}};
  if (a.mode == "expectation") {
    const auto rows = mc_lncc_expectation(a.cnr, a.a_r, a.region, a.samples, a.seed);
    csv << "cnr,mean,sem,analytic,residual\n";
    json jrows = json::array();
    double worst = 0.0;
    for (const auto& r : rows) {
      csv << num(r.cnr) << "," << num(r.mean) << "," << num(r.sem) << "," << num(r.analytic) << ","
          << num(r.residual) << "\n";
      jrows.push_back({{"cnr", r.cnr}, {"mean", r.mean}, {"sem", r.sem}, {"analytic", r.analytic},
                       {"residual", r.residual}});
      worst = std::max(worst, std::abs(r.residual));
    }
    result["region_size"] = a.region;
    result["a_r"] = a.a_r;
    result["rows"] = jrows;
    result["max_abs_residual"] = worst;
  } else if (a.mode == "offset") {
    std::vector<Metric> metrics;
    if (a.metric == "both")
      metrics = {Metric::lncc, Metric::silncc};
    else
      metrics = {parse_metric(a.metric)};
    OffsetLandscapeOptions opts;
    opts.radius = a.radius;
    opts.signal_length = a.length;
    opts.noise_sigma = a.noise;
    csv << "metric,cnr,offset,mean,sem\n";
    json jrows = json::array();
    for (Metric m : metrics) {
      for (const auto& c : mc_offset_landscape(m, a.cnr, a.offsets, a.samples, a.seed, opts)) {
        csv << metric_name(m) << "," << num(c.cnr) << "," << num(c.offset) << "," << num(c.mean) << ","
            << num(c.sem) << "\n";
        jrows.push_back({{"metric", metric_name(m)}, {"cnr", c.cnr}, {"offset", c.offset}, {"mean", c.mean},
                         {"sem", c.sem}});
      }
    }
    result["options"] = {{"signal_length", opts.signal_length}, {"radius", opts.radius},
                         {"noise_sigma", opts.noise_sigma}, {"step", "pixel-coverage step at length/2"}};
    result["rows"] = jrows;
  } else {
    throw InputError("--mode must be expectation or offset");
  }
  if (!a.out.empty()) {
    const fs::path path = fs::path(a.out) / ("lncc_" + a.mode + ".csv");
    fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw InputError(path.string() + ": cannot open for writing");
    f << csv.str();
    result["csv"] = path.string();
  }
  if (a.format == "csv")
    std::cout << csv.str();
  else
    print(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"longreg: longitudinal diffeomorphic registration"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP thread count (default: runtime choice)");
  app.set_version_flag("--version", std::string("longreg ") + kVersion);

  RegisterArgs reg;
  auto* reg_cmd = app.add_subcommand("register", "Register a series of sessions");
  reg_cmd->add_option("--series", reg.series, "Series manifest JSON")->required();
  reg_cmd->add_option("--config", reg.config, "Registration config JSON");
  reg_cmd->add_option("--out", reg.out, "Output directory")->required();
  reg_cmd->add_flag("--resume", reg.resume, "Continue from <out>/checkpoint when present");

  std::string syn_config, syn_out;
  auto* syn_cmd = app.add_subcommand("synth", "Generate a synthetic series with ground truth");
  syn_cmd->add_option("--config", syn_config, "Synthesis config JSON")->required();
  syn_cmd->add_option("--out", syn_out, "Output directory")->required();

  std::string ev_truth, ev_est, ev_mask, ev_out;
  auto* ev_cmd = app.add_subcommand("eval", "Compare an estimated field with ground truth");
  ev_cmd->add_option("--truth", ev_truth, "Ground-truth displacement MVOL")->required();
  ev_cmd->add_option("--est", ev_est, "Estimated displacement MVOL")->required();
  ev_cmd->add_option("--mask", ev_mask, "Region of interest MVOL");
  ev_cmd->add_option("--out", ev_out, "Directory for eval.json");

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("lncc-sim", "Monte-Carlo studies of the window metrics");
  sim_cmd->add_option("--mode", sim.mode, "expectation | offset")->required()->check(
      CLI::IsMember({"expectation", "offset"}));
  sim_cmd->add_option("--region", sim.region, "Region size |R| (expectation)");
  sim_cmd->add_option("--a-r", sim.a_r, "Local intensity slope a_R (expectation)");
  sim_cmd->add_option("--samples", sim.samples, "Monte-Carlo samples per cell");
  sim_cmd->add_option("--seed", sim.seed, "Random seed");
  sim_cmd->add_option("--cnr", sim.cnr, "CNR grid")->delimiter(',');
  sim_cmd->add_option("--offsets", sim.offsets, "Offset grid in samples (offset)")->delimiter(',');
  sim_cmd->add_option("--metric", sim.metric, "lncc | silncc | both (offset)")
      ->check(CLI::IsMember({"lncc", "silncc", "both"}));
  sim_cmd->add_option("--radius", sim.radius, "1-D window half width (offset)");
  sim_cmd->add_option("--length", sim.length, "Signal length (offset)");
  sim_cmd->add_option("--noise", sim.noise, "Noise std; step height = cnr * noise (offset)");
  sim_cmd->add_option("--out", sim.out, "Directory for the CSV table");
  sim_cmd->add_option("--format", sim.format, "json | csv on stdout")->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*reg_cmd) return run_register(reg);
    if (*syn_cmd) return run_synth(syn_config, syn_out);
    if (*ev_cmd) return run_eval(ev_truth, ev_est, ev_mask, ev_out);
    if (*sim_cmd) return run_lncc_sim(sim);
  } catch (const DivergenceError& e) {
    std::cerr << "error: optimization diverged (" << e.term() << "): " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
