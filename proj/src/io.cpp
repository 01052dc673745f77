#include "longreg/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "longreg/errors.hpp"

namespace longreg {

static_assert(std::endian::native == std::endian::little, "MVOL payloads assume a little-endian host");

namespace {

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw InputError(path.string() + ": " + what);
}

template <class T>
T get_field(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) fail(where, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(where, std::string("field '") + key + "' has the wrong type");
  }
}

std::size_t dtype_size(const std::string& dtype, const fs::path& where) {
  if (dtype == "f32le") return 4;
  if (dtype == "f64le") return 8;
  fail(where, "unsupported dtype '" + dtype + "'");
}

json header_json(const GridSpec& g, int channels, const MvolWriteOptions& opts) {
  json h;
  h["magic"] = "MVOL1";
  h["dims"] = g.dims;
  h["spacing_mm"] = g.spacing;
  h["origin_mm"] = g.origin;
  h["channels"] = channels;
  h["dtype"] = opts.dtype;
  h["layout"] = "z-fastest";
  if (!opts.units.empty()) h["units"] = opts.units;
  if (opts.time_index) h["time_index"] = *opts.time_index;
  if (!opts.provenance.is_null()) h["provenance"] = opts.provenance;
  return h;
}

void write_payload(const fs::path& path, const GridSpec& g, int channels, std::span<const double> values,
                   const MvolWriteOptions& opts) {
  const std::size_t width = dtype_size(opts.dtype, path);
  std::vector<char> bytes(values.size() * width);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (width == 4) {
      const float f = float(values[i]);
      std::memcpy(bytes.data() + 4 * i, &f, 4);
    } else {
      std::memcpy(bytes.data() + 8 * i, &values[i], 8);
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path, "cannot open for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) fail(path, "write failed");
  }
  write_json_file(mvol_sidecar(path), header_json(g, channels, opts));
}

std::vector<double> read_payload(const fs::path& path, int expected_channels, MvolHeader& header) {
  header = read_mvol_header(path);
  if (header.channels != expected_channels)
    fail(mvol_sidecar(path), "expected " + std::to_string(expected_channels) + " channel(s), found " +
                                 std::to_string(header.channels));
  const std::size_t width = dtype_size(header.dtype, mvol_sidecar(path));
  const std::size_t count = header.grid.voxel_count() * std::size_t(header.channels);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open payload");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != count * width)
    fail(path, "payload has " + std::to_string(bytes.size()) + " bytes, header implies " +
                   std::to_string(count * width));
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (width == 4) {
      float f;
      std::memcpy(&f, bytes.data() + 4 * i, 4);
      values[i] = f;
    } else {
      std::memcpy(&values[i], bytes.data() + 8 * i, 8);
    }
    if (!std::isfinite(values[i])) fail(path, "payload contains non-finite values");
  }
  return values;
}

json stage_json(const StageConfig& s) {
  return {{"downsample", s.downsample}, {"flow_res", s.flow_res}, {"iterations", s.iterations}, {"lr", s.lr}};
}

// Strict object reader: every key must be known.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InputError(where_ + ": expected a JSON object");
  }
  template <class T>
  void opt(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw InputError(where_ + ": field '" + key + "' has the wrong type");
    }
  }
  const json* sub(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void ignore(const char* key) { seen_.push_back(key); }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw InputError(where_ + ": unknown field '" + it.key() + "'");
  }
  const std::string& where() const { return where_; }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

json record_json(const LossBreakdown& l) {
  return {{"sim_total", l.sim_total}, {"l_ss", l.l_ss}, {"l_l2", l.l_l2}, {"l_ts", l.l_ts}, {"total", l.total}};
}

}  // namespace

fs::path mvol_sidecar(const fs::path& payload) { return fs::path(payload.string() + ".json"); }

MvolHeader read_mvol_header(const fs::path& payload) {
  const fs::path side = mvol_sidecar(payload);
  const json h = read_json_file(side);
  if (!h.is_object()) fail(side, "header must be a JSON object");
  if (get_field<std::string>(h, "magic", side) != "MVOL1") fail(side, "field 'magic' is not MVOL1");
  if (h.contains("layout") && h.at("layout") != "z-fastest") fail(side, "field 'layout' must be z-fastest");
  MvolHeader out;
  out.grid.dims = get_field<std::array<int, 3>>(h, "dims", side);
  out.grid.spacing = get_field<Vec3>(h, "spacing_mm", side);
  out.grid.origin = h.contains("origin_mm") ? get_field<Vec3>(h, "origin_mm", side) : Vec3{0, 0, 0};
  try {
    out.grid.validate();
  } catch (const std::invalid_argument& e) {
    fail(side, e.what());
  }
  out.channels = get_field<int>(h, "channels", side);
  if (out.channels != 1 && out.channels != 3) fail(side, "field 'channels' must be 1 or 3");
  out.dtype = h.contains("dtype") ? get_field<std::string>(h, "dtype", side) : "f32le";
  dtype_size(out.dtype, side);
  if (h.contains("units")) out.units = get_field<std::string>(h, "units", side);
  if (h.contains("time_index")) out.time_index = get_field<int>(h, "time_index", side);
  if (h.contains("provenance")) out.provenance = h.at("provenance");
  return out;
}

void write_volume(const fs::path& path, const Volume& vol, const MvolWriteOptions& opts) {
  write_payload(path, vol.grid(), 1, vol.data(), opts);
}

void write_field(const fs::path& path, const VectorField& field, const MvolWriteOptions& opts) {
  write_payload(path, field.grid(), 3, field.data(), opts);
}

void write_mask(const fs::path& path, const Mask& mask) {
  std::vector<double> values(mask.data().begin(), mask.data().end());
  write_payload(path, mask.grid(), 1, values, {});
}

Volume read_volume(const fs::path& path) {
  MvolHeader h;
  std::vector<double> v = read_payload(path, 1, h);
  return Volume(h.grid, std::move(v));
}

VectorField read_field(const fs::path& path) {
  MvolHeader h;
  std::vector<double> v = read_payload(path, 3, h);
  return VectorField(h.grid, std::move(v));
}

Mask read_mask(const fs::path& path) {
  const Volume v = read_volume(path);
  std::vector<std::uint8_t> bits(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) bits[i] = v[i] != 0.0;
  return Mask(v.grid(), std::move(bits));
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(path, std::string("invalid JSON: ") + e.what());
  }
}

void write_json_file(const fs::path& path, const json& value) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out << value.dump(2) << "\n";
  if (!out) fail(path, "write failed");
}

RegistrationConfig registration_config_from_json(const json& j) {
  RegistrationConfig cfg;
  Reader r(j, "config");
  if (const json* stages = r.sub("stages")) {
    if (!stages->is_array()) throw InputError("config: field 'stages' must be an array");
    cfg.stages.clear();
    for (std::size_t i = 0; i < stages->size(); ++i) {
      StageConfig s;
      Reader sr((*stages)[i], "config.stages[" + std::to_string(i) + "]");
      sr.opt("downsample", s.downsample);
      sr.opt("flow_res", s.flow_res);
      sr.opt("iterations", s.iterations);
      sr.opt("lr", s.lr);
      sr.finish();
      cfg.stages.push_back(s);
    }
  }
  r.opt("alpha_ss", cfg.alpha_ss);
  r.opt("alpha_l2", cfg.alpha_l2);
  r.opt("alpha_ts", cfg.alpha_ts);
  r.opt("window_radius", cfg.window_radius);
  r.opt("flow_smooth_sigma_vox", cfg.flow_smooth_sigma_vox);
  r.opt("rigid", cfg.rigid);
  r.opt("rigid_lr", cfg.rigid_lr);
  if (const json* adam = r.sub("adam")) {
    Reader ar(*adam, "config.adam");
    ar.opt("beta1", cfg.adam_beta1);
    ar.opt("beta2", cfg.adam_beta2);
    ar.opt("eps", cfg.adam_eps);
    ar.finish();
  }
  if (const json* e = r.sub("exp")) {
    Reader er(*e, "config.exp");
    er.opt("min_steps", cfg.exp.min_steps);
    er.opt("max_steps", cfg.exp.max_steps);
    er.opt("max_step_norm", cfg.exp.max_step_norm);
    er.opt("fixed_steps", cfg.exp.fixed_steps);
    er.finish();
  }
  r.opt("times", cfg.times);
  r.opt("seed", cfg.seed);
  r.opt("checkpoint_every", cfg.checkpoint_every);
  r.finish();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  return cfg;
}

json to_json(const RegistrationConfig& cfg) {
  json stages = json::array();
  for (const auto& s : cfg.stages) stages.push_back(stage_json(s));
  return {{"stages", stages},
          {"alpha_ss", cfg.alpha_ss},
          {"alpha_l2", cfg.alpha_l2},
          {"alpha_ts", cfg.alpha_ts},
          {"window_radius", cfg.window_radius},
          {"flow_smooth_sigma_vox", cfg.flow_smooth_sigma_vox},
          {"rigid", cfg.rigid},
          {"rigid_lr", cfg.rigid_lr},
          {"adam", {{"beta1", cfg.adam_beta1}, {"beta2", cfg.adam_beta2}, {"eps", cfg.adam_eps}}},
          {"exp",
           {{"min_steps", cfg.exp.min_steps},
            {"max_steps", cfg.exp.max_steps},
            {"max_step_norm", cfg.exp.max_step_norm},
            {"fixed_steps", cfg.exp.fixed_steps}}},
          {"times", cfg.times},
          {"seed", cfg.seed},
          {"checkpoint_every", cfg.checkpoint_every}};
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig cfg;
  Reader r(j, "synth config");
  r.opt("dims", cfg.dims);
  r.opt("spacing", cfg.spacing);
  r.opt("sessions", cfg.sessions);
  r.opt("steps_per_gap", cfg.steps_per_gap);
  r.opt("dt", cfg.dt);
  r.opt("omega_s", cfg.omega_s);
  r.opt("omega_t", cfg.omega_t);
  r.opt("sigma_v", cfg.sigma_v);
  r.opt("corrupt", cfg.corrupt);
  std::array<double, 2> scale{cfg.intensity_scale_min, cfg.intensity_scale_max};
  r.opt("intensity_scale", scale);
  cfg.intensity_scale_min = scale[0];
  cfg.intensity_scale_max = scale[1];
  r.opt("intensity_offset", cfg.intensity_offset);
  r.opt("bias_amplitude", cfg.bias_amplitude);
  r.opt("bias_omega", cfg.bias_omega);
  r.opt("cnr", cfg.cnr);
  r.opt("phantom_seed", cfg.phantom_seed);
  r.ignore("seed");
  r.ignore("base");
  r.finish();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
  return cfg;
}

json to_json(const SynthConfig& cfg) {
  return {{"dims", cfg.dims},
          {"spacing", cfg.spacing},
          {"sessions", cfg.sessions},
          {"steps_per_gap", cfg.steps_per_gap},
          {"dt", cfg.dt},
          {"omega_s", cfg.omega_s},
          {"omega_t", cfg.omega_t},
          {"sigma_v", cfg.sigma_v},
          {"corrupt", cfg.corrupt},
          {"intensity_scale", {cfg.intensity_scale_min, cfg.intensity_scale_max}},
          {"intensity_offset", cfg.intensity_offset},
          {"bias_amplitude", cfg.bias_amplitude},
          {"bias_omega", cfg.bias_omega},
          {"cnr", cfg.cnr},
          {"phantom_seed", cfg.phantom_seed}};
}

ImageSeries read_series_manifest(const fs::path& path) {
  const json m = read_json_file(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  if (!m.is_object() || !m.contains("sessions") || !m.at("sessions").is_array())
    fail(path, "missing array field 'sessions'");
  ImageSeries series;
  const json& sessions = m.at("sessions");
  if (sessions.size() < 2) fail(path, "field 'sessions' needs at least 2 entries");
  bool any_time = false;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const json& s = sessions[i];
    const std::string where = "sessions[" + std::to_string(i) + "]";
    if (!s.is_object() || !s.contains("path") || !s.at("path").is_string())
      fail(path, "field '" + where + ".path' is missing or not a string");
    const fs::path img = resolve(s.at("path").get<std::string>());
    if (!fs::exists(img)) fail(path, "field '" + where + ".path' refers to missing file " + img.string());
    series.images.push_back(read_volume(img));
    if (i > 0) {
      if (series.images.back().grid() != series.images.front().grid())
        fail(img, "grid differs from the first session");
    }
    if (s.contains("time")) {
      if (!s.at("time").is_number()) fail(path, "field '" + where + ".time' must be a number");
      series.times.push_back(s.at("time").get<double>());
      any_time = true;
    }
  }
  if (any_time && series.times.size() != series.images.size())
    fail(path, "either every session or none must have a 'time'");
  for (std::size_t i = 1; i < series.times.size(); ++i)
    if (!(series.times[i] > series.times[i - 1])) fail(path, "session times must be strictly increasing");
  if (m.contains("mask") && !m.at("mask").is_null()) {
    if (!m.at("mask").is_string()) fail(path, "field 'mask' must be a string");
    const fs::path mask = resolve(m.at("mask").get<std::string>());
    if (!fs::exists(mask)) fail(path, "field 'mask' refers to missing file " + mask.string());
    series.mask = read_mask(mask);
    if (series.mask.grid() != series.images.front().grid()) fail(mask, "mask grid differs from the images");
  }
  return series;
}

json to_json(const IterationRecord& rec) {
  json j = {{"stage", rec.stage}, {"iteration", rec.iteration}, {"lr", rec.lr}};
  j.update(record_json(rec.loss));
  return j;
}

json to_json(const RigidParams& r) { return {{"angles_rad", r.angles}, {"translation_vox", r.translation}}; }

namespace {

const MvolWriteOptions kExact{"f64le", "", std::nullopt, json()};

}  // namespace

void save_checkpoint(const fs::path& dir, const OptimizerSnapshot& snap) {
  fs::create_directories(dir);
  json state;
  state["stage"] = snap.stage;
  state["iteration"] = snap.iteration;
  state["gaps"] = snap.params.flows.size();
  json rigid = json::array();
  for (const auto& r : snap.params.rigid) rigid.push_back(to_json(r));
  state["rigid"] = rigid;
  json flow_steps = json::array();
  for (std::size_t k = 0; k < snap.params.flows.size(); ++k) {
    const std::string stem = "flow_" + std::to_string(k);
    write_field(dir / (stem + ".mvol"), snap.params.flows[k], kExact);
    const OptimState empty;
    const OptimState& s = k < snap.flow_states.size() ? snap.flow_states[k] : empty;
    flow_steps.push_back(s.step);
    if (!s.m.empty()) {
      const GridSpec& g = snap.params.flows[k].grid();
      write_field(dir / (stem + "_m.mvol"), VectorField(g, s.m), kExact);
      write_field(dir / (stem + "_v.mvol"), VectorField(g, s.v), kExact);
    }
  }
  state["flow_steps"] = flow_steps;
  json rigid_states = json::array();
  for (const auto& s : snap.rigid_states) rigid_states.push_back({{"m", s.m}, {"v", s.v}, {"step", s.step}});
  state["rigid_states"] = rigid_states;
  json trace = json::array();
  for (const auto& rec : snap.trace) trace.push_back(to_json(rec));
  state["trace"] = trace;
  write_json_file(dir / "state.json", state);
}

OptimizerSnapshot load_checkpoint(const fs::path& dir) {
  const fs::path file = dir / "state.json";
  const json state = read_json_file(file);
  OptimizerSnapshot snap;
  snap.stage = get_field<int>(state, "stage", file);
  snap.iteration = get_field<int>(state, "iteration", file);
  const auto gaps = get_field<std::size_t>(state, "gaps", file);
  const auto rigid = get_field<json>(state, "rigid", file);
  const auto flow_steps = get_field<std::vector<long>>(state, "flow_steps", file);
  if (rigid.size() != gaps || flow_steps.size() != gaps) fail(file, "gap count mismatch");
  for (const auto& r : rigid) {
    RigidParams p;
    p.angles = get_field<Vec3>(r, "angles_rad", file);
    p.translation = get_field<Vec3>(r, "translation_vox", file);
    snap.params.rigid.push_back(p);
  }
  for (std::size_t k = 0; k < gaps; ++k) {
    const std::string stem = "flow_" + std::to_string(k);
    snap.params.flows.push_back(read_field(dir / (stem + ".mvol")));
    OptimState s;
    s.step = flow_steps[k];
    if (fs::exists(dir / (stem + "_m.mvol"))) {
      const VectorField m = read_field(dir / (stem + "_m.mvol"));
      const VectorField v = read_field(dir / (stem + "_v.mvol"));
      s.m.assign(m.data().begin(), m.data().end());
      s.v.assign(v.data().begin(), v.data().end());
    }
    snap.flow_states.push_back(std::move(s));
  }
  for (const auto& rs : get_field<json>(state, "rigid_states", file)) {
    OptimState s;
    s.m = get_field<std::vector<double>>(rs, "m", file);
    s.v = get_field<std::vector<double>>(rs, "v", file);
    s.step = get_field<long>(rs, "step", file);
    snap.rigid_states.push_back(std::move(s));
  }
  for (const auto& t : get_field<json>(state, "trace", file)) {
    IterationRecord rec;
    rec.stage = get_field<int>(t, "stage", file);
    rec.iteration = get_field<int>(t, "iteration", file);
    rec.lr = get_field<double>(t, "lr", file);
    rec.loss.sim_total = get_field<double>(t, "sim_total", file);
    rec.loss.l_ss = get_field<double>(t, "l_ss", file);
    rec.loss.l_l2 = get_field<double>(t, "l_l2", file);
    rec.loss.l_ts = get_field<double>(t, "l_ts", file);
    rec.loss.total = get_field<double>(t, "total", file);
    snap.trace.push_back(rec);
  }
  return snap;
}

}  // namespace longreg
