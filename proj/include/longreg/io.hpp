// MVOL container (raw little-endian payload plus a JSON sidecar), JSON
// configuration, series manifests and checkpoints.
//
// A file pair is "X.mvol" (payload) and "X.mvol.json" (header):
//   {"magic": "MVOL1", "dims": [nx, ny, nz], "spacing_mm": [...], "origin_mm": [...],
//    "channels": 1 | 3, "dtype": "f32le" | "f64le", "layout": "z-fastest",
//    "units": "...", "time_index": k, "provenance": {...}}
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "longreg/grid.hpp"
#include "longreg/optimize.hpp"
#include "longreg/synth.hpp"

namespace longreg {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct MvolHeader {
  GridSpec grid;
  int channels = 1;
  std::string dtype = "f32le";
  std::string units;
  std::optional<int> time_index;
  json provenance;
};

struct MvolWriteOptions {
  std::string dtype = "f32le";  // "f64le" keeps doubles exactly
  std::string units;
  std::optional<int> time_index;
  json provenance;
};

fs::path mvol_sidecar(const fs::path& payload);
MvolHeader read_mvol_header(const fs::path& payload);

void write_volume(const fs::path& path, const Volume& vol, const MvolWriteOptions& opts = {});
void write_field(const fs::path& path, const VectorField& field, const MvolWriteOptions& opts = {});
void write_mask(const fs::path& path, const Mask& mask);
Volume read_volume(const fs::path& path);
VectorField read_field(const fs::path& path);
// Any scalar volume; nonzero voxels are set.
Mask read_mask(const fs::path& path);

json read_json_file(const fs::path& path);
void write_json_file(const fs::path& path, const json& value);

RegistrationConfig registration_config_from_json(const json& j);
json to_json(const RegistrationConfig& cfg);

// Accepts the SynthConfig fields plus "seed" and "base" (read by the caller).
SynthConfig synth_config_from_json(const json& j);
json to_json(const SynthConfig& cfg);

// {"sessions": [{"path": "...", "time": t}, ...], "mask": "..."}; relative
// paths resolve against the manifest's directory.
ImageSeries read_series_manifest(const fs::path& path);

json to_json(const IterationRecord& rec);
json to_json(const RigidParams& r);

void save_checkpoint(const fs::path& dir, const OptimizerSnapshot& snap);
OptimizerSnapshot load_checkpoint(const fs::path& dir);

}  // namespace longreg
