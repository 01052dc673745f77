// Synthetic longitudinal series with known ground-truth deformations.
#pragma once

#include <cstdint>
#include <vector>

#include "longreg/grid.hpp"

namespace longreg {

// Spatiotemporal random velocity: i.i.d. normal noise per component on
// (time, x, y, z), Gaussian-filtered with cut-offs omega_t (cycles per step)
// and omega_s (cycles per mm), then rescaled so the standard deviation over
// all components equals sigma_v (mm per unit time). Returned in voxel units.
std::vector<VectorField> gen_flow(const GridSpec& grid, int n_steps, double omega_s, double omega_t,
                                  double sigma_v, std::uint64_t seed);

// Semi-Lagrangian integration U <- U + dt * v_t(x + U). Returns the cumulative
// displacement at every session boundary (steps_per_gap steps apart),
// starting with the zero field.
std::vector<VectorField> integrate_flow(const std::vector<VectorField>& flows, int steps_per_gap, double dt);

// Nested ellipsoid shells with mid-frequency texture, intensities in [0, ~1.2].
Volume make_phantom(const GridSpec& grid, std::uint64_t seed = 0);

// Intensity above `fraction` of the maximum, then a morphological closing.
Mask foreground_mask(const Volume& vol, double fraction = 0.1);

struct SynthConfig {
  std::array<int, 3> dims{48, 48, 48};
  Vec3 spacing{1.0, 1.0, 1.0};
  int sessions = 8;
  int steps_per_gap = 12;
  double dt = 0.0;          // 0 means 1 / steps_per_gap
  double omega_s = 0.03;    // cycles per mm
  double omega_t = 3.0;     // cycles per integration step; >= 0.5 is nearly white in time
  double sigma_v = 0.3;     // mm per unit time
  bool corrupt = true;
  double intensity_scale_min = 0.8;
  double intensity_scale_max = 1.2;
  double intensity_offset = 0.1;  // offsets drawn from [-x, x]
  double bias_amplitude = 0.1;    // multiplicative field within 1 +- amplitude
  double bias_omega = 0.02;       // cycles per mm
  double cnr = 10.0;              // base std / noise std; <= 0 disables noise
  std::uint64_t phantom_seed = 0;

  GridSpec grid() const;
  void validate() const;
};

struct SynthSeries {
  ImageSeries series;
  // truth[k] pulls session 0 onto the grid of session k: I_k = I_0 o (x + truth[k])
  // before corruption. truth[0] is zero.
  std::vector<VectorField> truth;
};

// Deforms `base` along a generated trajectory and corrupts each session.
// Throws std::runtime_error if a ground-truth deformation folds.
SynthSeries make_series(const Volume& base, const SynthConfig& cfg, std::uint64_t seed);

}  // namespace longreg
