// Windowed similarity metrics: LNCC and its scale-invariant variant SiLNCC.
//
// Windows are cubes of side 2r+1 centred on every voxel and truncated at the
// volume border, so |R| varies per voxel near the faces.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "longreg/grid.hpp"

namespace longreg {

// Truncated moving-window sum of `values` (laid out on `dims`).
std::vector<double> box_sum(std::span<const double> values, const std::array<int, 3>& dims, int radius);

// |R| per voxel.
std::vector<double> window_count(const std::array<int, 3>& dims, int radius);

// Centered window sums per voxel.
struct WindowStats {
  int radius = 1;
  std::vector<double> count;  // |R|
  std::vector<double> saa;    // sum of centered a^2
  std::vector<double> sbb;    // sum of centered b^2
  std::vector<double> sab;    // sum of centered a*b
};

WindowStats window_stats(const Volume& a, const Volume& b, int radius);

struct SimilarityValue {
  double loss = 0.0;    // mean over regions
  Volume per_region;
};

// Regularizer used by both metrics: 1e-5 times the global variance of the
// reference image.
double default_epsilon(const Volume& reference);

// Per region 1 - (Sab + eps) / sqrt((Saa + eps)(Sbb + eps)).
SimilarityValue lncc(const Volume& a, const Volume& b, int radius, double eps);

// Per region (1/|R|) (Sbb - Sab^2 Saa / (Saa^2 + eps^2)): the least-squares
// residual of regressing b on a within the window. `a` is the fixed image.
SimilarityValue silncc(const Volume& a, const Volume& b, int radius, double eps);

// Mean SiLNCC and its gradient with respect to every voxel of b.
double silncc_with_gradient(const Volume& a, const Volume& b, int radius, double eps,
                            std::vector<double>& grad_b);

// Closed-form expectation of one region's LNCC under a local linear intensity
// model: 1 - 1 / sqrt(1 + 1 / (a_r^2 cnr^2)).
double expected_lncc(double cnr, double a_r);

struct LnccExpectationRow {
  double cnr = 0.0;
  double mean = 0.0;
  double sem = 0.0;
  double analytic = 0.0;
  double residual = 0.0;  // mean - analytic
};

// Monte-Carlo estimate of E[LNCC_R]. Each sample draws a signal window of
// `region_size` values standardized to zero mean and unit (Bessel-corrected)
// sample variance, forms b = a_r * a + b_r + noise with noise std 1/cnr and
// averages 1 - NCC. cnr may be +infinity (noiseless).
std::vector<LnccExpectationRow> mc_lncc_expectation(std::span<const double> cnr_grid, double a_r,
                                                    int region_size, int n_samples,
                                                    std::uint64_t seed);

enum class Metric { lncc, silncc };
Metric parse_metric(const std::string& name);
std::string metric_name(Metric m);

struct OffsetLandscapeOptions {
  int signal_length = 64;
  int radius = 3;             // 1-D window half width
  double noise_sigma = 1.0;   // step height is cnr * (noise_sigma > 0 ? noise_sigma : 1)
};

struct OffsetLandscapeCell {
  double cnr = 0.0;
  double offset = 0.0;
  double mean = 0.0;
  double sem = 0.0;
};

// Two noisy 1-D step functions whose edges differ by `offset` voxels; the
// metric is averaged over all windows and then over samples.
std::vector<OffsetLandscapeCell> mc_offset_landscape(Metric metric, std::span<const double> cnr_grid,
                                                     std::span<const double> offset_grid, int n_samples,
                                                     std::uint64_t seed,
                                                     const OffsetLandscapeOptions& options = {});

}  // namespace longreg
