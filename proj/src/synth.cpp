#include "longreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "longreg/detail/parallel.hpp"
#include "longreg/fft_smooth.hpp"

namespace longreg {

using detail::deterministic_sum;
using detail::parallel_for;

namespace {

std::vector<double> normal_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (double& x : out) x = normal(rng);
  return out;
}

double std_of(std::span<const double> v) {
  const double n = double(v.size());
  const double mean = deterministic_sum(v.size(), [&](std::size_t i) { return v[i]; }) / n;
  return std::sqrt(deterministic_sum(v.size(), [&](std::size_t i) { return (v[i] - mean) * (v[i] - mean); }) / n);
}

// Fraction of a voxel inside a surface at signed distance d (voxels, positive
// outside), linear over one voxel.
double coverage(double d) { return std::clamp(0.5 - d, 0.0, 1.0); }

Mask morph(const Mask& in, bool dilate) {
  const GridSpec& g = in.grid();
  Mask out(g);
  auto d = out.data();
  parallel_for(g.voxel_count(), [&](std::size_t v) {
    const auto c = g.coords(v);
    bool any = false, all = true;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          const int x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
          // Outside the volume counts as foreground for erosion, background for dilation.
          if (x < 0 || y < 0 || z < 0 || x >= g.dims[0] || y >= g.dims[1] || z >= g.dims[2]) continue;
          const bool s = in[g.index(x, y, z)];
          any = any || s;
          all = all && s;
        }
    d[v] = dilate ? any : all;
  });
  return out;
}

}  // namespace

std::vector<VectorField> gen_flow(const GridSpec& grid, int n_steps, double omega_s, double omega_t,
                                  double sigma_v, std::uint64_t seed) {
  grid.validate();
  if (n_steps < 1) throw std::invalid_argument("gen_flow: n_steps must be >= 1");
  if (!(omega_s > 0.0) || !(omega_t > 0.0)) throw std::invalid_argument("gen_flow: omega must be > 0");
  if (!(sigma_v >= 0.0)) throw std::invalid_argument("gen_flow: sigma_v must be >= 0");
  const std::size_t nv = grid.voxel_count();
  const std::size_t per_comp = std::size_t(n_steps) * nv;
  std::mt19937_64 rng(seed);
  const std::array<int, 4> dims{n_steps, grid.dims[0], grid.dims[1], grid.dims[2]};
  const std::array<double, 4> omega{omega_t, omega_s * grid.spacing[0], omega_s * grid.spacing[1],
                                    omega_s * grid.spacing[2]};
  std::vector<std::vector<double>> comps;
  for (int c = 0; c < 3; ++c) {
    comps.push_back(normal_noise(per_comp, rng));
    gaussian_smooth_periodic(comps.back(), dims, omega);
  }
  // Global standard deviation over all components and steps.
  std::vector<double> all;
  all.reserve(3 * per_comp);
  for (const auto& c : comps) all.insert(all.end(), c.begin(), c.end());
  const double s = std_of(all);
  const double scale = s > 0.0 ? sigma_v / s : 0.0;

  std::vector<VectorField> out;
  out.reserve(std::size_t(n_steps));
  for (int t = 0; t < n_steps; ++t) {
    VectorField f(grid);
    const std::size_t off = std::size_t(t) * nv;
    parallel_for(nv, [&](std::size_t v) {
      for (int c = 0; c < 3; ++c)
        f.component(v, c) = comps[std::size_t(c)][off + v] * scale / grid.spacing[std::size_t(c)];
    });
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<VectorField> integrate_flow(const std::vector<VectorField>& flows, int steps_per_gap, double dt) {
  if (steps_per_gap < 1) throw std::invalid_argument("integrate_flow: steps_per_gap must be >= 1");
  if (flows.empty() || flows.size() % std::size_t(steps_per_gap) != 0)
    throw std::invalid_argument("integrate_flow: flow count must be a positive multiple of steps_per_gap");
  const GridSpec& grid = flows.front().grid();
  std::vector<VectorField> out{VectorField(grid)};
  VectorField u(grid);
  for (std::size_t t = 0; t < flows.size(); ++t) {
    require_same_grid(flows[t].grid(), grid, "integrate_flow");
    u += dt * warp_field(flows[t], u);
    if ((t + 1) % std::size_t(steps_per_gap) == 0) out.push_back(u);
  }
  return out;
}

Volume make_phantom(const GridSpec& grid, std::uint64_t seed) {
  grid.validate();
  const Vec3 c = grid.center();
  Volume out(grid);
  // Half extents in voxels; the shells are defined in normalized coordinates.
  const Vec3 half{0.5 * grid.dims[0], 0.5 * grid.dims[1], 0.5 * grid.dims[2]};
  struct Blob {
    Vec3 center, radii;
    double delta;
  };
  const std::vector<Blob> blobs{
      {{0.0, 0.0, 0.0}, {0.82, 0.72, 0.78}, 0.35},   // outer shell
      {{0.0, 0.0, 0.0}, {0.70, 0.60, 0.66}, 0.45},   // tissue
      {{0.0, 0.02, 0.0}, {0.48, 0.40, 0.44}, -0.30},  // inner region
      {{-0.18, 0.05, 0.0}, {0.14, 0.22, 0.18}, 0.5},
      {{0.20, -0.06, 0.05}, {0.12, 0.16, 0.22}, 0.4},
      {{0.0, -0.35, 0.2}, {0.2, 0.1, 0.12}, -0.25},
      {{0.35, 0.25, -0.3}, {0.12, 0.14, 0.1}, 0.3},
  };
  parallel_for(grid.voxel_count(), [&](std::size_t v) {
    const auto ijk = grid.coords(v);
    const Vec3 p{(ijk[0] - c[0]) / half[0], (ijk[1] - c[1]) / half[1], (ijk[2] - c[2]) / half[2]};
    double value = 0.0;
    for (const auto& b : blobs) {
      double r2 = 0.0, g2 = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double q = (p[a] - b.center[a]) / b.radii[a];
        r2 += q * q;
        const double dq = q / (b.radii[a] * half[a]);  // d(q^2 / 2) / dx in voxels
        g2 += dq * dq;
      }
      const double r = std::sqrt(r2);
      // Distance to the surface r = 1 to first order: (r - 1) / |grad r|.
      const double grad = r > 0.0 ? std::sqrt(g2) / r : 1.0;
      value += b.delta * coverage((r - 1.0) / grad);
    }
    out[v] = value;
  });

  // Mid-frequency texture: difference of two smoothings of one noise draw.
  std::mt19937_64 rng(seed);
  Volume noise(grid, normal_noise(grid.voxel_count(), rng));
  const double fine = 0.15, coarse = 0.05;  // cycles per voxel
  const Vec3 w_fine{fine / grid.spacing[0], fine / grid.spacing[1], fine / grid.spacing[2]};
  const Vec3 w_coarse{coarse / grid.spacing[0], coarse / grid.spacing[1], coarse / grid.spacing[2]};
  const Volume a = gaussian_smooth_fft(noise, w_fine);
  const Volume b = gaussian_smooth_fft(noise, w_coarse);
  std::vector<double> band(grid.voxel_count());
  for (std::size_t v = 0; v < band.size(); ++v) band[v] = a[v] - b[v];
  const double s = std_of(band);
  parallel_for(grid.voxel_count(), [&](std::size_t v) {
    const double tissue = std::clamp(out[v] / 0.8, 0.0, 1.0);
    out[v] *= 1.0 + 0.15 * tissue * (s > 0.0 ? band[v] / s : 0.0);
  });
  return out;
}

Mask foreground_mask(const Volume& vol, double fraction) {
  const auto d = vol.data();
  const double mx = *std::max_element(d.begin(), d.end());
  Mask m(vol.grid());
  auto md = m.data();
  for (std::size_t v = 0; v < d.size(); ++v) md[v] = d[v] > fraction * mx;
  return morph(morph(m, true), false);
}

GridSpec SynthConfig::grid() const {
  GridSpec g;
  g.dims = dims;
  g.spacing = spacing;
  return g;
}

void SynthConfig::validate() const {
  grid().validate();
  if (sessions < 2) throw std::invalid_argument("synth: sessions must be >= 2");
  if (steps_per_gap < 1) throw std::invalid_argument("synth: steps_per_gap must be >= 1");
  if (!(dt >= 0.0)) throw std::invalid_argument("synth: dt must be >= 0");
  if (!(omega_s > 0.0) || !(omega_t > 0.0) || !(bias_omega > 0.0))
    throw std::invalid_argument("synth: omega values must be > 0");
  if (!(sigma_v >= 0.0)) throw std::invalid_argument("synth: sigma_v must be >= 0");
  if (!(intensity_scale_min > 0.0) || intensity_scale_max < intensity_scale_min)
    throw std::invalid_argument("synth: invalid intensity scale range");
  if (!(intensity_offset >= 0.0) || !(bias_amplitude >= 0.0) || bias_amplitude >= 1.0)
    throw std::invalid_argument("synth: invalid corruption amplitudes");
}

SynthSeries make_series(const Volume& base, const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const GridSpec& grid = base.grid();
  const int gaps = cfg.sessions - 1;
  const double dt = cfg.dt > 0.0 ? cfg.dt : 1.0 / cfg.steps_per_gap;

  SynthSeries out;
  if (cfg.sigma_v > 0.0) {
    const auto flows = gen_flow(grid, gaps * cfg.steps_per_gap, cfg.omega_s, cfg.omega_t, cfg.sigma_v, seed);
    out.truth = integrate_flow(flows, cfg.steps_per_gap, dt);
  } else {
    out.truth.assign(std::size_t(cfg.sessions), VectorField(grid));
  }
  for (int k = 1; k < cfg.sessions; ++k) {
    const Volume det = jacobian_det(out.truth[std::size_t(k)]);
    const auto d = det.data();
    if (*std::min_element(d.begin(), d.end()) <= 0.0)
      throw std::runtime_error("synthetic deformation for session " + std::to_string(k) +
                               " folds; lower sigma_v or raise steps_per_gap");
  }

  // Corruption draws use their own stream so they never perturb the deformation.
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> scale_dist(cfg.intensity_scale_min, cfg.intensity_scale_max);
  std::uniform_real_distribution<double> offset_dist(-cfg.intensity_offset, cfg.intensity_offset);
  const double base_std = std_of(base.data());
  const double noise_std = cfg.cnr > 0.0 ? base_std / cfg.cnr : 0.0;
  const Vec3 bias_w{cfg.bias_omega, cfg.bias_omega, cfg.bias_omega};

  for (int k = 0; k < cfg.sessions; ++k) {
    Volume img = warp_volume(base, out.truth[std::size_t(k)]);
    if (cfg.corrupt) {
      const double a = scale_dist(rng);
      const double b = offset_dist(rng);
      Volume bias = gaussian_smooth_fft(Volume(grid, normal_noise(grid.voxel_count(), rng)), bias_w);
      const auto bd = bias.data();
      double peak = 0.0;
      for (double x : bd) peak = std::max(peak, std::abs(x));
      const std::vector<double> noise = normal_noise(grid.voxel_count(), rng);
      for (std::size_t v = 0; v < img.size(); ++v) {
        const double field = 1.0 + (peak > 0.0 ? cfg.bias_amplitude * bd[v] / peak : 0.0);
        img[v] = (a * img[v] + b) * field + noise_std * noise[v];
      }
    }
    out.series.images.push_back(std::move(img));
    out.series.times.push_back(double(k));
  }
  out.series.mask = foreground_mask(base);
  return out;
}

}  // namespace longreg
