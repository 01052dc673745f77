#include "longreg/fft_smooth.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include "longreg/detail/parallel.hpp"

namespace longreg {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

struct PlanDeleter {
  void operator()(fftw_plan_s* p) const {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};
using Plan = std::unique_ptr<fftw_plan_s, PlanDeleter>;

double axis_frequency(int k, int n) { return double(k <= n / 2 ? k : k - n) / double(n); }

}  // namespace

double omega_for_sigma(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("smoothing sigma must be > 0");
  return 1.0 / (2.0 * std::numbers::pi * sigma);
}

void gaussian_smooth_periodic(std::span<double> data, std::span<const int> dims,
                              std::span<const double> omega_per_sample) {
  const int rank = int(dims.size());
  if (rank < 1 || rank > 4 || omega_per_sample.size() != dims.size())
    throw std::invalid_argument("gaussian_smooth_periodic: rank must be 1..4");
  std::size_t total = 1;
  for (int a = 0; a < rank; ++a) {
    if (dims[std::size_t(a)] < 1) throw std::invalid_argument("gaussian_smooth_periodic: bad dims");
    if (!(omega_per_sample[std::size_t(a)] > 0.0))
      throw std::invalid_argument("smoothing frequency omega_s must be > 0");
    total *= std::size_t(dims[std::size_t(a)]);
  }
  if (total != data.size()) throw std::invalid_argument("gaussian_smooth_periodic: size mismatch");

  const int last = dims[std::size_t(rank - 1)];
  const std::size_t half = std::size_t(last / 2 + 1);
  const std::size_t outer = total / std::size_t(last);
  const std::size_t n_complex = outer * half;

  std::unique_ptr<double, FftwFree> real(fftw_alloc_real(total));
  std::unique_ptr<fftw_complex, FftwFree> spec(fftw_alloc_complex(n_complex));
  Plan forward, backward;
  {
    std::lock_guard lock(planner_mutex());
    forward.reset(fftw_plan_dft_r2c(rank, dims.data(), real.get(), spec.get(), FFTW_ESTIMATE));
    backward.reset(fftw_plan_dft_c2r(rank, dims.data(), spec.get(), real.get(), FFTW_ESTIMATE));
  }
  if (!forward || !backward) throw std::runtime_error("FFTW planning failed");

  std::copy(data.begin(), data.end(), real.get());
  fftw_execute(forward.get());

  // Per-axis transfer factors.
  std::vector<std::vector<double>> factor(static_cast<std::size_t>(rank));
  for (int a = 0; a < rank; ++a) {
    const int n = dims[std::size_t(a)];
    const int len = a == rank - 1 ? int(half) : n;
    const double w = omega_per_sample[std::size_t(a)];
    auto& f = factor[std::size_t(a)];
    f.resize(std::size_t(len));
    for (int k = 0; k < len; ++k) {
      const double fr = axis_frequency(k, n);
      f[std::size_t(k)] = std::isfinite(w) ? std::exp(-0.5 * (fr / w) * (fr / w)) : 1.0;
    }
  }
  const double norm = 1.0 / double(total);
  detail::parallel_for(n_complex, [&](std::size_t i) {
    std::size_t rem = i;
    double h = factor[std::size_t(rank - 1)][rem % half];
    rem /= half;
    for (int a = rank - 2; a >= 0; --a) {
      const std::size_t n = std::size_t(dims[std::size_t(a)]);
      h *= factor[std::size_t(a)][rem % n];
      rem /= n;
    }
    spec.get()[i][0] *= h * norm;
    spec.get()[i][1] *= h * norm;
  });
  fftw_execute(backward.get());
  std::copy(real.get(), real.get() + total, data.begin());
}

Volume gaussian_smooth_fft(const Volume& vol, const Vec3& omega_s) {
  const GridSpec& g = vol.grid();
  std::array<double, 3> w;
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(omega_s[a] > 0.0)) throw std::invalid_argument("omega_s must be > 0");
    w[a] = omega_s[a] * g.spacing[a];
  }
  Volume out = vol;
  gaussian_smooth_periodic(out.data(), g.dims, w);
  return out;
}

VectorField gaussian_smooth_fft(const VectorField& field, const Vec3& omega_s) {
  const GridSpec& g = field.grid();
  std::array<double, 3> w;
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(omega_s[a] > 0.0)) throw std::invalid_argument("omega_s must be > 0");
    w[a] = omega_s[a] * g.spacing[a];
  }
  VectorField out(g);
  std::vector<double> comp(g.voxel_count());
  for (int c = 0; c < 3; ++c) {
    for (std::size_t v = 0; v < comp.size(); ++v) comp[v] = field.component(v, c);
    gaussian_smooth_periodic(comp, g.dims, w);
    for (std::size_t v = 0; v < comp.size(); ++v) out.component(v, c) = comp[v];
  }
  return out;
}

VectorField gaussian_smooth_padded(const VectorField& field, double sigma_vox) {
  const double w = omega_for_sigma(sigma_vox);
  const int pad = int(std::ceil(4.0 * sigma_vox));
  const GridSpec& g = field.grid();
  const std::array<int, 3> pdims{g.dims[0] + 2 * pad, g.dims[1] + 2 * pad, g.dims[2] + 2 * pad};
  GridSpec pg;
  pg.dims = pdims;
  const std::array<double, 3> omega{w, w, w};
  VectorField out(g);
  std::vector<double> buf(pg.voxel_count());
  for (int c = 0; c < 3; ++c) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      const auto p = g.coords(v);
      buf[pg.index(p[0] + pad, p[1] + pad, p[2] + pad)] = field.component(v, c);
    }
    gaussian_smooth_periodic(buf, pdims, omega);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      const auto p = g.coords(v);
      out.component(v, c) = buf[pg.index(p[0] + pad, p[1] + pad, p[2] + pad)];
    }
  }
  return out;
}

}  // namespace longreg
