// Monte-Carlo studies of the window metrics on synthetic 1-D signals.
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "longreg/similarity.hpp"

namespace longreg {

namespace {

struct RunningMean {
  double sum = 0.0;
  double sum_sq = 0.0;
  long n = 0;
  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return sum / double(n); }
  double sem() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq - double(n) * m * m) / double(n - 1));
    return std::sqrt(var / double(n));
  }
};

// Window metrics on 1-D truncated windows, averaged over every window.
double mean_window_metric(Metric metric, const std::vector<double>& a, const std::vector<double>& b,
                          int radius, double eps) {
  const int n = int(a.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - radius);
    const int hi = std::min(n - 1, i + radius);
    const double cnt = hi - lo + 1;
    double ma = 0.0, mb = 0.0;
    for (int k = lo; k <= hi; ++k) {
      ma += a[std::size_t(k)];
      mb += b[std::size_t(k)];
    }
    ma /= cnt;
    mb /= cnt;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (int k = lo; k <= hi; ++k) {
      const double da = a[std::size_t(k)] - ma;
      const double db = b[std::size_t(k)] - mb;
      saa += da * da;
      sbb += db * db;
      sab += da * db;
    }
    if (metric == Metric::lncc)
      total += 1.0 - (sab + eps) / std::sqrt((saa + eps) * (sbb + eps));
    else
      total += (sbb - sab * sab * saa / (saa * saa + eps * eps)) / cnt;
  }
  return total / n;
}

}  // namespace

Metric parse_metric(const std::string& name) {
  if (name == "lncc") return Metric::lncc;
  if (name == "silncc") return Metric::silncc;
  throw std::invalid_argument("unknown metric '" + name + "' (expected lncc or silncc)");
}

std::string metric_name(Metric m) { return m == Metric::lncc ? "lncc" : "silncc"; }

std::vector<LnccExpectationRow> mc_lncc_expectation(std::span<const double> cnr_grid, double a_r,
                                                    int region_size, int n_samples,
                                                    std::uint64_t seed) {
  if (region_size < 2) throw std::invalid_argument("region_size must be >= 2");
  if (n_samples < 1000) throw std::invalid_argument("n_samples must be >= 1000");
  std::vector<LnccExpectationRow> rows;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t r = std::size_t(region_size);
  std::vector<double> x(r), y(r);
  const double offset = 0.3;  // b_R; LNCC ignores it
  for (double cnr : cnr_grid) {
    if (!(cnr > 0.0)) throw std::invalid_argument("cnr must be > 0");
    const double sigma = std::isinf(cnr) ? 0.0 : 1.0 / cnr;
    RunningMean acc;
    for (int s = 0; s < n_samples; ++s) {
      double mean = 0.0;
      for (double& v : x) {
        v = normal(rng);
        mean += v;
      }
      mean /= double(r);
      double ss = 0.0;
      for (double& v : x) {
        v -= mean;
        ss += v * v;
      }
      const double scale = 1.0 / std::sqrt(ss / double(r - 1));
      for (double& v : x) v *= scale;
      double my = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        y[k] = a_r * x[k] + offset + (sigma > 0.0 ? sigma * normal(rng) : 0.0);
        my += y[k];
      }
      my /= double(r);
      double sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        const double dy = y[k] - my;
        sxx += x[k] * x[k];
        syy += dy * dy;
        sxy += x[k] * dy;
      }
      acc.add(1.0 - sxy / std::sqrt(sxx * syy));
    }
    LnccExpectationRow row;
    row.cnr = cnr;
    row.mean = acc.mean();
    row.sem = acc.sem();
    row.analytic = expected_lncc(cnr, a_r);
    row.residual = row.mean - row.analytic;
    rows.push_back(row);
  }
  return rows;
}

std::vector<OffsetLandscapeCell> mc_offset_landscape(Metric metric, std::span<const double> cnr_grid,
                                                     std::span<const double> offset_grid, int n_samples,
                                                     std::uint64_t seed,
                                                     const OffsetLandscapeOptions& options) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  if (options.signal_length < 4) throw std::invalid_argument("signal_length must be >= 4");
  if (options.radius < 1) throw std::invalid_argument("radius must be >= 1");
  const int len = options.signal_length;
  const double edge = 0.5 * len;
  const double unit = options.noise_sigma > 0.0 ? options.noise_sigma : 1.0;
  std::vector<OffsetLandscapeCell> cells;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(len)), b(static_cast<std::size_t>(len));
  // Pixel-coverage step: 0 before the edge, 1 from it on, fractional in between.
  auto step = [](double x, double e) { return std::clamp(x - e + 1.0, 0.0, 1.0); };
  for (double cnr : cnr_grid) {
    const double height = cnr * unit;
    const double eps = 1e-12 * std::max(1.0, height * height);
    for (double offset : offset_grid) {
      RunningMean acc;
      for (int s = 0; s < n_samples; ++s) {
        for (int i = 0; i < len; ++i) {
          a[std::size_t(i)] = height * step(i, edge) + options.noise_sigma * normal(rng);
          b[std::size_t(i)] = height * step(i, edge + offset) + options.noise_sigma * normal(rng);
        }
        acc.add(mean_window_metric(metric, a, b, options.radius, eps));
      }
      cells.push_back({cnr, offset, acc.mean(), acc.sem()});
    }
  }
  return cells;
}

}  // namespace longreg
