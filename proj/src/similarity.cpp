#include "longreg/similarity.hpp"

#include <cmath>
#include <stdexcept>

#include "longreg/detail/parallel.hpp"

namespace longreg {

using detail::parallel_for;

namespace {

// Truncated moving sum along one axis, in place on `data`.
void box_sum_axis(std::vector<double>& data, const std::array<int, 3>& dims, int axis, int radius) {
  const int n = dims[std::size_t(axis)];
  if (n == 1 || radius == 0) return;
  std::size_t stride = 1;
  for (int a = 2; a > axis; --a) stride *= std::size_t(dims[std::size_t(a)]);
  const std::size_t total = data.size();
  const std::size_t lines = total / std::size_t(n);
  parallel_for(lines, [&](std::size_t line) {
    // Decompose the line index into (outer, inner) around the axis.
    const std::size_t inner = line % stride;
    const std::size_t outer = line / stride;
    const std::size_t base = outer * stride * std::size_t(n) + inner;
    std::vector<double> prefix(std::size_t(n) + 1, 0.0);
    for (int i = 0; i < n; ++i)
      prefix[std::size_t(i) + 1] = prefix[std::size_t(i)] + data[base + std::size_t(i) * stride];
    for (int i = 0; i < n; ++i) {
      const int lo = std::max(0, i - radius);
      const int hi = std::min(n - 1, i + radius);
      data[base + std::size_t(i) * stride] = prefix[std::size_t(hi) + 1] - prefix[std::size_t(lo)];
    }
  });
}

double mean_of(std::span<const double> v) {
  return detail::deterministic_sum(v.size(), [&](std::size_t i) { return v[i]; }) / double(v.size());
}

std::vector<double> centered(std::span<const double> v) {
  const double m = mean_of(v);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x -= m;
  return out;
}

void check_pair(const Volume& a, const Volume& b, int radius) {
  require_same_grid(a.grid(), b.grid(), "similarity metric");
  if (radius < 1) throw std::invalid_argument("window radius must be >= 1");
}

// Raw window sums of the globally centered images.
struct RawSums {
  std::vector<double> count, sa, sb, qaa, qbb, qab;
  std::vector<double> ca, cb;  // centered inputs
};

RawSums raw_sums(const Volume& a, const Volume& b, int radius) {
  const auto& dims = a.grid().dims;
  RawSums r;
  r.ca = centered(a.data());
  r.cb = centered(b.data());
  const std::size_t n = r.ca.size();
  r.qaa.resize(n);
  r.qbb.resize(n);
  r.qab.resize(n);
  parallel_for(n, [&](std::size_t i) {
    r.qaa[i] = r.ca[i] * r.ca[i];
    r.qbb[i] = r.cb[i] * r.cb[i];
    r.qab[i] = r.ca[i] * r.cb[i];
  });
  r.sa = box_sum(r.ca, dims, radius);
  r.sb = box_sum(r.cb, dims, radius);
  r.qaa = box_sum(r.qaa, dims, radius);
  r.qbb = box_sum(r.qbb, dims, radius);
  r.qab = box_sum(r.qab, dims, radius);
  r.count = window_count(dims, radius);
  return r;
}

double silncc_region(double n, double saa, double sbb, double sab, double eps) {
  return (sbb - sab * sab * saa / (saa * saa + eps * eps)) / n;
}

}  // namespace

std::vector<double> box_sum(std::span<const double> values, const std::array<int, 3>& dims, int radius) {
  std::vector<double> out(values.begin(), values.end());
  for (int axis = 0; axis < 3; ++axis) box_sum_axis(out, dims, axis, radius);
  return out;
}

std::vector<double> window_count(const std::array<int, 3>& dims, int radius) {
  GridSpec g;
  g.dims = dims;
  std::vector<double> count(g.voxel_count());
  auto extent = [&](int i, int n) { return double(std::min(n - 1, i + radius) - std::max(0, i - radius) + 1); };
  parallel_for(count.size(), [&](std::size_t v) {
    const auto c = g.coords(v);
    count[v] = extent(c[0], dims[0]) * extent(c[1], dims[1]) * extent(c[2], dims[2]);
  });
  return count;
}

WindowStats window_stats(const Volume& a, const Volume& b, int radius) {
  check_pair(a, b, radius);
  RawSums r = raw_sums(a, b, radius);
  WindowStats s;
  s.radius = radius;
  const std::size_t n = r.count.size();
  s.saa.resize(n);
  s.sbb.resize(n);
  s.sab.resize(n);
  parallel_for(n, [&](std::size_t i) {
    const double inv = 1.0 / r.count[i];
    s.saa[i] = std::max(0.0, r.qaa[i] - r.sa[i] * r.sa[i] * inv);
    s.sbb[i] = std::max(0.0, r.qbb[i] - r.sb[i] * r.sb[i] * inv);
    s.sab[i] = r.qab[i] - r.sa[i] * r.sb[i] * inv;
  });
  s.count = std::move(r.count);
  return s;
}

double default_epsilon(const Volume& reference) {
  const std::vector<double> c = centered(reference.data());
  const double var = detail::deterministic_sum(c.size(), [&](std::size_t i) { return c[i] * c[i]; }) /
                     double(c.size());
  return 1e-5 * var;
}

SimilarityValue lncc(const Volume& a, const Volume& b, int radius, double eps) {
  const WindowStats s = window_stats(a, b, radius);
  SimilarityValue out{0.0, Volume(a.grid())};
  parallel_for(s.count.size(), [&](std::size_t i) {
    const double denom = std::sqrt((s.saa[i] + eps) * (s.sbb[i] + eps));
    out.per_region[i] = denom > 0.0 ? 1.0 - (s.sab[i] + eps) / denom : 0.0;
  });
  out.loss = mean_of(out.per_region.data());
  return out;
}

SimilarityValue silncc(const Volume& a, const Volume& b, int radius, double eps) {
  check_pair(a, b, radius);
  const RawSums r = raw_sums(a, b, radius);
  SimilarityValue out{0.0, Volume(a.grid())};
  parallel_for(r.count.size(), [&](std::size_t i) {
    const double cnt = r.count[i];
    out.per_region[i] = silncc_region(cnt, r.qaa[i] - r.sa[i] * r.sa[i] / cnt,
                                      r.qbb[i] - r.sb[i] * r.sb[i] / cnt,
                                      r.qab[i] - r.sa[i] * r.sb[i] / cnt, eps);
  });
  out.loss = mean_of(out.per_region.data());
  return out;
}

double silncc_with_gradient(const Volume& a, const Volume& b, int radius, double eps,
                            std::vector<double>& grad_b) {
  check_pair(a, b, radius);
  const RawSums r = raw_sums(a, b, radius);
  const std::size_t n = r.count.size();
  const double inv_v = 1.0 / double(n);
  std::vector<double> value(n), c_sb(n), c_qbb(n), c_qab(n);
  parallel_for(n, [&](std::size_t i) {
    const double cnt = r.count[i];
    const double saa = r.qaa[i] - r.sa[i] * r.sa[i] / cnt;
    const double sbb = r.qbb[i] - r.sb[i] * r.sb[i] / cnt;
    const double sab = r.qab[i] - r.sa[i] * r.sb[i] / cnt;
    const double k = saa / (saa * saa + eps * eps);
    value[i] = silncc_region(cnt, saa, sbb, sab, eps);
    const double scale = inv_v / cnt;
    c_qbb[i] = scale;
    c_sb[i] = scale * (-2.0 * r.sb[i] + 2.0 * k * sab * r.sa[i]) / cnt;
    c_qab[i] = scale * (-2.0 * k * sab);
  });
  const auto& dims = a.grid().dims;
  const std::vector<double> box_sb = box_sum(c_sb, dims, radius);
  const std::vector<double> box_qbb = box_sum(c_qbb, dims, radius);
  const std::vector<double> box_qab = box_sum(c_qab, dims, radius);
  grad_b.resize(n);
  parallel_for(n, [&](std::size_t i) {
    grad_b[i] = box_sb[i] + 2.0 * r.cb[i] * box_qbb[i] + r.ca[i] * box_qab[i];
  });
  return mean_of(value);
}

double expected_lncc(double cnr, double a_r) {
  if (!(cnr > 0.0)) throw std::invalid_argument("expected_lncc: cnr must be > 0");
  if (std::isinf(cnr)) return 0.0;
  return 1.0 - 1.0 / std::sqrt(1.0 + 1.0 / (a_r * a_r * cnr * cnr));
}

}  // namespace longreg
