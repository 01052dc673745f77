// Data-parallel loop helpers with reproducible reductions.
#pragma once

#include <omp.h>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace longreg::detail {

template <class F>
void parallel_for(std::size_t n, F&& body) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) body(std::size_t(i));
}

// Sum of term(i) over [0, n). The block partition is fixed, so the result is
// independent of the number of threads.
template <class F>
double deterministic_sum(std::size_t n, F&& term) {
  constexpr int kBlocks = 64;
  std::array<double, kBlocks> partial{};
  const std::size_t block = (n + kBlocks - 1) / kBlocks;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < kBlocks; ++b) {
    const std::size_t lo = std::size_t(b) * block;
    const std::size_t hi = std::min(n, lo + block);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    partial[std::size_t(b)] = s;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// Runs body(i, target) for i in [0, n), where body accumulates into target
// (a pointer to an array shaped like `out`). Each thread owns a private buffer
// over a static slice of [0, n); buffers are added into `out` in thread order.
// Output is bitwise reproducible for a fixed thread count.
template <class F>
void deterministic_scatter(std::size_t n, std::span<double> out, F&& body) {
  const int max_threads = omp_get_max_threads();
  if (max_threads == 1 || n < 4096) {
    for (std::size_t i = 0; i < n; ++i) body(i, out.data());
    return;
  }
  auto buffers = std::vector<std::vector<double>>(std::size_t(max_threads));
  int team = 1;
#pragma omp parallel
  {
    const int t = omp_get_thread_num();
    const int threads = omp_get_num_threads();
#pragma omp single
    team = threads;
    auto& buf = buffers[std::size_t(t)];
    buf.assign(out.size(), 0.0);
    const std::size_t lo = n * std::size_t(t) / std::size_t(threads);
    const std::size_t hi = n * std::size_t(t + 1) / std::size_t(threads);
    for (std::size_t i = lo; i < hi; ++i) body(i, buf.data());
  }
  parallel_for(out.size(), [&](std::size_t k) {
    double s = out[k];
    for (int t = 0; t < team; ++t) s += buffers[std::size_t(t)][k];
    out[k] = s;
  });
}

}  // namespace longreg::detail
