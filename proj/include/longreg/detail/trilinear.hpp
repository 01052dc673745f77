// Trilinear stencils with clamp-to-edge boundary handling.
#pragma once

#include <array>
#include <cstddef>

#include "longreg/grid.hpp"

namespace longreg::detail {

struct AxisWeights {
  int i0 = 0;
  int i1 = 0;
  double f = 0.0;     // weight of i1
  double dfdp = 0.0;  // zero when the coordinate was clamped
};

inline AxisWeights axis_weights(double p, int n) {
  if (n <= 1) return {0, 0, 0.0, 0.0};
  if (p < 0.0) return {0, 1, 0.0, 0.0};
  if (p > double(n - 1)) return {n - 2, n - 1, 1.0, 0.0};
  int i0 = int(p);
  if (i0 > n - 2) i0 = n - 2;
  return {i0, i0 + 1, p - double(i0), 1.0};
}

struct Stencil {
  std::array<std::size_t, 8> idx{};
  std::array<double, 8> w{};
  // d w / d p_a, only filled by make_stencil_with_grad.
  std::array<std::array<double, 8>, 3> dw{};
};

inline Stencil make_stencil(const GridSpec& g, const Vec3& p) {
  const AxisWeights ax = axis_weights(p[0], g.dims[0]);
  const AxisWeights ay = axis_weights(p[1], g.dims[1]);
  const AxisWeights az = axis_weights(p[2], g.dims[2]);
  Stencil s;
  const double wx[2] = {1.0 - ax.f, ax.f};
  const double wy[2] = {1.0 - ay.f, ay.f};
  const double wz[2] = {1.0 - az.f, az.f};
  const int ix[2] = {ax.i0, ax.i1};
  const int iy[2] = {ay.i0, ay.i1};
  const int iz[2] = {az.i0, az.i1};
  int k = 0;
  for (int bx = 0; bx < 2; ++bx)
    for (int by = 0; by < 2; ++by)
      for (int bz = 0; bz < 2; ++bz, ++k) {
        s.idx[std::size_t(k)] = g.index(ix[bx], iy[by], iz[bz]);
        s.w[std::size_t(k)] = wx[bx] * wy[by] * wz[bz];
      }
  return s;
}

inline Stencil make_stencil_with_grad(const GridSpec& g, const Vec3& p) {
  const AxisWeights ax = axis_weights(p[0], g.dims[0]);
  const AxisWeights ay = axis_weights(p[1], g.dims[1]);
  const AxisWeights az = axis_weights(p[2], g.dims[2]);
  Stencil s;
  const double wx[2] = {1.0 - ax.f, ax.f};
  const double wy[2] = {1.0 - ay.f, ay.f};
  const double wz[2] = {1.0 - az.f, az.f};
  const double dx[2] = {-ax.dfdp, ax.dfdp};
  const double dy[2] = {-ay.dfdp, ay.dfdp};
  const double dz[2] = {-az.dfdp, az.dfdp};
  const int ix[2] = {ax.i0, ax.i1};
  const int iy[2] = {ay.i0, ay.i1};
  const int iz[2] = {az.i0, az.i1};
  int k = 0;
  for (int bx = 0; bx < 2; ++bx)
    for (int by = 0; by < 2; ++by)
      for (int bz = 0; bz < 2; ++bz, ++k) {
        const std::size_t kk = std::size_t(k);
        s.idx[kk] = g.index(ix[bx], iy[by], iz[bz]);
        s.w[kk] = wx[bx] * wy[by] * wz[bz];
        s.dw[0][kk] = dx[bx] * wy[by] * wz[bz];
        s.dw[1][kk] = wx[bx] * dy[by] * wz[bz];
        s.dw[2][kk] = wx[bx] * wy[by] * dz[bz];
      }
  return s;
}

inline double sample(const double* data, const Stencil& s) {
  double v = 0.0;
  for (std::size_t k = 0; k < 8; ++k) v += s.w[k] * data[s.idx[k]];
  return v;
}

inline Vec3 sample_gradient(const double* data, const Stencil& s) {
  Vec3 g{0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < 8; ++k) {
    const double d = data[s.idx[k]];
    g[0] += s.dw[0][k] * d;
    g[1] += s.dw[1][k] * d;
    g[2] += s.dw[2][k] * d;
  }
  return g;
}

// Interleaved 3-component data.
inline Vec3 sample3(const double* data, const Stencil& s) {
  Vec3 v{0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < 8; ++k) {
    const double* d = data + 3 * s.idx[k];
    v[0] += s.w[k] * d[0];
    v[1] += s.w[k] * d[1];
    v[2] += s.w[k] * d[2];
  }
  return v;
}

// Row-major jacobian, entry (c, a) = d F_c / d p_a.
inline Mat3 sample3_jacobian(const double* data, const Stencil& s) {
  Mat3 j{};
  for (std::size_t k = 0; k < 8; ++k) {
    const double* d = data + 3 * s.idx[k];
    for (int c = 0; c < 3; ++c)
      for (int a = 0; a < 3; ++a) j[std::size_t(3 * c + a)] += s.dw[std::size_t(a)][k] * d[c];
  }
  return j;
}

inline void scatter3(double* out, const Stencil& s, const Vec3& g) {
  for (std::size_t k = 0; k < 8; ++k) {
    double* o = out + 3 * s.idx[k];
    o[0] += s.w[k] * g[0];
    o[1] += s.w[k] * g[1];
    o[2] += s.w[k] * g[2];
  }
}

}  // namespace longreg::detail
