#include "longreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "longreg/adjoint.hpp"
#include "longreg/detail/parallel.hpp"
#include "longreg/detail/trilinear.hpp"

namespace longreg {

using detail::parallel_for;

void GridSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[std::size_t(a)] < 1)
      throw std::invalid_argument("grid dims must be >= 1 (axis " + std::to_string(a) + ")");
    if (!(spacing[std::size_t(a)] > 0.0) || !std::isfinite(spacing[std::size_t(a)]))
      throw std::invalid_argument("grid spacing must be positive (axis " + std::to_string(a) + ")");
    if (!std::isfinite(origin[std::size_t(a)]))
      throw std::invalid_argument("grid origin must be finite");
  }
}

void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) throw std::invalid_argument(std::string("grid mismatch: ") + what);
}

Volume::Volume(const GridSpec& grid, double fill) : grid_(grid) {
  grid_.validate();
  data_.assign(grid_.voxel_count(), fill);
}

Volume::Volume(const GridSpec& grid, std::vector<double> data) : grid_(grid), data_(std::move(data)) {
  grid_.validate();
  if (data_.size() != grid_.voxel_count())
    throw std::invalid_argument("volume data length does not match grid");
}

bool Volume::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

VectorField::VectorField(const GridSpec& grid, const Vec3& fill) : grid_(grid) {
  grid_.validate();
  data_.resize(3 * grid_.voxel_count());
  for (std::size_t v = 0; v < grid_.voxel_count(); ++v) set(v, fill);
}

VectorField::VectorField(const GridSpec& grid, std::vector<double> data)
    : grid_(grid), data_(std::move(data)) {
  grid_.validate();
  if (data_.size() != 3 * grid_.voxel_count())
    throw std::invalid_argument("vector field data length does not match grid");
}

bool VectorField::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double VectorField::max_norm() const {
  double m = 0.0;
  for (std::size_t v = 0; v < voxel_count(); ++v) {
    const double* d = &data_[3 * v];
    m = std::max(m, d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  }
  return std::sqrt(m);
}

VectorField& VectorField::operator+=(const VectorField& other) {
  require_same_grid(grid_, other.grid_, "vector field addition");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

VectorField& VectorField::operator*=(double s) {
  for (double& d : data_) d *= s;
  return *this;
}

Mask::Mask(const GridSpec& grid, bool fill) : grid_(grid) {
  grid_.validate();
  data_.assign(grid_.voxel_count(), fill ? 1 : 0);
}

Mask::Mask(const GridSpec& grid, std::vector<std::uint8_t> data) : grid_(grid), data_(std::move(data)) {
  grid_.validate();
  if (data_.size() != grid_.voxel_count())
    throw std::invalid_argument("mask data length does not match grid");
}

std::size_t Mask::count() const {
  return std::size_t(std::count_if(data_.begin(), data_.end(), [](std::uint8_t m) { return m != 0; }));
}

Mat3 JacobianField::operator[](std::size_t v) const {
  Mat3 m;
  std::copy_n(data_.begin() + std::ptrdiff_t(9 * v), 9, m.begin());
  return m;
}

namespace {

void require_finite(const VectorField& f, const char* what) {
  if (!f.all_finite()) throw std::invalid_argument(std::string("non-finite values in ") + what);
}

struct FdStencil {
  int lo;
  int hi;
  double scale;
};

FdStencil fd_stencil(int i, int n) {
  if (i == 0) return {0, 1, 1.0};
  if (i == n - 1) return {n - 2, n - 1, 1.0};
  return {i - 1, i + 1, 0.5};
}

void require_fd_dims(const GridSpec& g) {
  for (int a = 0; a < 3; ++a)
    if (g.dims[std::size_t(a)] < 2)
      throw std::invalid_argument("finite differences need at least 2 voxels per axis");
}

}  // namespace

VectorField identity_positions(const GridSpec& grid) {
  VectorField p(grid);
  parallel_for(grid.voxel_count(), [&](std::size_t v) {
    const auto c = grid.coords(v);
    p.set(v, {double(c[0]), double(c[1]), double(c[2])});
  });
  return p;
}

Volume sample_trilinear(const Volume& vol, const VectorField& points) {
  require_finite(points, "sample positions");
  Volume out(points.grid());
  const GridSpec& g = vol.grid();
  const double* src = vol.data().data();
  parallel_for(points.voxel_count(), [&](std::size_t v) {
    out[v] = detail::sample(src, detail::make_stencil(g, points[v]));
  });
  return out;
}

Volume warp_volume(const Volume& vol, const VectorField& disp) {
  require_same_grid(vol.grid(), disp.grid(), "warp_volume");
  require_finite(disp, "displacement");
  const GridSpec& g = vol.grid();
  Volume out(g);
  const double* src = vol.data().data();
  parallel_for(g.voxel_count(), [&](std::size_t v) {
    const auto c = g.coords(v);
    const Vec3 u = disp[v];
    out[v] = detail::sample(src, detail::make_stencil(g, {c[0] + u[0], c[1] + u[1], c[2] + u[2]}));
  });
  return out;
}

Volume warp_volume_with_gradient(const Volume& vol, const VectorField& disp,
                                 VectorField& position_gradient) {
  require_same_grid(vol.grid(), disp.grid(), "warp_volume_with_gradient");
  const GridSpec& g = vol.grid();
  Volume out(g);
  position_gradient = VectorField(g);
  const double* src = vol.data().data();
  parallel_for(g.voxel_count(), [&](std::size_t v) {
    const auto c = g.coords(v);
    const Vec3 u = disp[v];
    const auto s = detail::make_stencil_with_grad(g, {c[0] + u[0], c[1] + u[1], c[2] + u[2]});
    out[v] = detail::sample(src, s);
    position_gradient.set(v, detail::sample_gradient(src, s));
  });
  return out;
}

VectorField warp_field(const VectorField& field, const VectorField& deform) {
  require_same_grid(field.grid(), deform.grid(), "warp_field");
  require_finite(deform, "deformation");
  const GridSpec& g = field.grid();
  VectorField out(g);
  const double* src = field.data().data();
  parallel_for(g.voxel_count(), [&](std::size_t v) {
    const auto c = g.coords(v);
    const Vec3 u = deform[v];
    out.set(v, detail::sample3(src, detail::make_stencil(g, {c[0] + u[0], c[1] + u[1], c[2] + u[2]})));
  });
  return out;
}

void warp_field_vjp(const VectorField& field, const VectorField& deform, const VectorField& out_grad,
                    VectorField* field_grad, VectorField* deform_grad) {
  const GridSpec& g = field.grid();
  require_same_grid(g, deform.grid(), "warp_field_vjp");
  require_same_grid(g, out_grad.grid(), "warp_field_vjp gradient");
  const double* src = field.data().data();
  if (deform_grad != nullptr) {
    require_same_grid(g, deform_grad->grid(), "warp_field_vjp deform gradient");
    parallel_for(g.voxel_count(), [&](std::size_t v) {
      const auto c = g.coords(v);
      const Vec3 u = deform[v];
      const auto s = detail::make_stencil_with_grad(g, {c[0] + u[0], c[1] + u[1], c[2] + u[2]});
      const Mat3 j = detail::sample3_jacobian(src, s);
      const Vec3 gb = out_grad[v];
      for (int a = 0; a < 3; ++a)
        deform_grad->component(v, a) += gb[0] * j[std::size_t(a)] + gb[1] * j[std::size_t(3 + a)] +
                                         gb[2] * j[std::size_t(6 + a)];
    });
  }
  if (field_grad != nullptr) {
    require_same_grid(g, field_grad->grid(), "warp_field_vjp field gradient");
    detail::deterministic_scatter(g.voxel_count(), field_grad->data(), [&](std::size_t v, double* out) {
      const auto c = g.coords(v);
      const Vec3 u = deform[v];
      detail::scatter3(out, detail::make_stencil(g, {c[0] + u[0], c[1] + u[1], c[2] + u[2]}), out_grad[v]);
    });
  }
}

JacobianField jacobian_fd(const VectorField& field) {
  const GridSpec& g = field.grid();
  require_fd_dims(g);
  JacobianField j(g);
  parallel_for(g.voxel_count(), [&](std::size_t v) {
    const auto c = g.coords(v);
    for (int a = 0; a < 3; ++a) {
      const FdStencil st = fd_stencil(c[std::size_t(a)], g.dims[std::size_t(a)]);
      auto lo = c;
      auto hi = c;
      lo[std::size_t(a)] = st.lo;
      hi[std::size_t(a)] = st.hi;
      const std::size_t vl = g.index(lo[0], lo[1], lo[2]);
      const std::size_t vh = g.index(hi[0], hi[1], hi[2]);
      for (int comp = 0; comp < 3; ++comp)
        j.entry(v, comp, a) = st.scale * (field.component(vh, comp) - field.component(vl, comp));
    }
  });
  return j;
}

void jacobian_fd_adjoint(const JacobianField& jacobian_grad, VectorField& field_grad) {
  const GridSpec& g = field_grad.grid();
  require_same_grid(g, jacobian_grad.grid(), "jacobian_fd_adjoint");
  require_fd_dims(g);
  detail::deterministic_scatter(g.voxel_count(), field_grad.data(), [&](std::size_t v, double* out) {
    const auto c = g.coords(v);
    for (int a = 0; a < 3; ++a) {
      const FdStencil st = fd_stencil(c[std::size_t(a)], g.dims[std::size_t(a)]);
      auto lo = c;
      auto hi = c;
      lo[std::size_t(a)] = st.lo;
      hi[std::size_t(a)] = st.hi;
      const std::size_t vl = g.index(lo[0], lo[1], lo[2]);
      const std::size_t vh = g.index(hi[0], hi[1], hi[2]);
      for (int comp = 0; comp < 3; ++comp) {
        const double jb = st.scale * jacobian_grad.entry(v, comp, a);
        out[3 * vh + std::size_t(comp)] += jb;
        out[3 * vl + std::size_t(comp)] -= jb;
      }
    }
  });
}

Volume jacobian_det(const VectorField& deform) {
  const JacobianField j = jacobian_fd(deform);
  Volume det(deform.grid());
  parallel_for(det.size(), [&](std::size_t v) {
    Mat3 m = j[v];
    m[0] += 1.0;
    m[4] += 1.0;
    m[8] += 1.0;
    det[v] = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
             m[2] * (m[3] * m[7] - m[4] * m[6]);
  });
  return det;
}

GridSpec downsampled_grid(const GridSpec& grid, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  GridSpec out = grid;
  for (std::size_t a = 0; a < 3; ++a) {
    out.dims[a] = (grid.dims[a] + factor - 1) / factor;
    out.spacing[a] = grid.spacing[a] * factor;
    out.origin[a] = grid.origin[a] + 0.5 * (factor - 1) * grid.spacing[a];
  }
  return out;
}

Volume downsample(const Volume& vol, int factor) {
  const GridSpec out_grid = downsampled_grid(vol.grid(), factor);
  if (factor == 1) return vol;
  const GridSpec& g = vol.grid();
  Volume out(out_grid);
  parallel_for(out_grid.voxel_count(), [&](std::size_t v) {
    const auto c = out_grid.coords(v);
    double sum = 0.0;
    int count = 0;
    for (int x = c[0] * factor; x < std::min(g.dims[0], (c[0] + 1) * factor); ++x)
      for (int y = c[1] * factor; y < std::min(g.dims[1], (c[1] + 1) * factor); ++y)
        for (int z = c[2] * factor; z < std::min(g.dims[2], (c[2] + 1) * factor); ++z) {
          sum += vol.at(x, y, z);
          ++count;
        }
    out[v] = sum / count;
  });
  return out;
}

namespace {

// Source voxel coordinates of target voxel v.
Vec3 source_position(const GridSpec& source, const GridSpec& target, std::size_t v) {
  const auto c = target.coords(v);
  Vec3 p;
  for (std::size_t a = 0; a < 3; ++a) {
    const double world = target.origin[a] + c[a] * target.spacing[a];
    p[a] = (world - source.origin[a]) / source.spacing[a];
  }
  return p;
}

}  // namespace

VectorField upsample_field(const VectorField& field, const GridSpec& target) {
  target.validate();
  const GridSpec& src = field.grid();
  if (src == target) return field;
  const Vec3 ratio{src.spacing[0] / target.spacing[0], src.spacing[1] / target.spacing[1],
                   src.spacing[2] / target.spacing[2]};
  VectorField out(target);
  const double* data = field.data().data();
  parallel_for(target.voxel_count(), [&](std::size_t v) {
    const Vec3 s = detail::sample3(data, detail::make_stencil(src, source_position(src, target, v)));
    out.set(v, {s[0] * ratio[0], s[1] * ratio[1], s[2] * ratio[2]});
  });
  return out;
}

VectorField upsample_field_adjoint(const VectorField& target_grad, const GridSpec& source) {
  const GridSpec& target = target_grad.grid();
  if (source == target) return target_grad;
  const Vec3 ratio{source.spacing[0] / target.spacing[0], source.spacing[1] / target.spacing[1],
                   source.spacing[2] / target.spacing[2]};
  VectorField out(source);
  detail::deterministic_scatter(target.voxel_count(), out.data(), [&](std::size_t v, double* acc) {
    const Vec3 g = target_grad[v];
    detail::scatter3(acc, detail::make_stencil(source, source_position(source, target, v)),
                     {g[0] * ratio[0], g[1] * ratio[1], g[2] * ratio[2]});
  });
  return out;
}

}  // namespace longreg
