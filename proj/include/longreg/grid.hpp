// Regular-grid containers and the sampling / differential operators built on them.
//
// Voxel data is stored row-major with the last axis (z) fastest:
//   index(x, y, z) = (x * ny + y) * nz + z
// Vector fields interleave their three components per voxel. Displacements and
// velocities are kept in voxel units of the grid they live on.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace longreg {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

struct GridSpec {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]);
  }
  std::size_t index(int x, int y, int z) const {
    return (std::size_t(x) * std::size_t(dims[1]) + std::size_t(y)) * std::size_t(dims[2]) +
           std::size_t(z);
  }
  std::array<int, 3> coords(std::size_t v) const {
    const int z = int(v % std::size_t(dims[2]));
    const std::size_t xy = v / std::size_t(dims[2]);
    return {int(xy / std::size_t(dims[1])), int(xy % std::size_t(dims[1])), z};
  }
  // Center of the grid in voxel coordinates.
  Vec3 center() const {
    return {0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1)};
  }

  // Throws std::invalid_argument unless dims >= 1 and spacing > 0.
  void validate() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Throws std::invalid_argument naming `what` when the grids differ.
void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what);

class Volume {
 public:
  Volume() = default;
  explicit Volume(const GridSpec& grid, double fill = 0.0);
  Volume(const GridSpec& grid, std::vector<double> data);

  const GridSpec& grid() const { return grid_; }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  double operator[](std::size_t v) const { return data_[v]; }
  double& operator[](std::size_t v) { return data_[v]; }
  double at(int x, int y, int z) const { return data_[grid_.index(x, y, z)]; }
  double& at(int x, int y, int z) { return data_[grid_.index(x, y, z)]; }

  bool all_finite() const;

 private:
  GridSpec grid_;
  std::vector<double> data_;
};

class VectorField {
 public:
  VectorField() = default;
  explicit VectorField(const GridSpec& grid, const Vec3& fill = {0.0, 0.0, 0.0});
  VectorField(const GridSpec& grid, std::vector<double> data);

  const GridSpec& grid() const { return grid_; }
  std::size_t voxel_count() const { return grid_.voxel_count(); }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  Vec3 operator[](std::size_t v) const { return {data_[3 * v], data_[3 * v + 1], data_[3 * v + 2]}; }
  void set(std::size_t v, const Vec3& value) {
    data_[3 * v] = value[0];
    data_[3 * v + 1] = value[1];
    data_[3 * v + 2] = value[2];
  }
  double& component(std::size_t v, int c) { return data_[3 * v + std::size_t(c)]; }
  double component(std::size_t v, int c) const { return data_[3 * v + std::size_t(c)]; }

  bool all_finite() const;
  // Largest per-voxel Euclidean norm.
  double max_norm() const;

  VectorField& operator+=(const VectorField& other);
  VectorField& operator*=(double s);
  friend VectorField operator+(VectorField a, const VectorField& b) { return a += b; }
  friend VectorField operator*(double s, VectorField a) { return a *= s; }
  VectorField operator-() const { return -1.0 * VectorField(*this); }

 private:
  GridSpec grid_;
  std::vector<double> data_;
};

class Mask {
 public:
  Mask() = default;
  explicit Mask(const GridSpec& grid, bool fill = false);
  Mask(const GridSpec& grid, std::vector<std::uint8_t> data);

  const GridSpec& grid() const { return grid_; }
  std::span<const std::uint8_t> data() const { return data_; }
  std::span<std::uint8_t> data() { return data_; }
  bool operator[](std::size_t v) const { return data_[v] != 0; }
  std::size_t count() const;

 private:
  GridSpec grid_;
  std::vector<std::uint8_t> data_;
};

// Nine partial derivatives per voxel, entry (c, a) = d u_c / d x_a.
class JacobianField {
 public:
  explicit JacobianField(const GridSpec& grid) : grid_(grid), data_(9 * grid.voxel_count(), 0.0) {}
  const GridSpec& grid() const { return grid_; }
  Mat3 operator[](std::size_t v) const;
  double& entry(std::size_t v, int c, int a) { return data_[9 * v + std::size_t(3 * c + a)]; }
  double entry(std::size_t v, int c, int a) const { return data_[9 * v + std::size_t(3 * c + a)]; }

 private:
  GridSpec grid_;
  std::vector<double> data_;
};

// Samples `vol` at the absolute voxel positions stored in `points`. The output
// lives on points.grid(). Positions outside [0, dim-1] are clamped to the edge.
Volume sample_trilinear(const Volume& vol, const VectorField& points);

// vol sampled at x + disp(x); disp must share vol's grid.
Volume warp_volume(const Volume& vol, const VectorField& disp);

// Each component of `field` sampled at x + deform(x).
VectorField warp_field(const VectorField& field, const VectorField& deform);

// Central differences inside, one-sided on the faces. Requires dims >= 2.
JacobianField jacobian_fd(const VectorField& field);

// det(I + grad u) per voxel.
Volume jacobian_det(const VectorField& deform);

// Block-average pooling; partial edge blocks average the voxels they contain.
Volume downsample(const Volume& vol, int factor);

// The pooled grid that downsample() produces for `grid`.
GridSpec downsampled_grid(const GridSpec& grid, int factor);

// Trilinear resampling of each component onto `target` through world
// coordinates. Components are rescaled by source/target spacing so the
// world-space displacement is preserved.
VectorField upsample_field(const VectorField& field, const GridSpec& target);

// Identity positions x (voxel coordinates) on a grid.
VectorField identity_positions(const GridSpec& grid);

}  // namespace longreg

namespace longreg {

// Ordered sessions on one grid with their acquisition times.
struct ImageSeries {
  std::vector<Volume> images;
  std::vector<double> times;  // empty means 0, 1, 2, ...
  Mask mask;                  // optional region of interest
};

}  // namespace longreg
