// Comparison of an estimated displacement field against ground truth inside a
// region of interest.
#pragma once

#include <cstddef>

#include "longreg/grid.hpp"

namespace longreg {

// Mean Euclidean distance in mm. A null roi means every voxel.
double eu_distance(const VectorField& truth, const VectorField& est, const Mask* roi = nullptr);

// Pearson correlation generalized to vectors: sum of dot products of the
// mean-centered fields over the product of their root sums of squares.
double vector_pcc(const VectorField& truth, const VectorField& est, const Mask* roi = nullptr);

struct BiasFit {
  double slope = 0.0;  // trace(A) / 3
  Mat3 a{};            // est ~= A truth + b
  Vec3 b{};
  double condition = 0.0;  // condition number of the truth covariance
  bool ill_conditioned = false;  // condition > 1e8
  std::size_t n_voxels = 0;
};

// Least-squares affine fit of est on truth. Throws std::domain_error naming
// the null directions when the truth covariance has rank < 3.
BiasFit bias_slope(const VectorField& truth, const VectorField& est, const Mask* roi = nullptr);

}  // namespace longreg
