// The registration objective: similarity of every ordered session pair through
// composed gap deformations, plus the flow regularizers.
#pragma once

#include <array>
#include <vector>

#include "longreg/diffeo.hpp"
#include "longreg/grid.hpp"

namespace longreg {

// Rigid adjustment of one session: rotation R = Rz * Ry * Rx (intrinsic ZYX)
// about the grid center, then a translation in voxel units.
struct RigidParams {
  Vec3 angles{0.0, 0.0, 0.0};  // radians about axes x, y, z
  Vec3 translation{0.0, 0.0, 0.0};
};

Mat3 rotation_matrix(const Vec3& angles);

// u(x) = R (x - c) + c + t - x.
VectorField rigid_displacement(const RigidParams& params, const GridSpec& grid);

// Gradient of sum_x <g(x), u(x)> with respect to (angles, translation).
std::array<double, 6> rigid_displacement_vjp(const RigidParams& params, const VectorField& grad);

VectorField total_deformation(const VectorField& nonlinear, const VectorField& rigid);

struct LossBreakdown {
  int sessions = 0;
  double sim_total = 0.0;
  double l_ss = 0.0;
  double l_l2 = 0.0;
  double l_ts = 0.0;
  double total = 0.0;
  std::vector<double> pair;  // sessions x sessions, row = fixed image; diagonal unused

  double pair_value(int fixed, int moving) const { return pair[std::size_t(fixed * sessions + moving)]; }
};

// Zero mean, unit standard deviation (only the mean is removed for constant volumes).
Volume normalize_intensity(const Volume& vol);

struct SimilarityOptions {
  int window_radius = 1;
  ExpPolicy exp;
};

// sim_total and the pair matrix for flows living on the image grid (one per
// gap) and rigid parameters for sessions 1..N-1.
LossBreakdown all_pairs_similarity(const std::vector<Volume>& images, const std::vector<VectorField>& flows,
                                   const std::vector<RigidParams>& rigid, const SimilarityOptions& options);

// Gradients of sim_total with respect to the gap displacements and the
// per-session rigid displacement fields (entry 0 unused).
struct SimilarityGradients {
  std::vector<VectorField> forward;
  std::vector<VectorField> backward;
  std::vector<VectorField> rigid;
};

// Core pass over all ordered pairs. `images` must already be normalized,
// `epsilon[i]` is the metric regularizer when session i is the fixed image and
// `rigid_fields[j]` is added to every deformation that pulls session j
// (entry 0 is ignored). Fills `grads` when non-null.
LossBreakdown similarity_pass(const std::vector<Volume>& images, const std::vector<double>& epsilon,
                              const GapDisplacements& gaps, const std::vector<VectorField>& rigid_fields,
                              int window_radius, SimilarityGradients* grads);

// (1/(N-1)) sum_k mean ||grad phi_k||_F^2, finite differences on the flow grid.
double reg_spatial(const std::vector<VectorField>& flows);
// (1/(N-1)) sum_k mean ||phi_k||^2.
double reg_l2(const std::vector<VectorField>& flows);
// (1/(N-2)) sum over interior sessions of mean ||phi_{i-1}/dt_{i-1} - phi_i/dt_i||^2,
// both flows oriented forward in time. Zero when there are fewer than 2 gaps.
double reg_temporal(const std::vector<VectorField>& flows, const std::vector<double>& times);

// Accumulate weight * gradient into grads (shaped like flows).
void reg_spatial_grad(const std::vector<VectorField>& flows, double weight, std::vector<VectorField>& grads);
void reg_l2_grad(const std::vector<VectorField>& flows, double weight, std::vector<VectorField>& grads);
void reg_temporal_grad(const std::vector<VectorField>& flows, const std::vector<double>& times, double weight,
                       std::vector<VectorField>& grads);

}  // namespace longreg
