// Vector-Jacobian products of the grid operators. Each function accumulates
// (+=) into its gradient outputs so callers can sum contributions.
#pragma once

#include "longreg/grid.hpp"

namespace longreg {

// Warps `vol` by `disp` and also returns d warped(x) / d disp(x) per voxel.
Volume warp_volume_with_gradient(const Volume& vol, const VectorField& disp,
                                 VectorField& position_gradient);

// out(x) = field(x + deform(x)). Given d L / d out, accumulates d L / d field
// (if non-null) and d L / d deform (if non-null).
void warp_field_vjp(const VectorField& field, const VectorField& deform,
                    const VectorField& out_grad, VectorField* field_grad,
                    VectorField* deform_grad);

// Transpose of upsample_field(., target) for a field living on `source`.
VectorField upsample_field_adjoint(const VectorField& target_grad, const GridSpec& source);

// Transpose of jacobian_fd: accumulates into field_grad.
void jacobian_fd_adjoint(const JacobianField& jacobian_grad, VectorField& field_grad);

}  // namespace longreg
