// Gaussian smoothing in the Fourier domain: multiply the spectrum by
// exp(-0.5 (f / omega)^2), f in cycles per unit length.
#pragma once

#include <span>
#include <vector>

#include "longreg/grid.hpp"

namespace longreg {

// Periodic filtering of a dense row-major array of rank <= 4. omega is given
// per axis in cycles per sample; a non-finite omega leaves that axis alone.
void gaussian_smooth_periodic(std::span<double> data, std::span<const int> dims,
                              std::span<const double> omega_per_sample);

// omega_s per axis in cycles per mm (scaled by the grid spacing internally).
Volume gaussian_smooth_fft(const Volume& vol, const Vec3& omega_s);
VectorField gaussian_smooth_fft(const VectorField& field, const Vec3& omega_s);

// Cut-off frequency (cycles per unit) whose filter is a Gaussian of std sigma.
double omega_for_sigma(double sigma);

// Zero-padded (non-periodic) smoothing with a Gaussian of std `sigma_vox`
// voxels. The operator is symmetric, so it is its own adjoint.
VectorField gaussian_smooth_padded(const VectorField& field, double sigma_vox);

}  // namespace longreg
