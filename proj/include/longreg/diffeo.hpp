// Log-Euclidean exponentiation of stationary velocity fields and composition
// of consecutive-gap deformations.
#pragma once

#include <vector>

#include "longreg/grid.hpp"

namespace longreg {

struct ExpPolicy {
  int min_steps = 4;
  int max_steps = 10;
  // Largest allowed per-voxel norm of flow / 2^n.
  double max_step_norm = 0.5;
  // When > 0, used verbatim instead of the adaptive rule.
  int fixed_steps = 0;
};

// Smallest n with max|flow| / 2^n <= max_step_norm, clamped to [min, max].
int exp_steps_for(const VectorField& flow, const ExpPolicy& policy = {});

// Scaling and squaring with the additive update u <- u + u o (x + u).
VectorField exp_flow(const VectorField& flow, int n_iter);
VectorField exp_flow(const VectorField& flow, const ExpPolicy& policy = {});

// Exp(-flow).
VectorField invert_flow_exp(const VectorField& flow, int n_iter);
VectorField invert_flow_exp(const VectorField& flow, const ExpPolicy& policy = {});

// Intermediate displacements of one scaling-and-squaring run, kept for the
// reverse pass. steps[0] = flow / 2^n, steps[n] = result.
struct ExpTrace {
  std::vector<VectorField> steps;
  const VectorField& result() const { return steps.back(); }
};
ExpTrace exp_flow_traced(const VectorField& flow, int n_iter);

// d L / d flow given d L / d Exp(flow).
VectorField exp_flow_vjp(const ExpTrace& trace, const VectorField& result_grad);

// forward[k] = Exp(phi_k) pulls session k+1 onto the grid of session k;
// backward[k] = Exp(-phi_k) pulls session k onto the grid of session k+1.
struct GapDisplacements {
  std::vector<VectorField> forward;
  std::vector<VectorField> backward;
  int sessions() const { return int(forward.size()) + 1; }
};

// Gap indices traversed by the chain from session `from` to session `to`,
// in composition order.
std::vector<int> chain_gaps(int from, int to);

// Displacement on the grid of session `to` that pulls session `from` onto it:
// u <- u + gap o (x + u), accumulated gap by gap.
VectorField compose_chain(const GapDisplacements& gaps, int from, int to);

}  // namespace longreg
