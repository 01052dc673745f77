// Gradients of the registration loss, Adam with a warmup-cosine schedule, and
// the multi-resolution driver.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "longreg/diffeo.hpp"
#include "longreg/grid.hpp"
#include "longreg/objective.hpp"

namespace longreg {

struct StageConfig {
  int downsample = 1;  // image pooling factor
  int flow_res = 2;    // flow parameter grid spacing, relative to the full-resolution image
  int iterations = 100;
  double lr = 0.02;
};

struct RegistrationConfig {
  std::vector<StageConfig> stages{{4, 8, 200, 0.1}, {2, 4, 200, 0.05}, {1, 2, 100, 0.02}};
  double alpha_ss = 1.0;
  double alpha_l2 = 0.01;
  double alpha_ts = 1.0;
  int window_radius = 1;
  double flow_smooth_sigma_vox = 1.0;
  bool rigid = true;
  double rigid_lr = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ExpPolicy exp;
  std::vector<double> times;  // overrides the series times when non-empty
  std::uint64_t seed = 0;
  int checkpoint_every = 0;   // iterations between checkpoints, 0 = stage ends only

  void validate() const;
};

// Linear warmup over the first 20% of iterations, then cosine decay to zero.
double lr_at(int iter, int n_iters, double base_lr);

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments of one parameter block.
struct OptimState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

void adam_step(OptimState& state, std::span<double> params, std::span<const double> grads, double lr,
               const AdamSettings& settings = {});

// Optimizer parameters: one flow per gap on the flow grid (flow-grid voxel
// units) and rigid parameters for sessions 1..N-1 (translation in
// full-resolution voxels).
struct Parameters {
  std::vector<VectorField> flows;
  std::vector<RigidParams> rigid;
};

// The loss of one resolution stage.
class StageProblem {
 public:
  StageProblem(const ImageSeries& series, const RegistrationConfig& cfg, const StageConfig& stage);

  const GridSpec& image_grid() const { return image_grid_; }
  const GridSpec& flow_grid() const { return flow_grid_; }
  int sessions() const { return int(images_.size()); }

  // Flow parameters mapped to the stage image grid: smooth(upsample(theta)).
  VectorField image_flow(const VectorField& theta) const;

  LossBreakdown loss(const Parameters& p) const;
  // Loss and exact gradient; grad is reshaped to match p.
  LossBreakdown loss_and_grad(const Parameters& p, Parameters& grad) const;

 private:
  LossBreakdown evaluate(const Parameters& p, Parameters* grad) const;

  const RegistrationConfig& cfg_;
  int factor_;
  GridSpec image_grid_;
  GridSpec flow_grid_;
  std::vector<Volume> images_;
  std::vector<double> eps_;
  std::vector<double> times_;
};

struct IterationRecord {
  int stage = 0;
  int iteration = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

// Everything needed to continue an interrupted run.
struct OptimizerSnapshot {
  int stage = 0;
  int iteration = 0;  // next iteration to run within `stage`
  Parameters params;
  std::vector<OptimState> flow_states;
  std::vector<OptimState> rigid_states;
  std::vector<IterationRecord> trace;
};

struct RegisterHooks {
  std::function<void(const IterationRecord&)> on_iteration;
  std::function<void(const OptimizerSnapshot&)> on_checkpoint;
  std::optional<OptimizerSnapshot> resume;
};

struct RegistrationResult {
  GridSpec image_grid;
  GridSpec flow_grid;
  RegistrationConfig config;
  Parameters params;
  std::vector<IterationRecord> trace;

  int sessions() const { return int(params.flows.size()) + 1; }
  // Gap flow k on the full-resolution image grid.
  VectorField image_flow(int k) const;
  GapDisplacements gap_displacements() const;
  // Nonlinear displacement on the grid of session `to` that pulls session `from`.
  VectorField deformation(int from, int to) const;
  Volume jacobian_determinant(int from, int to) const;
};

// Runs every stage. Throws DivergenceError on a non-finite loss and
// std::invalid_argument on bad input.
RegistrationResult register_series(const ImageSeries& series, const RegistrationConfig& cfg,
                                   const RegisterHooks& hooks = {});

}  // namespace longreg
