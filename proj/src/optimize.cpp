#include "longreg/optimize.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "longreg/adjoint.hpp"
#include "longreg/detail/parallel.hpp"
#include "longreg/errors.hpp"
#include "longreg/fft_smooth.hpp"
#include "longreg/similarity.hpp"

namespace longreg {

using detail::parallel_for;

namespace {

std::vector<double> session_times(const ImageSeries& series, const RegistrationConfig& cfg) {
  const std::size_t n = series.images.size();
  std::vector<double> t = !cfg.times.empty() ? cfg.times : series.times;
  if (t.empty())
    for (std::size_t i = 0; i < n; ++i) t.push_back(double(i));
  if (t.size() != n)
    throw std::invalid_argument("expected " + std::to_string(n) + " session times, got " + std::to_string(t.size()));
  for (std::size_t i = 1; i < n; ++i)
    if (!(t[i] > t[i - 1])) throw std::invalid_argument("session times must be strictly increasing");
  return t;
}

RigidParams to_stage(const RigidParams& r, int factor) {
  RigidParams s = r;
  for (double& t : s.translation) t /= factor;
  return s;
}

void check_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw DivergenceError(term, std::string("non-finite loss term ") + term);
}

}  // namespace

void RegistrationConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("config: stages must not be empty");
  for (const auto& s : stages) {
    if (s.downsample < 1) throw std::invalid_argument("config: stage downsample must be >= 1");
    if (s.flow_res < 1) throw std::invalid_argument("config: stage flow_res must be >= 1");
    if (s.iterations < 0) throw std::invalid_argument("config: stage iterations must be >= 0");
    if (!(s.lr >= 0.0)) throw std::invalid_argument("config: stage lr must be >= 0");
  }
  if (!(alpha_ss >= 0.0) || !(alpha_l2 >= 0.0) || !(alpha_ts >= 0.0))
    throw std::invalid_argument("config: regularizer weights must be >= 0");
  if (window_radius < 1) throw std::invalid_argument("config: window_radius must be >= 1");
  if (!(flow_smooth_sigma_vox >= 0.0)) throw std::invalid_argument("config: flow_smooth_sigma_vox must be >= 0");
  if (!(rigid_lr >= 0.0)) throw std::invalid_argument("config: rigid_lr must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("config: adam betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("config: adam_eps must be > 0");
  if (exp.min_steps < 1 || exp.max_steps < exp.min_steps || exp.fixed_steps < 0 || !(exp.max_step_norm > 0.0))
    throw std::invalid_argument("config: invalid exp policy");
  if (checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be >= 0");
}

double lr_at(int iter, int n_iters, double base_lr) {
  if (n_iters <= 0) return base_lr;
  const double warm = 0.2 * n_iters;
  if (iter < warm) return base_lr * std::min(1.0, (iter + 1) / warm);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (iter - warm) / (0.8 * n_iters)));
}

void adam_step(OptimState& state, std::span<double> params, std::span<const double> grads, double lr,
               const AdamSettings& settings) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state size mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(settings.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(settings.beta2, double(state.step));
  parallel_for(params.size(), [&](std::size_t i) {
    const double g = grads[i];
    state.m[i] = settings.beta1 * state.m[i] + (1.0 - settings.beta1) * g;
    state.v[i] = settings.beta2 * state.v[i] + (1.0 - settings.beta2) * g * g;
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + settings.eps);
  });
}

StageProblem::StageProblem(const ImageSeries& series, const RegistrationConfig& cfg, const StageConfig& stage)
    : cfg_(cfg), factor_(stage.downsample) {
  if (series.images.size() < 2) throw std::invalid_argument("registration needs at least 2 sessions");
  const GridSpec& full = series.images.front().grid();
  for (const auto& img : series.images) require_same_grid(img.grid(), full, "series images");
  image_grid_ = downsampled_grid(full, stage.downsample);
  flow_grid_ = downsampled_grid(full, stage.flow_res);
  for (int a = 0; a < 3; ++a)
    if (flow_grid_.dims[std::size_t(a)] < 2)
      throw std::invalid_argument("flow grid must have at least 2 voxels per axis; lower flow_res");
  for (const auto& img : series.images) {
    images_.push_back(normalize_intensity(downsample(img, stage.downsample)));
    eps_.push_back(default_epsilon(images_.back()));
  }
  times_ = session_times(series, cfg);
}

VectorField StageProblem::image_flow(const VectorField& theta) const {
  VectorField phi = upsample_field(theta, image_grid_);
  if (cfg_.flow_smooth_sigma_vox > 0.0) phi = gaussian_smooth_padded(phi, cfg_.flow_smooth_sigma_vox);
  return phi;
}

LossBreakdown StageProblem::loss(const Parameters& p) const { return evaluate(p, nullptr); }

LossBreakdown StageProblem::loss_and_grad(const Parameters& p, Parameters& grad) const {
  return evaluate(p, &grad);
}

LossBreakdown StageProblem::evaluate(const Parameters& p, Parameters* grad) const {
  const int n = sessions();
  const std::size_t gaps_n = std::size_t(n - 1);
  if (p.flows.size() != gaps_n)
    throw std::invalid_argument("expected " + std::to_string(gaps_n) + " gap flows, got " +
                                std::to_string(p.flows.size()));
  for (const auto& f : p.flows) require_same_grid(f.grid(), flow_grid_, "flow parameters");
  if (cfg_.rigid && p.rigid.size() != gaps_n)
    throw std::invalid_argument("expected " + std::to_string(gaps_n) + " rigid parameter sets");

  GapDisplacements gaps;
  std::vector<ExpTrace> fwd_traces, bwd_traces;
  for (const auto& theta : p.flows) {
    const VectorField phi = image_flow(theta);
    if (!phi.all_finite()) throw DivergenceError("flow", "non-finite flow parameters");
    const int steps = exp_steps_for(phi, cfg_.exp);
    if (grad) {
      fwd_traces.push_back(exp_flow_traced(phi, steps));
      bwd_traces.push_back(exp_flow_traced(-phi, steps));
      gaps.forward.push_back(fwd_traces.back().result());
      gaps.backward.push_back(bwd_traces.back().result());
    } else {
      gaps.forward.push_back(exp_flow(phi, steps));
      gaps.backward.push_back(invert_flow_exp(phi, steps));
    }
  }

  std::vector<VectorField> rigid_fields;
  if (cfg_.rigid) {
    rigid_fields.push_back(VectorField(image_grid_));
    for (const auto& r : p.rigid) rigid_fields.push_back(rigid_displacement(to_stage(r, factor_), image_grid_));
  }

  SimilarityGradients sim_grads;
  LossBreakdown out;
  try {
    out = similarity_pass(images_, eps_, gaps, rigid_fields, cfg_.window_radius, grad ? &sim_grads : nullptr);
  } catch (const std::runtime_error& e) {
    throw DivergenceError("sim_total", e.what());
  }
  out.l_ss = reg_spatial(p.flows);
  out.l_l2 = reg_l2(p.flows);
  out.l_ts = reg_temporal(p.flows, times_);
  out.total = out.sim_total + cfg_.alpha_ss * out.l_ss + cfg_.alpha_l2 * out.l_l2 + cfg_.alpha_ts * out.l_ts;
  check_finite(out.sim_total, "sim_total");
  check_finite(out.l_ss, "l_ss");
  check_finite(out.l_l2, "l_l2");
  check_finite(out.l_ts, "l_ts");
  if (!grad) return out;

  grad->flows.assign(gaps_n, VectorField());
  for (std::size_t k = 0; k < gaps_n; ++k) {
    VectorField g_phi = exp_flow_vjp(fwd_traces[k], sim_grads.forward[k]);
    g_phi += -exp_flow_vjp(bwd_traces[k], sim_grads.backward[k]);
    if (cfg_.flow_smooth_sigma_vox > 0.0) g_phi = gaussian_smooth_padded(g_phi, cfg_.flow_smooth_sigma_vox);
    grad->flows[k] = upsample_field_adjoint(g_phi, flow_grid_);
  }
  reg_spatial_grad(p.flows, cfg_.alpha_ss, grad->flows);
  reg_l2_grad(p.flows, cfg_.alpha_l2, grad->flows);
  reg_temporal_grad(p.flows, times_, cfg_.alpha_ts, grad->flows);

  grad->rigid.assign(cfg_.rigid ? gaps_n : 0, RigidParams{});
  for (std::size_t j = 1; cfg_.rigid && j <= gaps_n; ++j) {
    const auto g = rigid_displacement_vjp(to_stage(p.rigid[j - 1], factor_), sim_grads.rigid[j]);
    RigidParams& r = grad->rigid[j - 1];
    for (std::size_t a = 0; a < 3; ++a) {
      r.angles[a] = g[a];
      r.translation[a] = g[3 + a] / factor_;
    }
  }
  return out;
}

VectorField RegistrationResult::image_flow(int k) const {
  VectorField phi = upsample_field(params.flows.at(std::size_t(k)), image_grid);
  if (config.flow_smooth_sigma_vox > 0.0) phi = gaussian_smooth_padded(phi, config.flow_smooth_sigma_vox);
  return phi;
}

GapDisplacements RegistrationResult::gap_displacements() const {
  GapDisplacements gaps;
  for (int k = 0; k + 1 < sessions(); ++k) {
    const VectorField phi = image_flow(k);
    const int steps = exp_steps_for(phi, config.exp);
    gaps.forward.push_back(exp_flow(phi, steps));
    gaps.backward.push_back(invert_flow_exp(phi, steps));
  }
  return gaps;
}

VectorField RegistrationResult::deformation(int from, int to) const {
  return compose_chain(gap_displacements(), from, to);
}

Volume RegistrationResult::jacobian_determinant(int from, int to) const {
  return jacobian_det(deformation(from, to));
}

RegistrationResult register_series(const ImageSeries& series, const RegistrationConfig& cfg,
                                   const RegisterHooks& hooks) {
  cfg.validate();
  if (series.images.size() < 2) throw std::invalid_argument("registration needs at least 2 sessions");
  const std::size_t gaps_n = series.images.size() - 1;
  const AdamSettings adam{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};

  OptimizerSnapshot state;
  bool fresh_stage = true;
  if (hooks.resume) {
    state = *hooks.resume;
    if (state.stage < 0 || state.stage >= int(cfg.stages.size()))
      throw std::invalid_argument("checkpoint stage out of range for this config");
    if (state.params.flows.size() != gaps_n) throw std::invalid_argument("checkpoint does not match the series");
    fresh_stage = false;
  } else {
    state.params.rigid.assign(gaps_n, RigidParams{});
  }

  for (int s = state.stage; s < int(cfg.stages.size()); ++s) {
    const StageConfig& stage = cfg.stages[std::size_t(s)];
    const StageProblem problem(series, cfg, stage);
    if (fresh_stage) {
      if (state.params.flows.empty())
        state.params.flows.assign(gaps_n, VectorField(problem.flow_grid()));
      else
        for (auto& f : state.params.flows) f = upsample_field(f, problem.flow_grid());
      state.flow_states.assign(gaps_n, OptimState{});
      state.rigid_states.assign(gaps_n, OptimState{});
      state.stage = s;
      state.iteration = 0;
    }
    fresh_stage = true;

    Parameters grad;
    for (int it = state.iteration; it < stage.iterations; ++it) {
      IterationRecord rec;
      rec.stage = s;
      rec.iteration = it;
      rec.lr = lr_at(it, stage.iterations, stage.lr);
      rec.loss = problem.loss_and_grad(state.params, grad);
      state.trace.push_back(rec);
      if (hooks.on_iteration) hooks.on_iteration(rec);

      for (std::size_t k = 0; k < gaps_n; ++k)
        adam_step(state.flow_states[k], state.params.flows[k].data(), grad.flows[k].data(), rec.lr, adam);
      if (cfg.rigid) {
        const double rigid_lr = lr_at(it, stage.iterations, cfg.rigid_lr);
        for (std::size_t k = 0; k < gaps_n; ++k) {
          RigidParams& r = state.params.rigid[k];
          std::array<double, 6> p{r.angles[0], r.angles[1], r.angles[2],
                                  r.translation[0], r.translation[1], r.translation[2]};
          const RigidParams& g = grad.rigid[k];
          const std::array<double, 6> gv{g.angles[0], g.angles[1], g.angles[2],
                                         g.translation[0], g.translation[1], g.translation[2]};
          adam_step(state.rigid_states[k], p, gv, rigid_lr, adam);
          r.angles = {p[0], p[1], p[2]};
          r.translation = {p[3], p[4], p[5]};
        }
      }
      for (const auto& f : state.params.flows)
        if (!f.all_finite()) throw DivergenceError("flow", "flow parameters became non-finite at stage " +
                                                               std::to_string(s) + " iteration " + std::to_string(it));

      state.iteration = it + 1;
      if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 &&
          state.iteration < stage.iterations)
        hooks.on_checkpoint(state);
    }
    state.iteration = stage.iterations;
    if (hooks.on_checkpoint) hooks.on_checkpoint(state);
  }

  RegistrationResult result;
  result.image_grid = series.images.front().grid();
  result.flow_grid = state.params.flows.front().grid();
  result.config = cfg;
  result.params = std::move(state.params);
  result.trace = std::move(state.trace);
  return result;
}

}  // namespace longreg
