#include "longreg/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "longreg/adjoint.hpp"
#include "longreg/detail/parallel.hpp"
#include "longreg/similarity.hpp"

namespace longreg {

using detail::deterministic_sum;
using detail::parallel_for;

namespace {

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[std::size_t(3 * i + k)] * b[std::size_t(3 * k + j)];
      c[std::size_t(3 * i + j)] = s;
    }
  return c;
}

Mat3 rot_x(double t) { return {1, 0, 0, 0, std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t)}; }
Mat3 rot_y(double t) { return {std::cos(t), 0, std::sin(t), 0, 1, 0, -std::sin(t), 0, std::cos(t)}; }
Mat3 rot_z(double t) { return {std::cos(t), -std::sin(t), 0, std::sin(t), std::cos(t), 0, 0, 0, 1}; }
Mat3 drot_x(double t) { return {0, 0, 0, 0, -std::sin(t), -std::cos(t), 0, std::cos(t), -std::sin(t)}; }
Mat3 drot_y(double t) { return {-std::sin(t), 0, std::cos(t), 0, 0, 0, -std::cos(t), 0, -std::sin(t)}; }
Mat3 drot_z(double t) { return {-std::sin(t), -std::cos(t), 0, std::cos(t), -std::sin(t), 0, 0, 0, 0}; }

double mean_sq_norm(const VectorField& f) {
  const auto d = f.data();
  return deterministic_sum(d.size(), [&](std::size_t i) { return d[i] * d[i]; }) / double(f.voxel_count());
}

void check_flows(const std::vector<VectorField>& flows, const char* what) {
  if (flows.empty()) throw std::invalid_argument(std::string(what) + ": need at least one gap flow");
  for (const auto& f : flows) require_same_grid(f.grid(), flows.front().grid(), what);
}

void ensure_grads(const std::vector<VectorField>& flows, std::vector<VectorField>& grads) {
  if (grads.size() != flows.size()) throw std::invalid_argument("gradient list does not match flows");
  for (std::size_t k = 0; k < flows.size(); ++k)
    if (grads[k].voxel_count() == 0) grads[k] = VectorField(flows[k].grid());
}

void check_times(const std::vector<double>& times, std::size_t sessions) {
  if (times.size() != sessions)
    throw std::invalid_argument("reg_temporal: expected " + std::to_string(sessions) + " session times, got " +
                                std::to_string(times.size()));
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw std::invalid_argument("reg_temporal: session times must increase");
}

}  // namespace

Mat3 rotation_matrix(const Vec3& angles) {
  return matmul(rot_z(angles[2]), matmul(rot_y(angles[1]), rot_x(angles[0])));
}

VectorField rigid_displacement(const RigidParams& params, const GridSpec& grid) {
  const Mat3 r = rotation_matrix(params.angles);
  const Vec3 c = grid.center();
  VectorField u(grid);
  parallel_for(grid.voxel_count(), [&](std::size_t v) {
    const auto ijk = grid.coords(v);
    const Vec3 d{ijk[0] - c[0], ijk[1] - c[1], ijk[2] - c[2]};
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
      const std::size_t row = std::size_t(3 * a);
      out[std::size_t(a)] = r[row] * d[0] + r[row + 1] * d[1] + r[row + 2] * d[2] - d[std::size_t(a)] +
                            params.translation[std::size_t(a)];
    }
    u.set(v, out);
  });
  return u;
}

std::array<double, 6> rigid_displacement_vjp(const RigidParams& params, const VectorField& grad) {
  const GridSpec& grid = grad.grid();
  const Vec3& t = params.angles;
  const Mat3 rx = rot_x(t[0]), ry = rot_y(t[1]), rz = rot_z(t[2]);
  const std::array<Mat3, 3> dr{matmul(rz, matmul(ry, drot_x(t[0]))), matmul(rz, matmul(drot_y(t[1]), rx)),
                               matmul(drot_z(t[2]), matmul(ry, rx))};
  const Vec3 c = grid.center();
  std::array<double, 6> out{};
  for (int p = 0; p < 3; ++p) {
    const Mat3& m = dr[std::size_t(p)];
    out[std::size_t(p)] = deterministic_sum(grid.voxel_count(), [&](std::size_t v) {
      const auto ijk = grid.coords(v);
      const Vec3 d{ijk[0] - c[0], ijk[1] - c[1], ijk[2] - c[2]};
      double s = 0.0;
      for (int a = 0; a < 3; ++a) {
        const std::size_t row = std::size_t(3 * a);
        s += grad.component(v, a) * (m[row] * d[0] + m[row + 1] * d[1] + m[row + 2] * d[2]);
      }
      return s;
    });
  }
  for (int a = 0; a < 3; ++a)
    out[std::size_t(3 + a)] = deterministic_sum(grid.voxel_count(), [&](std::size_t v) { return grad.component(v, a); });
  return out;
}

VectorField total_deformation(const VectorField& nonlinear, const VectorField& rigid) {
  require_same_grid(nonlinear.grid(), rigid.grid(), "total_deformation");
  return nonlinear + rigid;
}

Volume normalize_intensity(const Volume& vol) {
  const auto d = vol.data();
  const double n = double(d.size());
  const double mean = deterministic_sum(d.size(), [&](std::size_t i) { return d[i]; }) / n;
  const double var = deterministic_sum(d.size(), [&](std::size_t i) { return (d[i] - mean) * (d[i] - mean); }) / n;
  const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  Volume out(vol.grid());
  parallel_for(d.size(), [&](std::size_t i) { out[i] = (d[i] - mean) * scale; });
  return out;
}

LossBreakdown similarity_pass(const std::vector<Volume>& images, const std::vector<double>& epsilon,
                              const GapDisplacements& gaps, const std::vector<VectorField>& rigid_fields,
                              int window_radius, SimilarityGradients* grads) {
  const int n = int(images.size());
  if (n < 2) throw std::invalid_argument("similarity needs at least 2 sessions");
  if (gaps.sessions() != n || gaps.backward.size() != gaps.forward.size())
    throw std::invalid_argument("similarity: gap count does not match session count");
  if (epsilon.size() != images.size()) throw std::invalid_argument("similarity: epsilon count mismatch");
  const bool use_rigid = !rigid_fields.empty();
  if (use_rigid && rigid_fields.size() != images.size())
    throw std::invalid_argument("similarity: rigid field count mismatch");

  LossBreakdown out;
  out.sessions = n;
  out.pair.assign(std::size_t(n * n), 0.0);
  if (grads) {
    const GridSpec& g = images.front().grid();
    grads->forward.assign(std::size_t(n - 1), VectorField(g));
    grads->backward.assign(std::size_t(n - 1), VectorField(g));
    grads->rigid.assign(std::size_t(n), VectorField(g));
  }

  for (int i = 0; i < n; ++i) {
    // Two chains leave session i: towards later sessions through forward gaps
    // and towards earlier sessions through backward gaps.
    for (int dir = 0; dir < 2; ++dir) {
      const bool up = dir == 0;
      const std::vector<VectorField>& links = up ? gaps.forward : gaps.backward;
      std::vector<int> gap_ids;
      if (up)
        for (int g = i; g < n - 1; ++g) gap_ids.push_back(g);
      else
        for (int g = i - 1; g >= 0; --g) gap_ids.push_back(g);
      if (gap_ids.empty()) continue;

      std::vector<VectorField> chain;
      std::vector<VectorField> chain_grad;
      chain.reserve(gap_ids.size());
      for (std::size_t m = 0; m < gap_ids.size(); ++m) {
        const VectorField& link = links[std::size_t(gap_ids[m])];
        if (m == 0)
          chain.push_back(link);
        else
          chain.push_back(chain.back() + warp_field(link, chain.back()));
        const int j = up ? gap_ids[m] + 1 : gap_ids[m];
        const VectorField total =
            (use_rigid && j > 0) ? total_deformation(chain.back(), rigid_fields[std::size_t(j)]) : chain.back();
        VectorField position_grad(total.grid());
        const Volume warped = warp_volume_with_gradient(images[std::size_t(j)], total, position_grad);
        std::vector<double> gw;
        const double loss = grads ? silncc_with_gradient(images[std::size_t(i)], warped, window_radius,
                                                         epsilon[std::size_t(i)], gw)
                                  : silncc(images[std::size_t(i)], warped, window_radius, epsilon[std::size_t(i)]).loss;
        if (!std::isfinite(loss))
          throw std::runtime_error("non-finite similarity for pair (" + std::to_string(i) + "," + std::to_string(j) + ")");
        out.pair[std::size_t(i * n + j)] = loss;
        out.sim_total += loss;
        if (grads) {
          VectorField g(total.grid());
          parallel_for(g.voxel_count(), [&](std::size_t v) {
            for (int a = 0; a < 3; ++a) g.component(v, a) = gw[v] * position_grad.component(v, a);
          });
          if (use_rigid && j > 0) grads->rigid[std::size_t(j)] += g;
          chain_grad.push_back(std::move(g));
        }
      }
      if (!grads) continue;
      std::vector<VectorField>& link_grads = up ? grads->forward : grads->backward;
      for (std::size_t m = chain.size() - 1; m >= 1; --m) {
        // chain[m] = chain[m-1] + warp(link_m, chain[m-1])
        warp_field_vjp(links[std::size_t(gap_ids[m])], chain[m - 1], chain_grad[m],
                       &link_grads[std::size_t(gap_ids[m])], &chain_grad[m - 1]);
        chain_grad[m - 1] += chain_grad[m];
      }
      link_grads[std::size_t(gap_ids[0])] += chain_grad[0];
    }
  }
  return out;
}

LossBreakdown all_pairs_similarity(const std::vector<Volume>& images, const std::vector<VectorField>& flows,
                                   const std::vector<RigidParams>& rigid, const SimilarityOptions& options) {
  const std::size_t n = images.size();
  if (n < 2) throw std::invalid_argument("all_pairs_similarity: need at least 2 sessions");
  if (flows.size() != n - 1)
    throw std::invalid_argument("all_pairs_similarity: expected " + std::to_string(n - 1) + " gap flows, got " +
                                std::to_string(flows.size()));
  if (!rigid.empty() && rigid.size() != n - 1)
    throw std::invalid_argument("all_pairs_similarity: expected " + std::to_string(n - 1) + " rigid parameter sets");
  const GridSpec& grid = images.front().grid();
  std::vector<Volume> norm;
  std::vector<double> eps;
  for (const auto& img : images) {
    require_same_grid(img.grid(), grid, "all_pairs_similarity images");
    norm.push_back(normalize_intensity(img));
    eps.push_back(default_epsilon(norm.back()));
  }
  GapDisplacements gaps;
  for (const auto& f : flows) {
    require_same_grid(f.grid(), grid, "all_pairs_similarity flows");
    gaps.forward.push_back(exp_flow(f, options.exp));
    gaps.backward.push_back(invert_flow_exp(f, options.exp));
  }
  std::vector<VectorField> rigid_fields;
  if (!rigid.empty()) {
    rigid_fields.push_back(VectorField(grid));
    for (const auto& r : rigid) rigid_fields.push_back(rigid_displacement(r, grid));
  }
  LossBreakdown out = similarity_pass(norm, eps, gaps, rigid_fields, options.window_radius, nullptr);
  out.total = out.sim_total;
  return out;
}

double reg_spatial(const std::vector<VectorField>& flows) {
  check_flows(flows, "reg_spatial");
  double total = 0.0;
  for (const auto& f : flows) {
    const JacobianField j = jacobian_fd(f);
    total += deterministic_sum(f.voxel_count(), [&](std::size_t v) {
               double s = 0.0;
               for (int c = 0; c < 3; ++c)
                 for (int a = 0; a < 3; ++a) s += j.entry(v, c, a) * j.entry(v, c, a);
               return s;
             }) /
             double(f.voxel_count());
  }
  return total / double(flows.size());
}

double reg_l2(const std::vector<VectorField>& flows) {
  check_flows(flows, "reg_l2");
  double total = 0.0;
  for (const auto& f : flows) total += mean_sq_norm(f);
  return total / double(flows.size());
}

double reg_temporal(const std::vector<VectorField>& flows, const std::vector<double>& times) {
  check_flows(flows, "reg_temporal");
  check_times(times, flows.size() + 1);
  if (flows.size() < 2) return 0.0;
  double total = 0.0;
  for (std::size_t s = 1; s < flows.size(); ++s) {
    const double w0 = 1.0 / (times[s] - times[s - 1]);
    const double w1 = 1.0 / (times[s + 1] - times[s]);
    const auto a = flows[s - 1].data();
    const auto b = flows[s].data();
    total += deterministic_sum(a.size(), [&](std::size_t i) {
               const double d = w0 * a[i] - w1 * b[i];
               return d * d;
             }) /
             double(flows[s].voxel_count());
  }
  return total / double(flows.size() - 1);
}

void reg_spatial_grad(const std::vector<VectorField>& flows, double weight, std::vector<VectorField>& grads) {
  check_flows(flows, "reg_spatial");
  ensure_grads(flows, grads);
  for (std::size_t k = 0; k < flows.size(); ++k) {
    JacobianField j = jacobian_fd(flows[k]);
    const double scale = 2.0 * weight / (double(flows.size()) * double(flows[k].voxel_count()));
    parallel_for(flows[k].voxel_count(), [&](std::size_t v) {
      for (int c = 0; c < 3; ++c)
        for (int a = 0; a < 3; ++a) j.entry(v, c, a) *= scale;
    });
    jacobian_fd_adjoint(j, grads[k]);
  }
}

void reg_l2_grad(const std::vector<VectorField>& flows, double weight, std::vector<VectorField>& grads) {
  check_flows(flows, "reg_l2");
  ensure_grads(flows, grads);
  for (std::size_t k = 0; k < flows.size(); ++k) {
    const double scale = 2.0 * weight / (double(flows.size()) * double(flows[k].voxel_count()));
    const auto f = flows[k].data();
    auto g = grads[k].data();
    parallel_for(f.size(), [&](std::size_t i) { g[i] += scale * f[i]; });
  }
}

void reg_temporal_grad(const std::vector<VectorField>& flows, const std::vector<double>& times, double weight,
                       std::vector<VectorField>& grads) {
  check_flows(flows, "reg_temporal");
  check_times(times, flows.size() + 1);
  ensure_grads(flows, grads);
  if (flows.size() < 2) return;
  for (std::size_t s = 1; s < flows.size(); ++s) {
    const double w0 = 1.0 / (times[s] - times[s - 1]);
    const double w1 = 1.0 / (times[s + 1] - times[s]);
    const double scale = 2.0 * weight / (double(flows.size() - 1) * double(flows[s].voxel_count()));
    const auto a = flows[s - 1].data();
    const auto b = flows[s].data();
    auto ga = grads[s - 1].data();
    auto gb = grads[s].data();
    parallel_for(a.size(), [&](std::size_t i) {
      const double d = scale * (w0 * a[i] - w1 * b[i]);
      ga[i] += w0 * d;
      gb[i] -= w1 * d;
    });
  }
}

}  // namespace longreg
