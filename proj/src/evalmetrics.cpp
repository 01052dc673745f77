#include "longreg/evalmetrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace longreg {

namespace {

// Voxel indices selected by the roi, in increasing order.
std::vector<std::size_t> roi_voxels(const VectorField& truth, const VectorField& est, const Mask* roi) {
  require_same_grid(truth.grid(), est.grid(), "evaluation fields");
  if (roi) require_same_grid(truth.grid(), roi->grid(), "evaluation mask");
  std::vector<std::size_t> idx;
  for (std::size_t v = 0; v < truth.voxel_count(); ++v)
    if (!roi || (*roi)[v]) idx.push_back(v);
  if (idx.empty()) throw std::invalid_argument("evaluation region of interest is empty");
  return idx;
}

Eigen::Vector3d at(const VectorField& f, std::size_t v) { return {f.component(v, 0), f.component(v, 1), f.component(v, 2)}; }

Eigen::Vector3d mean_over(const VectorField& f, const std::vector<std::size_t>& idx) {
  Eigen::Vector3d m = Eigen::Vector3d::Zero();
  for (std::size_t v : idx) m += at(f, v);
  return m / double(idx.size());
}

}  // namespace

double eu_distance(const VectorField& truth, const VectorField& est, const Mask* roi) {
  const auto idx = roi_voxels(truth, est, roi);
  const Vec3& s = truth.grid().spacing;
  const Eigen::Vector3d spacing(s[0], s[1], s[2]);
  double total = 0.0;
  for (std::size_t v : idx) total += (at(truth, v) - at(est, v)).cwiseProduct(spacing).norm();
  return total / double(idx.size());
}

double vector_pcc(const VectorField& truth, const VectorField& est, const Mask* roi) {
  const auto idx = roi_voxels(truth, est, roi);
  const Eigen::Vector3d mt = mean_over(truth, idx);
  const Eigen::Vector3d me = mean_over(est, idx);
  double cross = 0.0, tt = 0.0, ee = 0.0;
  for (std::size_t v : idx) {
    const Eigen::Vector3d t = at(truth, v) - mt;
    const Eigen::Vector3d e = at(est, v) - me;
    cross += t.dot(e);
    tt += t.squaredNorm();
    ee += e.squaredNorm();
  }
  if (tt == 0.0 || ee == 0.0) throw std::domain_error("vector_pcc: a field is constant over the roi");
  return cross / std::sqrt(tt * ee);
}

BiasFit bias_slope(const VectorField& truth, const VectorField& est, const Mask* roi) {
  const auto idx = roi_voxels(truth, est, roi);
  // Normal equations of [t; 1] -> e, with t shifted by its mean for conditioning.
  const Eigen::Vector3d shift = mean_over(truth, idx);
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 3, 4> r = Eigen::Matrix<double, 3, 4>::Zero();
  for (std::size_t v : idx) {
    Eigen::Vector4d x;
    x << at(truth, v) - shift, 1.0;
    m += x * x.transpose();
    r += at(est, v) * x.transpose();
  }
  const double n = double(idx.size());
  const Eigen::Matrix3d cov = m.topLeftCorner<3, 3>() / n;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Eigen::Vector3d lambda = eig.eigenvalues();
  const double top = lambda.maxCoeff();
  BiasFit fit;
  fit.n_voxels = idx.size();
  std::ostringstream deficient;
  int rank_loss = 0;
  for (int k = 0; k < 3; ++k) {
    if (!(lambda[k] > 1e-12 * std::max(top, 1e-300)) || top <= 0.0) {
      const Eigen::Vector3d dir = eig.eigenvectors().col(k);
      deficient << (rank_loss++ ? ", " : "") << "(" << dir[0] << ", " << dir[1] << ", " << dir[2] << ")";
    }
  }
  if (rank_loss > 0)
    throw std::domain_error("bias_slope: truth covariance is rank " + std::to_string(3 - rank_loss) +
                            "; no variation along " + deficient.str());
  fit.condition = top / lambda.minCoeff();
  fit.ill_conditioned = fit.condition > 1e8;

  const Eigen::Matrix<double, 4, 3> sol = m.ldlt().solve(r.transpose());
  const Eigen::Matrix3d a = sol.topRows<3>().transpose();
  const Eigen::Vector3d b = sol.row(3).transpose() - a * shift;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) fit.a[std::size_t(3 * i + j)] = a(i, j);
    fit.b[std::size_t(i)] = b[i];
  }
  fit.slope = a.trace() / 3.0;
  return fit;
}

}  // namespace longreg
