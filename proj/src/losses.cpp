#include "svr/losses.hpp"

#include <cmath>

namespace svr {

void LossWeights::validate() const {
  if (lambda_depth < 0 || lambda_reproj < 0 || lambda_normal < 0 ||
      lambda_eikonal < 0)
    throw InvalidInput("loss weights must be non-negative");
}

double rgb_loss(const Mat3X& rendered, const Mat3X& truth) {
  if (rendered.cols() != truth.cols() || rendered.cols() == 0)
    throw ShapeError("rgb_loss length mismatch");
  return (rendered - truth).cwiseAbs().sum() / rendered.cols();
}

double normal_loss(const Mat3X& rendered, const Mat3X& prior) {
  if (rendered.cols() != prior.cols() || rendered.cols() == 0)
    throw ShapeError("normal_loss length mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rendered.cols(); ++i) {
    acc += (rendered.col(i) - prior.col(i)).lpNorm<1>();
    acc += std::abs(1.0 - rendered.col(i).dot(prior.col(i)));
  }
  return acc / rendered.cols();
}

double eikonal_loss(const Mat3X& gradients) {
  if (gradients.cols() == 0) throw ShapeError("eikonal_loss needs points");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < gradients.cols(); ++i) {
    const double d = gradients.col(i).norm() - 1.0;
    acc += d * d;
  }
  return acc / gradients.cols();
}

double interimage_depth_loss(const VecX& rendered_depth, const VecX& prior_depth,
                             const VecX& uncertainty, const VecX& epi_weight) {
  const Eigen::Index n = rendered_depth.size();
  if (prior_depth.size() != n || uncertainty.size() != n || epi_weight.size() != n)
    throw ShapeError("interimage_depth_loss length mismatch");
  if (n == 0) throw ShapeError("interimage_depth_loss needs rays");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(prior_depth[i] > 0.0)) throw InvalidPrior("non-positive depth prior");
    acc += (1.0 - uncertainty[i]) * epi_weight[i] *
           std::abs(rendered_depth[i] - prior_depth[i]) / prior_depth[i];
  }
  return acc / n;
}

double reprojection_loss(const Mat2X& match_px, const Mat2X& reproj_px,
                         const VecX& uncertainty, const VecX& epi_weight) {
  const Eigen::Index n = match_px.cols();
  if (reproj_px.cols() != n || uncertainty.size() != n || epi_weight.size() != n)
    throw ShapeError("reprojection_loss length mismatch");
  if (n == 0) throw ShapeError("reprojection_loss needs matches");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    acc += (1.0 - uncertainty[i]) * epi_weight[i] *
           (match_px.col(i) - reproj_px.col(i)).lpNorm<1>();
  return acc / n;
}

ScaleShift solve_scale_shift(const VecX& rendered_depth, const VecX& mono_depth) {
  const Eigen::Index n = rendered_depth.size();
  if (mono_depth.size() != n) throw ShapeError("scale_shift length mismatch");
  if (n < 2) throw Degenerate("need at least 2 samples");
  // Normal equations of min |w D + q - M|^2.
  const double sd = rendered_depth.sum();
  const double sdd = rendered_depth.squaredNorm();
  const double sm = mono_depth.sum();
  const double sdm = rendered_depth.dot(mono_depth);
  const double det = n * sdd - sd * sd;
  const double scale = n * sdd + sd * sd;
  if (std::abs(det) < 1e-12 * std::max(1.0, scale))
    throw Degenerate("constant rendered depths");
  ScaleShift out;
  out.w = (n * sdm - sd * sm) / det;
  out.q = (sm * sdd - sd * sdm) / det;
  return out;
}

double monocular_depth_baseline_loss(const VecX& rendered_depth,
                                     const VecX& mono_depth,
                                     const ScaleShift& fit) {
  if (mono_depth.size() != rendered_depth.size())
    throw ShapeError("baseline loss length mismatch");
  return (fit.w * rendered_depth.array() + fit.q - mono_depth.array())
      .square()
      .sum();
}

double monocular_depth_baseline_loss(const VecX& rendered_depth,
                                     const VecX& mono_depth) {
  return monocular_depth_baseline_loss(
      rendered_depth, mono_depth, solve_scale_shift(rendered_depth, mono_depth));
}

double total_loss(const LossBreakdown& c, const LossWeights& w) {
  return c.rgb + w.lambda_depth * c.depth + w.lambda_reproj * c.reproj +
         w.lambda_normal * c.normal + w.lambda_eikonal * c.eikonal;
}

}  // namespace svr
