#pragma once

#include <vector>

#include "svr/common.hpp"

namespace svr {

struct LossWeights {
  double lambda_depth = 0.5;
  double lambda_reproj = 0.01;
  double lambda_normal = 1.0;
  double lambda_eikonal = 0.05;
  void validate() const;  // InvalidInput if any weight is negative
};

struct ScaleShift {
  double w = 1.0;
  double q = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  double rgb = 0.0;
  double depth = 0.0;
  double reproj = 0.0;
  double normal = 0.0;
  double eikonal = 0.0;
};

// Mean over rays of the L1 color error.
double rgb_loss(const Mat3X& rendered, const Mat3X& truth);

// Mean of |N_hat - N_bar|_1 + |1 - N_hat . N_bar| per ray; priors must be
// unit norm.
double normal_loss(const Mat3X& rendered, const Mat3X& prior);

// Mean of (|grad| - 1)^2.
double eikonal_loss(const Mat3X& gradients);

// sum_i (1/D~_i)(1-u_i) w_i |D^_i - D~_i| / count. All priors positive.
double interimage_depth_loss(const VecX& rendered_depth, const VecX& prior_depth,
                             const VecX& uncertainty, const VecX& epi_weight);

// sum_i (1-u_i) w_i |p_s_i - p'_s_i|_1 / count, pixel units.
double reprojection_loss(const Mat2X& match_px, const Mat2X& reproj_px,
                         const VecX& uncertainty, const VecX& epi_weight);

// Least-squares (w, q) minimizing sum (w D^ + q - D_bar)^2. Degenerate when
// the rendered depths are constant.
ScaleShift solve_scale_shift(const VecX& rendered_depth, const VecX& mono_depth);

// Scale-invariant monocular baseline: refit residual sum of squares.
double monocular_depth_baseline_loss(const VecX& rendered_depth,
                                     const VecX& mono_depth);
double monocular_depth_baseline_loss(const VecX& rendered_depth,
                                     const VecX& mono_depth,
                                     const ScaleShift& fit);

double total_loss(const LossBreakdown& components, const LossWeights& weights);

}  // namespace svr
