#pragma once

#include <Eigen/Geometry>

#include "svr/field.hpp"
#include "svr/geometry.hpp"

namespace svr {

struct RaySamples {
  VecX t;      // strictly increasing, inside [near, far]
  VecX delta;  // forward spacings; the last one is capped at (far-near)/N

  int count() const { return static_cast<int>(t.size()); }
  void validate() const;  // InvalidRange on any violated invariant
};

// Uniform bin midpoints, or one uniform draw per bin when stratified.
// InvalidRange unless 0 < near < far and n_samples >= 2.
RaySamples sample_ray(const Ray& ray, double near, double far, int n_samples,
                      bool stratified, std::uint64_t seed);

// Adds n_fine uniform samples in [center-half_width, center+half_width]
// (clamped to [near, far]) to an existing sample set and re-sorts.
RaySamples merge_fine_samples(const RaySamples& coarse, double center,
                              double half_width, int n_fine, double near,
                              double far, bool stratified, std::uint64_t seed);

struct RenderOutput {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  Vec3 normal = Vec3::Zero();  // accumulated, deliberately not renormalized
  VecX weights;                // T_i * alpha_i per sample
  double transmittance_final = 1.0;
};

RenderOutput render_ray(const SdfField& field, const Ray& ray,
                        const RaySamples& samples);

// --- Batched rendering with gradients -------------------------------------
// Rays of one batch share a sample count; sample i of ray r is column
// r*N + i of the flattened per-sample arrays.

struct RayBatch {
  Mat3X origin;  // 3 x R
  Mat3X dir;     // 3 x R, unit
  MatX t;        // N x R
  MatX delta;    // N x R
  int ray_count() const { return static_cast<int>(origin.cols()); }
  int sample_count() const { return static_cast<int>(t.rows()); }
};

struct RenderBatchCache {
  // forward products
  MatX color;        // 3 x R
  VecX depth;        // R
  Mat3X normal;      // 3 x R
  VecX weight_sum;   // R
  VecX trans_final;  // R

  // per-sample state kept for backward
  bool need_color = false, need_normal = false;
  Mat3X points;                   // 3 x (R*N)
  MlpCache sdf;                   // activations (+ tangent when needed)
  Mat3X grad;                     // SDF spatial gradient per sample
  Mat3X unit_normal;              // grad normalized
  VecX grad_norm;                 // R*N
  SdfField::ColorCache color_net; // only when need_color
  MatX sigma, alpha, trans, weight, expo;  // N x R each
};

void render_batch(const SdfField& field, const RayBatch& batch,
                  bool need_color, bool need_normal, RenderBatchCache& cache);

// Accumulates dL/d(parameters) given per-ray adjoints of color, depth and
// normal. Pass zero matrices for unused outputs.
void render_batch_backward(const SdfField& field, const RayBatch& batch,
                           RenderBatchCache& cache, const MatX& color_bar,
                           const VecX& depth_bar, const Mat3X& normal_bar,
                           FieldGrads& grads);

// Slab intersection of a ray with an axis-aligned box. Returns false when
// the ray misses. t range is clipped to t >= 0.
bool ray_box_range(const Ray& ray, const Eigen::AlignedBox3d& box, double& t0,
                   double& t1);

}  // namespace svr
