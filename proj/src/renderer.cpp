#include "svr/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace svr {

void RaySamples::validate() const {
  if (t.size() < 2 || t.size() != delta.size())
    throw InvalidRange("sample arrays malformed");
  for (int i = 0; i + 1 < t.size(); ++i)
    if (!(t[i + 1] > t[i])) throw InvalidRange("t not strictly increasing");
  if ((delta.array() <= 0.0).any()) throw InvalidRange("non-positive delta");
}

RaySamples sample_ray(const Ray&, double near, double far, int n_samples,
                      bool stratified, std::uint64_t seed) {
  if (!(near > 0.0) || !(far > near)) throw InvalidRange("need 0 < near < far");
  if (n_samples < 2) throw InvalidRange("need at least 2 samples");
  const double step = (far - near) / n_samples;
  RaySamples s;
  s.t.resize(n_samples);
  s.delta.resize(n_samples);
  if (stratified) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < n_samples; ++i) s.t[i] = near + (i + U(rng)) * step;
  } else {
    for (int i = 0; i < n_samples; ++i) s.t[i] = near + (i + 0.5) * step;
  }
  for (int i = 0; i + 1 < n_samples; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
  s.delta[n_samples - 1] = step;
  return s;
}

RaySamples merge_fine_samples(const RaySamples& coarse, double center,
                              double half_width, int n_fine, double near,
                              double far, bool stratified, std::uint64_t seed) {
  const double lo = std::max(near, center - half_width);
  const double hi = std::min(far, center + half_width);
  std::vector<double> ts(coarse.t.data(), coarse.t.data() + coarse.t.size());
  if (hi > lo && n_fine > 0) {
    const double step = (hi - lo) / n_fine;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < n_fine; ++i)
      ts.push_back(lo + (i + (stratified ? U(rng) : 0.5)) * step);
  } else {
    // No usable window: pad with bin midpoints so the batch stays rectangular.
    const double step = (far - near) / n_fine;
    for (int i = 0; i < n_fine; ++i) ts.push_back(near + (i + 0.25) * step);
  }
  std::sort(ts.begin(), ts.end());
  const int n = static_cast<int>(ts.size());
  RaySamples out;
  out.t.resize(n);
  out.delta.resize(n);
  out.t[0] = ts[0];
  for (int i = 1; i < n; ++i)
    out.t[i] = std::max(ts[i], out.t[i - 1] + 1e-9);
  for (int i = 0; i + 1 < n; ++i) out.delta[i] = out.t[i + 1] - out.t[i];
  out.delta[n - 1] = (far - near) / n;
  return out;
}

void render_batch(const SdfField& field, const RayBatch& batch,
                  bool need_color, bool need_normal, RenderBatchCache& c) {
  const int R = batch.ray_count();
  const int N = batch.sample_count();
  const Eigen::Index M = static_cast<Eigen::Index>(R) * N;
  c.need_color = need_color;
  c.need_normal = need_normal;

  c.points.resize(3, M);
  for (int r = 0; r < R; ++r)
    for (int i = 0; i < N; ++i)
      c.points.col(static_cast<Eigen::Index>(r) * N + i) =
          batch.origin.col(r) + batch.t(i, r) * batch.dir.col(r);

  const bool tangent = need_color || need_normal;
  field.sdf_forward(c.points, tangent, c.sdf);
  if (tangent) {
    c.grad = field.sdf_gradient_from_cache(c.sdf);
    c.grad_norm = c.grad.colwise().norm();
    c.unit_normal.resize(3, M);
    for (Eigen::Index j = 0; j < M; ++j)
      c.unit_normal.col(j) = c.grad.col(j) / std::max(c.grad_norm[j], 1e-12);
  }

  c.sigma.resize(N, R);
  c.alpha.resize(N, R);
  c.expo.resize(N, R);
  c.trans.resize(N, R);
  c.weight.resize(N, R);
  for (int r = 0; r < R; ++r) {
    double T = 1.0;
    for (int i = 0; i < N; ++i) {
      const double s = c.sdf.out(0, static_cast<Eigen::Index>(r) * N + i);
      const double sg = density_from_sdf(s, field.beta);
      const double e = std::exp(-sg * batch.delta(i, r));
      c.sigma(i, r) = sg;
      c.expo(i, r) = e;        // 1 - alpha, formed without cancellation
      c.alpha(i, r) = -std::expm1(-sg * batch.delta(i, r));
      c.trans(i, r) = T;
      c.weight(i, r) = T * c.alpha(i, r);
      T *= e;
    }
  }

  c.depth = (c.weight.array() * batch.t.array()).colwise().sum().transpose();
  c.weight_sum = c.weight.colwise().sum().transpose();
  c.trans_final.resize(R);
  for (int r = 0; r < R; ++r) c.trans_final[r] = c.trans(N - 1, r) * c.expo(N - 1, r);

  if (need_normal) {
    c.normal.setZero(3, R);
    for (int r = 0; r < R; ++r)
      for (int i = 0; i < N; ++i)
        c.normal.col(r) +=
            c.weight(i, r) * c.unit_normal.col(static_cast<Eigen::Index>(r) * N + i);
  } else {
    c.normal.setZero(3, R);
  }

  if (need_color) {
    Mat3X dirs(3, M);
    for (int r = 0; r < R; ++r)
      dirs.middleCols(static_cast<Eigen::Index>(r) * N, N).colwise() =
          batch.dir.col(r);
    field.color_forward(c.points, dirs, c.grad,
                        c.sdf.out.bottomRows(field.arch.feature_dim),
                        c.color_net);
    c.color.setZero(3, R);
    for (int r = 0; r < R; ++r)
      for (int i = 0; i < N; ++i)
        c.color.col(r) +=
            c.weight(i, r) * c.color_net.rgb.col(static_cast<Eigen::Index>(r) * N + i);
  } else {
    c.color.setZero(3, R);
  }
}

void render_batch_backward(const SdfField& field, const RayBatch& batch,
                           RenderBatchCache& c, const MatX& color_bar,
                           const VecX& depth_bar, const Mat3X& normal_bar,
                           FieldGrads& grads) {
  const int R = batch.ray_count();
  const int N = batch.sample_count();
  const Eigen::Index M = static_cast<Eigen::Index>(R) * N;

  // dL/dw for every sample from the three per-ray outputs.
  MatX w_bar = MatX::Zero(N, R);
  for (int r = 0; r < R; ++r) {
    for (int i = 0; i < N; ++i) {
      const Eigen::Index j = static_cast<Eigen::Index>(r) * N + i;
      double v = depth_bar[r] * batch.t(i, r);
      if (c.need_color) v += color_bar.col(r).dot(c.color_net.rgb.col(j));
      if (c.need_normal) v += normal_bar.col(r).dot(c.unit_normal.col(j));
      w_bar(i, r) = v;
    }
  }

  Mat3X grad_bar = Mat3X::Zero(3, M);
  MatX feat_bar;
  if (c.need_color) {
    MatX rgb_bar(3, M);
    for (int r = 0; r < R; ++r)
      for (int i = 0; i < N; ++i)
        rgb_bar.col(static_cast<Eigen::Index>(r) * N + i) =
            c.weight(i, r) * color_bar.col(r);
    Mat3X g_bar_color;
    field.color_backward(c.color_net, rgb_bar, grads, g_bar_color, feat_bar);
    grad_bar = g_bar_color;
  }
  if (c.need_normal) {
    for (int r = 0; r < R; ++r) {
      for (int i = 0; i < N; ++i) {
        const Eigen::Index j = static_cast<Eigen::Index>(r) * N + i;
        const Vec3 nb = c.weight(i, r) * normal_bar.col(r);
        const Vec3 n = c.unit_normal.col(j);
        grad_bar.col(j) +=
            (nb - n.dot(nb) * n) / std::max(c.grad_norm[j], 1e-12);
      }
    }
  }

  // Through the transmittance recurrence. With E_i = 1 - alpha_i,
  // dL/dalpha_k = T_k (w_bar_k - G_k) where
  // G_k = sum_{i>k} w_bar_i alpha_i prod_{k<j<i} E_j, computed by a
  // reverse scan. This form never divides by E and stays finite for
  // opaque samples.
  MatX out_bar = MatX::Zero(c.sdf.out.rows(), M);
  if (feat_bar.size() > 0) out_bar.bottomRows(field.arch.feature_dim) = feat_bar;
  double beta_grad = 0.0;
  for (int r = 0; r < R; ++r) {
    double G = 0.0;
    for (int i = N - 1; i >= 0; --i) {
      const double alpha_bar = c.trans(i, r) * (w_bar(i, r) - G);
      G = w_bar(i, r) * c.alpha(i, r) + c.expo(i, r) * G;
      const double sigma_bar = alpha_bar * batch.delta(i, r) * c.expo(i, r);
      const Eigen::Index j = static_cast<Eigen::Index>(r) * N + i;
      const double s = c.sdf.out(0, j);
      out_bar(0, j) = sigma_bar * density_dsdf(s, field.beta);
      beta_grad += sigma_bar * density_dbeta(s, field.beta);
    }
  }
  grads.beta += beta_grad;

  const bool tangent = c.need_color || c.need_normal;
  field.sdf_net.backward(c.sdf, out_bar, tangent ? &grad_bar : nullptr,
                         grads.sdf, nullptr);
}

RenderOutput render_ray(const SdfField& field, const Ray& ray,
                        const RaySamples& samples) {
  samples.validate();
  const int N = samples.count();
  RayBatch batch;
  batch.origin = ray.origin;
  batch.dir = ray.direction;
  batch.t = samples.t;
  batch.delta = samples.delta;
  RenderBatchCache cache;
  render_batch(field, batch, true, true, cache);
  RenderOutput out;
  out.color = cache.color.col(0);
  out.depth = cache.depth[0];
  out.normal = cache.normal.col(0);
  out.weights = cache.weight.col(0);
  out.transmittance_final = cache.trans_final[0];
  return out;
}

bool ray_box_range(const Ray& ray, const Eigen::AlignedBox3d& box, double& t0,
                   double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    const double o = ray.origin[a];
    if (std::abs(d) < 1e-15) {
      if (o < box.min()[a] || o > box.max()[a]) return false;
      continue;
    }
    double lo = (box.min()[a] - o) / d;
    double hi = (box.max()[a] - o) / d;
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  return t1 > t0;
}

}  // namespace svr
