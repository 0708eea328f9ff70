#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "svr/renderer.hpp"

using namespace svr;

namespace {

SdfField roughened_field(std::uint64_t seed, double init_radius = 1.0) {
  FieldArch arch;
  arch.init_radius = init_radius;
  SdfField field(arch, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> N(0.0, 0.03);
  for (auto& t : field.tensors())
    if (t.name != "beta")
      for (Eigen::Index i = 0; i < t.size; ++i) t.data[i] += N(rng);
  return field;
}

RayBatch one_ray_batch(const Ray& ray, const VecX& t, const VecX& delta) {
  RayBatch b;
  b.origin = ray.origin;
  b.dir = ray.direction;
  b.t = t;
  b.delta = delta;
  return b;
}

}  // namespace

TEST_CASE("sample_ray rejects invalid ranges") {
  Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  CHECK_THROWS_AS(sample_ray(ray, 0.0, 1.0, 8, false, 0), InvalidRange);
  CHECK_THROWS_AS(sample_ray(ray, 1.0, 1.0, 8, false, 0), InvalidRange);
  CHECK_THROWS_AS(sample_ray(ray, 0.1, 2.1, 1, false, 0), InvalidRange);
}

TEST_CASE("sample_ray bin midpoints") {
  Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  RaySamples s = sample_ray(ray, 0.1, 2.1, 4, false, 0);
  REQUIRE(s.count() == 4);
  CHECK(s.t[0] == doctest::Approx(0.35));
  CHECK(s.t[1] == doctest::Approx(0.85));
  CHECK(s.t[2] == doctest::Approx(1.35));
  CHECK(s.t[3] == doctest::Approx(1.85));
  for (int i = 0; i < 4; ++i) CHECK(s.delta[i] == doctest::Approx(0.5));
  s.validate();
}

TEST_CASE("sample_ray stratified determinism and bin membership") {
  Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  RaySamples a = sample_ray(ray, 0.5, 4.5, 16, true, 42);
  RaySamples b = sample_ray(ray, 0.5, 4.5, 16, true, 42);
  CHECK((a.t - b.t).norm() == 0.0);
  const double step = 4.0 / 16;
  for (int i = 0; i < 16; ++i) {
    CHECK(a.t[i] >= 0.5 + i * step);
    CHECK(a.t[i] < 0.5 + (i + 1) * step);
  }
  a.validate();
  CHECK(a.delta[15] == doctest::Approx(step));
}

TEST_CASE("merge_fine_samples keeps samples sorted and in range") {
  Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  RaySamples coarse = sample_ray(ray, 0.2, 5.0, 12, true, 3);
  RaySamples merged =
      merge_fine_samples(coarse, 2.5, 0.4, 8, 0.2, 5.0, true, 4);
  REQUIRE(merged.count() == 20);
  merged.validate();
  CHECK(merged.t.minCoeff() >= 0.2);
  CHECK(merged.t.maxCoeff() <= 5.0);
  int in_window = 0;
  for (int i = 0; i < merged.count(); ++i)
    if (std::abs(merged.t[i] - 2.5) <= 0.4) ++in_window;
  CHECK(in_window >= 8);
}

TEST_CASE("empty space renders black with unit final transmittance") {
  // init radius far away: every queried SDF is deeply negative (air)
  SdfField field = roughened_field(5, 1000.0);
  Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  RenderOutput out = render_ray(field, ray, sample_ray(ray, 0.5, 3.0, 16, false, 0));
  CHECK(out.color.norm() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.weights.sum() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.transmittance_final == doctest::Approx(1.0));
  CHECK(out.depth == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("single opaque sample is a delta surface") {
  // negative radius: the whole space reads as solid
  SdfField field = roughened_field(6, -5.0);
  field.beta = 0.05;
  RayBatch batch = one_ray_batch({Vec3::Zero(), Vec3::UnitZ()},
                                 VecX::Constant(1, 1.5), VecX::Constant(1, 10.0));
  RenderBatchCache cache;
  render_batch(field, batch, true, true, cache);
  CHECK(cache.weight_sum[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(cache.depth[0] == doctest::Approx(1.5).epsilon(1e-9));
  const Vec3 sample_color =
      field.eval(Vec3(0, 0, 1.5), Vec3(0, 0, 1)).color;
  CHECK((cache.color.col(0) - sample_color).norm() < 1e-9);
}

TEST_CASE("two half-opaque samples: hand-unrolled weights") {
  SdfField field = roughened_field(7, -5.0);
  field.beta = 0.1;
  // pick deltas so alpha = 1/2 at both samples given the field's density
  const double t1 = 1.0, t2 = 1.6;
  const double s1 = field.eval(Vec3(0, 0, t1), Vec3(0, 0, 1)).sdf;
  const double s2 = field.eval(Vec3(0, 0, t2), Vec3(0, 0, 1)).sdf;
  VecX t(2), delta(2);
  t << t1, t2;
  delta << std::log(2.0) / density_from_sdf(s1, field.beta),
      std::log(2.0) / density_from_sdf(s2, field.beta);
  RayBatch batch = one_ray_batch({Vec3::Zero(), Vec3::UnitZ()}, t, delta);
  RenderBatchCache cache;
  render_batch(field, batch, false, false, cache);
  CHECK(cache.weight(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cache.weight(1, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(cache.depth[0] ==
        doctest::Approx(0.5 * t1 + 0.25 * t2).epsilon(1e-12));
  CHECK(cache.trans_final[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("render matches an independent per-sample accumulation") {
  SdfField field = roughened_field(8, 0.8);
  field.beta = 0.08;
  Ray ray{Vec3(0.1, -0.2, 0.0), Vec3(0.2, 0.1, 1.0).normalized()};
  RaySamples s = sample_ray(ray, 0.3, 2.5, 24, true, 9);
  RenderOutput out = render_ray(field, ray, s);

  // Accumulate Eq. 1-4 independently through the single-point API.
  double T = 1.0, depth = 0.0, wsum = 0.0;
  Vec3 color = Vec3::Zero(), normal = Vec3::Zero();
  for (int i = 0; i < s.count(); ++i) {
    FieldSample fs = field.eval(ray.at(s.t[i]), ray.direction);
    const double sigma = density_from_sdf(fs.sdf, field.beta);
    const double alpha = 1.0 - std::exp(-sigma * s.delta[i]);
    const double w = T * alpha;
    color += w * fs.color;
    depth += w * s.t[i];
    normal += w * fs.gradient.normalized();
    wsum += w;
    T *= 1.0 - alpha;
  }
  CHECK((out.color - color).norm() < 1e-10);
  CHECK(out.depth == doctest::Approx(depth).epsilon(1e-10));
  CHECK((out.normal - normal).norm() < 1e-10);
  CHECK(out.weights.sum() == doctest::Approx(wsum).epsilon(1e-10));
  CHECK(out.transmittance_final == doctest::Approx(T).epsilon(1e-10));
}

TEST_CASE("transmittance is non-increasing and weights sum below one") {
  SdfField field = roughened_field(10, 0.9);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    Ray ray{Vec3(0.3 * U(rng), 0.3 * U(rng), 0.3 * U(rng)),
            Vec3(U(rng), U(rng), U(rng)).normalized()};
    RaySamples s = sample_ray(ray, 0.1, 3.0, 32, true, 100 + k);
    RayBatch batch = one_ray_batch(ray, s.t, s.delta);
    RenderBatchCache cache;
    render_batch(field, batch, false, false, cache);
    CHECK(cache.trans(0, 0) == doctest::Approx(1.0));
    for (int i = 1; i < 32; ++i) CHECK(cache.trans(i, 0) <= cache.trans(i - 1, 0));
    CHECK(cache.weight.col(0).minCoeff() >= 0.0);
    CHECK(cache.weight_sum[0] <= 1.0 + 1e-6);
  }
}

TEST_CASE("output gradients match finite differences on random rays") {
  SdfField field = roughened_field(12, 0.8);
  field.beta = 0.09;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> U(-1.0, 1.0);

  const int R = 20, N = 16;
  RayBatch batch;
  batch.origin.resize(3, R);
  batch.dir.resize(3, R);
  batch.t.resize(N, R);
  batch.delta.resize(N, R);
  for (int r = 0; r < R; ++r) {
    Ray ray{Vec3(0.3 * U(rng), 0.3 * U(rng), 0.3 * U(rng)),
            Vec3(U(rng), U(rng), U(rng)).normalized()};
    batch.origin.col(r) = ray.origin;
    batch.dir.col(r) = ray.direction;
    RaySamples s = sample_ray(ray, 0.2, 2.2, N, true, 50 + r);
    batch.t.col(r) = s.t;
    batch.delta.col(r) = s.delta;
  }
  // Scalar probe: fixed random projection of (C, D, N) over all rays.
  MatX vc(3, R);
  VecX vd(R);
  Mat3X vn(3, R);
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < 3; ++c) {
      vc(c, r) = U(rng);
      vn(c, r) = U(rng);
    }
    vd[r] = U(rng);
  }
  auto probe = [&](const SdfField& f) {
    RenderBatchCache cache;
    render_batch(f, batch, true, true, cache);
    return (cache.color.array() * vc.array()).sum() +
           cache.depth.dot(vd) + (cache.normal.array() * vn.array()).sum();
  };

  FieldGrads grads = field.zero_grads();
  {
    RenderBatchCache cache;
    render_batch(field, batch, true, true, cache);
    render_batch_backward(field, batch, cache, vc, vd, vn, grads);
  }

  auto params = field.tensors();
  auto grefs = SdfField::grad_tensors(grads);
  Eigen::Index total = 0;
  for (auto& p : params) total += p.size;
  std::uniform_int_distribution<Eigen::Index> pick(0, total - 1);
  double worst = 0.0;
  for (int probe_i = 0; probe_i < 60; ++probe_i) {
    Eigen::Index flat = pick(rng), off = 0;
    std::size_t ti = 0;
    for (; ti < params.size(); ++ti) {
      if (flat < off + params[ti].size) break;
      off += params[ti].size;
    }
    double* slot = params[ti].data + (flat - off);
    const double g_eng = grefs[ti].data[flat - off];
    const double orig = *slot;
    const double h = 1e-6 * std::max(1.0, std::abs(orig));
    *slot = orig + h;
    const double lp = probe(field);
    *slot = orig - h;
    const double lm = probe(field);
    *slot = orig;
    const double g_fd = (lp - lm) / (2 * h);
    worst = std::max(worst, std::abs(g_fd - g_eng) /
                                std::max({std::abs(g_fd), std::abs(g_eng), 1e-7}));
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("gradient accumulation is independent of chunk partition") {
  SdfField field = roughened_field(14, 0.8);
  const int R = 12, N = 8;
  RayBatch batch;
  batch.origin.resize(3, R);
  batch.dir.resize(3, R);
  batch.t.resize(N, R);
  batch.delta.resize(N, R);
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int r = 0; r < R; ++r) {
    Ray ray{Vec3::Zero(), Vec3(U(rng), U(rng), 1.0).normalized()};
    batch.origin.col(r) = ray.origin;
    batch.dir.col(r) = ray.direction;
    RaySamples s = sample_ray(ray, 0.2, 2.0, N, true, 70 + r);
    batch.t.col(r) = s.t;
    batch.delta.col(r) = s.delta;
  }
  MatX cb = MatX::Constant(3, R, 0.1);
  VecX db = VecX::Constant(R, -0.2);
  Mat3X nb = Mat3X::Constant(3, R, 0.05);

  auto run = [&](int split) {
    FieldGrads grads = field.zero_grads();
    for (int part = 0; part < 2; ++part) {
      const int lo = part == 0 ? 0 : split;
      const int hi = part == 0 ? split : R;
      if (lo == hi) continue;
      RayBatch sub;
      sub.origin = batch.origin.middleCols(lo, hi - lo);
      sub.dir = batch.dir.middleCols(lo, hi - lo);
      sub.t = batch.t.middleCols(lo, hi - lo);
      sub.delta = batch.delta.middleCols(lo, hi - lo);
      RenderBatchCache cache;
      render_batch(field, sub, true, true, cache);
      render_batch_backward(field, sub, cache, cb.middleCols(lo, hi - lo),
                            db.segment(lo, hi - lo), nb.middleCols(lo, hi - lo),
                            grads);
    }
    return grads;
  };
  FieldGrads a = run(R);  // single chunk
  FieldGrads b = run(5);  // two chunks
  auto ra = SdfField::grad_tensors(a);
  auto rb = SdfField::grad_tensors(b);
  double worst = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i)
    for (Eigen::Index j = 0; j < ra[i].size; ++j)
      worst = std::max(worst, std::abs(ra[i].data[j] - rb[i].data[j]));
  CHECK(worst < 1e-6);
}

TEST_CASE("ray_box_range slab test") {
  Eigen::AlignedBox3d box(Vec3(-1, -1, -1), Vec3(1, 1, 1));
  double t0, t1;
  REQUIRE(ray_box_range({Vec3(0, 0, -3), Vec3(0, 0, 1)}, box, t0, t1));
  CHECK(t0 == doctest::Approx(2.0));
  CHECK(t1 == doctest::Approx(4.0));
  REQUIRE(ray_box_range({Vec3(0, 0, 0), Vec3(0, 0, 1)}, box, t0, t1));
  CHECK(t0 == doctest::Approx(0.0));
  CHECK(t1 == doctest::Approx(1.0));
  CHECK_FALSE(ray_box_range({Vec3(0, 5, 0), Vec3(0, 0, 1)}, box, t0, t1));
}
