#include "svr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace svr {

namespace fs = std::filesystem;

int Dataset::view_index(int id) const {
  for (std::size_t i = 0; i < views.size(); ++i)
    if (views[i].id == id) return static_cast<int>(i);
  throw UnknownView("view id " + std::to_string(id));
}

Dataset load_dataset(const std::string& dir) {
  Dataset data;
  const fs::path root(dir);
  if (!fs::exists(root / "cameras.txt"))
    throw MissingInput("no cameras.txt under " + dir);
  auto cams = load_cameras((root / "cameras.txt").string());
  std::map<int, Camera> cam_map;
  char name[64];
  for (const auto& [id, cam] : cams) {
    TrainView v;
    v.id = id;
    v.camera = cam;
    std::snprintf(name, sizeof(name), "view_%03d_color.png", id);
    v.color = read_png((root / name).string());
    std::snprintf(name, sizeof(name), "view_%03d_normal.pfm", id);
    v.normal = read_pfm((root / name).string());
    std::snprintf(name, sizeof(name), "view_%03d_depth.pfm", id);
    v.depth = read_pfm((root / name).string());
    if (v.color.width != cam.width || v.color.height != cam.height)
      throw ShapeError("image size mismatch for view " + std::to_string(id));
    data.views.push_back(std::move(v));
    cam_map.emplace(id, cam);
  }
  if (fs::exists(root / "matches.txt")) {
    auto loaded = load_matches((root / "matches.txt").string(), cam_map);
    data.match_sets = std::move(loaded.sets);
  }
  if (fs::exists(root / "scene.txt")) {
    AnalyticScene scene = parse_scene_file((root / "scene.txt").string());
    const Vec3 c = scene.room.center();
    const Vec3 h = 0.55 * scene.room.diagonal();  // room +-10%
    data.scene_bbox = {c - h, c + h};
  } else {
    Eigen::AlignedBox3d hull;
    for (const auto& v : data.views) hull.extend(v.camera.center());
    const Vec3 c = hull.center();
    const Vec3 h = 0.55 * hull.diagonal().cwiseMax(Vec3::Constant(1.0));
    data.scene_bbox = {c - h, c + h};
  }
  data.diagonal = data.scene_bbox.diagonal().norm() / 1.1;
  return data;
}

namespace {

struct OrientedMatches {
  int src_id = -1;
  std::vector<MatchPair> matches;
};

std::vector<OrientedMatches> matches_for_ref(const Dataset& data, int ref_id) {
  std::vector<OrientedMatches> out;
  for (const auto& set : data.match_sets) {
    if (set.ref_view == ref_id) {
      out.push_back({set.src_view, set.matches});
    } else if (set.src_view == ref_id) {
      OrientedMatches om;
      om.src_id = set.ref_view;
      om.matches.reserve(set.matches.size());
      for (const auto& m : set.matches)
        om.matches.push_back({m.pixel_s, m.pixel_r, m.uncertainty});
      out.push_back(std::move(om));
    }
  }
  return out;
}

}  // namespace

void build_priors(Dataset& data, const TrainConfig& cfg) {
  data.selected.assign(data.views.size(), std::nullopt);
  const double eps = cfg.use_angular ? cfg.epsilon : -1.0;
  for (std::size_t r = 0; r < data.views.size(); ++r) {
    const Camera& cam_r = data.views[r].camera;
    auto oriented = matches_for_ref(data, data.views[r].id);
    std::vector<SourceCandidate> candidates;
    for (const auto& om : oriented) {
      if (om.matches.empty()) continue;
      const Camera& cam_s = data.views[data.view_index(om.src_id)].camera;
      MatchSet tmp{data.views[r].id, om.src_id, om.matches};
      double S;
      try {
        S = angular_score(tmp, cam_r, cam_s);
      } catch (const AllUncertain&) {
        continue;
      }
      candidates.push_back({om.src_id, S, static_cast<int>(om.matches.size())});
    }
    auto pick = select_source_view(candidates, eps);
    if (!pick) continue;

    const auto it = std::find_if(oriented.begin(), oriented.end(),
                                 [&](const auto& om) { return om.src_id == *pick; });
    const int s_idx = data.view_index(*pick);
    const Camera& cam_s = data.views[s_idx].camera;
    ViewPairPriors pair;
    pair.ref_view = data.views[r].id;
    pair.src_view = *pick;
    pair.matches = it->matches;
    if (cfg.use_epipolar) {
      try {
        pair.epi_weight = epipolar_weights(fundamental_matrix(cam_r, cam_s),
                                           pair.matches, cfg.gamma);
      } catch (const DegenerateBaseline&) {
        continue;
      }
    } else {
      pair.epi_weight.assign(pair.matches.size(), 0.25);
    }
    triangulated_depth_priors(cam_r, cam_s, pair);

    SelectedPairData sel;
    sel.src_index = s_idx;
    int n_valid = 0;
    for (std::size_t i = 0; i < pair.matches.size(); ++i)
      if (pair.tri_valid[i]) ++n_valid;
    if (n_valid == 0) continue;
    sel.pixel_r.resize(2, n_valid);
    sel.pixel_s.resize(2, n_valid);
    sel.uncertainty.resize(n_valid);
    sel.epi_weight.resize(n_valid);
    sel.tri_depth.resize(n_valid);
    int k = 0;
    for (std::size_t i = 0; i < pair.matches.size(); ++i) {
      if (!pair.tri_valid[i]) continue;
      sel.pixel_r.col(k) = pair.matches[i].pixel_r;
      sel.pixel_s.col(k) = pair.matches[i].pixel_s;
      sel.uncertainty[k] = pair.matches[i].uncertainty;
      sel.epi_weight[k] = pair.epi_weight[i];
      sel.tri_depth[k] = pair.tri_depth[i];
      ++k;
    }
    data.selected[r] = std::move(sel);
  }
}

PriorsReport compute_priors_report(const Dataset& data, const TrainConfig& cfg) {
  PriorsReport report;
  for (const auto& set : data.match_sets) {
    const Camera& cam_r = data.views[data.view_index(set.ref_view)].camera;
    const Camera& cam_s = data.views[data.view_index(set.src_view)].camera;
    PriorsPairReport row;
    row.ref_view = set.ref_view;
    row.src_view = set.src_view;
    row.match_count = static_cast<int>(set.matches.size());
    try {
      row.angular_score = angular_score(set, cam_r, cam_s);
    } catch (const AllUncertain&) {
      row.angular_score = 0.0;
    }
    ViewPairPriors pair;
    pair.matches = set.matches;
    try {
      auto w = epipolar_weights(fundamental_matrix(cam_r, cam_s), set.matches,
                                cfg.gamma);
      row.mean_epi_weight =
          w.empty() ? 0.0
                    : std::accumulate(w.begin(), w.end(), 0.0) / w.size();
    } catch (const DegenerateBaseline&) {
      row.mean_epi_weight = 0.0;
    }
    triangulated_depth_priors(cam_r, cam_s, pair);
    int valid = 0;
    for (bool v : pair.tri_valid) valid += v ? 1 : 0;
    row.valid_fraction =
        pair.tri_valid.empty() ? 0.0
                               : static_cast<double>(valid) / pair.tri_valid.size();
    report.pairs.push_back(row);
  }
  Dataset tmp = data;
  build_priors(tmp, cfg);
  for (std::size_t r = 0; r < tmp.views.size(); ++r)
    report.selected_source[tmp.views[r].id] =
        tmp.selected[r] ? tmp.views[tmp.selected[r]->src_index].id : -1;
  return report;
}

std::string PriorsReport::format_table() const {
  std::ostringstream os;
  os << "ref src     S       H  mean_w  valid\n";
  for (const auto& p : pairs) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%3d %3d %7.4f %6d %7.4f %6.3f\n",
                  p.ref_view, p.src_view, p.angular_score, p.match_count,
                  p.mean_epi_weight, p.valid_fraction);
    os << buf;
  }
  os << "selected source per reference view:\n";
  for (const auto& [ref, src] : selected_source) {
    os << "  view " << ref << " -> ";
    if (src < 0)
      os << "none\n";
    else
      os << src << "\n";
  }
  return os.str();
}

namespace {

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Reprojection of the rendered reference point into the source view as a
// function of rendered depth, with its depth derivative.
struct ReprojPath {
  Vec3 a;  // source-camera coords of the reference origin
  Vec3 b;  // source-camera direction of the reference ray
  Mat3 K;

  ReprojPath(const Camera& cam_s, const Vec3& origin_r, const Vec3& dir_r)
      : K(cam_s.intrinsics) {
    const Mat3 Rt = cam_s.rotation().transpose();
    a = Rt * (origin_r - cam_s.center());
    b = Rt * dir_r;
  }

  // false if the point falls behind the source camera.
  bool eval(double depth, Vec2& pix, Vec2& dpix_ddepth) const {
    const Vec3 q = a + depth * b;
    if (q.z() <= 1e-6) return false;
    const Vec3 w = K * q;
    const Vec3 dw = K * b;
    pix = {w.x() / w.z() - 0.5, w.y() / w.z() - 0.5};
    const double inv_z2 = 1.0 / (w.z() * w.z());
    dpix_ddepth = {(dw.x() * w.z() - w.x() * dw.z()) * inv_z2,
                   (dw.y() * w.z() - w.y() * dw.z()) * inv_z2};
    return true;
  }
};

struct RayWork {
  Vec3 origin;
  Vec3 dir;
  double near = 0.05, far = 1.0;
  std::uint64_t coarse_seed = 0, fine_seed = 0;
  // random-pixel supervision
  Vec3 gt_color = Vec3::Zero();
  Vec3 gt_normal = Vec3::UnitZ();
  // matched-pixel supervision
  double dtilde = 0.0, u = 0.0, w_epi = 0.0;
  Vec2 match_px = Vec2::Zero();
  int src_index = -1;
  double mono_depth = 0.0;
};

struct ChunkSums {
  double rgb = 0.0, normal = 0.0, depth = 0.0, reproj = 0.0, eikonal = 0.0;
  double mono = 0.0;
  FieldGrads grads;
};

constexpr int kRaysPerChunk = 32;

// Renders rays [i0, i1) of `work` through the coarse pass and, when
// enabled, a fine pass around the coarse surface estimate. The returned
// cache corresponds to `batch`.
void render_rays(const SdfField& field, const std::vector<RayWork>& work,
                 std::int64_t i0, std::int64_t i1, int n_coarse, int n_fine,
                 bool fine_enabled, bool need_color, bool need_normal,
                 RayBatch& batch, RenderBatchCache& cache) {
  const int R = static_cast<int>(i1 - i0);
  batch.origin.resize(3, R);
  batch.dir.resize(3, R);
  const int n_total = fine_enabled ? n_coarse + n_fine : n_coarse;
  batch.t.resize(n_total, R);
  batch.delta.resize(n_total, R);

  std::vector<RaySamples> coarse(R);
  for (int r = 0; r < R; ++r) {
    const RayWork& wk = work[i0 + r];
    batch.origin.col(r) = wk.origin;
    batch.dir.col(r) = wk.dir;
    coarse[r] = sample_ray(Ray{wk.origin, wk.dir}, wk.near, wk.far, n_coarse,
                           true, wk.coarse_seed);
  }

  if (!fine_enabled) {
    for (int r = 0; r < R; ++r) {
      batch.t.col(r) = coarse[r].t;
      batch.delta.col(r) = coarse[r].delta;
    }
    render_batch(field, batch, need_color, need_normal, cache);
    return;
  }

  // Probe with the coarse samples only (no gradients) to localize the
  // surface, then resample.
  RayBatch probe;
  probe.origin = batch.origin;
  probe.dir = batch.dir;
  probe.t.resize(n_coarse, R);
  probe.delta.resize(n_coarse, R);
  for (int r = 0; r < R; ++r) {
    probe.t.col(r) = coarse[r].t;
    probe.delta.col(r) = coarse[r].delta;
  }
  RenderBatchCache probe_cache;
  render_batch(field, probe, false, false, probe_cache);

  for (int r = 0; r < R; ++r) {
    const RayWork& wk = work[i0 + r];
    const double wsum = probe_cache.weight_sum[r];
    const double center = wsum > 1e-3 ? probe_cache.depth[r] / wsum
                                      : 0.5 * (wk.near + wk.far);
    const double hw =
        std::max(3.0 * field.beta, 2.0 * (wk.far - wk.near) / n_coarse);
    RaySamples merged = merge_fine_samples(coarse[r], center, hw, n_fine,
                                           wk.near, wk.far, true, wk.fine_seed);
    batch.t.col(r) = merged.t;
    batch.delta.col(r) = merged.delta;
  }
  render_batch(field, batch, need_color, need_normal, cache);
}

struct IterationContext {
  const TrainConfig* cfg;
  const Dataset* data;
  bool fine_enabled = false;
  double inv_random = 0.0;   // 1 / random-ray count
  double inv_matched = 0.0;  // 1 / matched-ray count
  std::optional<ScaleShift> mono_fit;
};

void process_random_chunk(const SdfField& field, const IterationContext& ctx,
                          const std::vector<RayWork>& work, std::int64_t i0,
                          std::int64_t i1, ChunkSums& sums) {
  const TrainConfig& cfg = *ctx.cfg;
  RayBatch batch;
  RenderBatchCache cache;
  render_rays(field, work, i0, i1, cfg.n_coarse, cfg.n_fine, ctx.fine_enabled,
              true, cfg.use_normal, batch, cache);
  const int R = batch.ray_count();

  MatX color_bar = MatX::Zero(3, R);
  Mat3X normal_bar = Mat3X::Zero(3, R);
  VecX depth_bar = VecX::Zero(R);
  for (int r = 0; r < R; ++r) {
    const RayWork& wk = work[i0 + r];
    const Vec3 c_hat = cache.color.col(r);
    sums.rgb += (c_hat - wk.gt_color).lpNorm<1>() * ctx.inv_random;
    for (int ch = 0; ch < 3; ++ch)
      color_bar(ch, r) = sgn(c_hat[ch] - wk.gt_color[ch]) * ctx.inv_random;

    if (cfg.use_normal) {
      const Vec3 n_hat = cache.normal.col(r);
      const double dot = n_hat.dot(wk.gt_normal);
      sums.normal += ((n_hat - wk.gt_normal).lpNorm<1>() + std::abs(1.0 - dot)) *
                     ctx.inv_random;
      Vec3 nb;
      for (int ch = 0; ch < 3; ++ch) nb[ch] = sgn(n_hat[ch] - wk.gt_normal[ch]);
      nb += -sgn(1.0 - dot) * wk.gt_normal;
      normal_bar.col(r) =
          nb * (cfg.weights.lambda_normal * ctx.inv_random);
    }

    if (ctx.mono_fit) {
      const ScaleShift& fit = *ctx.mono_fit;
      const double resid = fit.w * cache.depth[r] + fit.q - wk.mono_depth;
      sums.mono += resid * resid * ctx.inv_random;
      depth_bar[r] = cfg.weights.lambda_depth * 2.0 * fit.w * resid *
                     ctx.inv_random;
    }
  }
  render_batch_backward(field, batch, cache, color_bar, depth_bar, normal_bar,
                        sums.grads);
}

void process_matched_chunk(const SdfField& field, const IterationContext& ctx,
                           const std::vector<RayWork>& work, std::int64_t i0,
                           std::int64_t i1, ChunkSums& sums) {
  const TrainConfig& cfg = *ctx.cfg;
  RayBatch batch;
  RenderBatchCache cache;
  render_rays(field, work, i0, i1, cfg.n_coarse, cfg.n_fine, ctx.fine_enabled,
              false, false, batch, cache);
  const int R = batch.ray_count();

  MatX color_bar = MatX::Zero(3, R);
  Mat3X normal_bar = Mat3X::Zero(3, R);
  VecX depth_bar = VecX::Zero(R);
  for (int r = 0; r < R; ++r) {
    const RayWork& wk = work[i0 + r];
    const double gate = (1.0 - wk.u) * wk.w_epi;
    const double d_hat = cache.depth[r];
    if (cfg.use_depth) {
      sums.depth +=
          gate * std::abs(d_hat - wk.dtilde) / wk.dtilde * ctx.inv_matched;
      depth_bar[r] += cfg.weights.lambda_depth * gate *
                      sgn(d_hat - wk.dtilde) / wk.dtilde * ctx.inv_matched;
    }
    if (cfg.use_reproj) {
      const Camera& cam_s = ctx.data->views[wk.src_index].camera;
      ReprojPath path(cam_s, wk.origin, wk.dir);
      Vec2 pix, dpix;
      if (path.eval(d_hat, pix, dpix)) {
        const Vec2 diff = wk.match_px - pix;
        sums.reproj += gate * diff.lpNorm<1>() * ctx.inv_matched;
        // d|p_s - p'|_1 / dD = -sign(diff) . dp'/dD
        const double dd = -(sgn(diff.x()) * dpix.x() + sgn(diff.y()) * dpix.y());
        depth_bar[r] +=
            cfg.weights.lambda_reproj * gate * dd * ctx.inv_matched;
      }
    }
  }
  render_batch_backward(field, batch, cache, color_bar, depth_bar, normal_bar,
                        sums.grads);
}

void process_eikonal_chunk(const SdfField& field, const Mat3X& pts,
                           std::int64_t i0, std::int64_t i1, double lambda,
                           double inv_count, ChunkSums& sums) {
  const Eigen::Index B = i1 - i0;
  MlpCache cache;
  field.sdf_forward(pts.middleCols(i0, B), true, cache);
  Mat3X g = field.sdf_gradient_from_cache(cache);
  Mat3X g_bar(3, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const double n = std::max(g.col(j).norm(), 1e-12);
    sums.eikonal += (n - 1.0) * (n - 1.0) * inv_count;
    g_bar.col(j) = lambda * inv_count * 2.0 * (n - 1.0) / n * g.col(j);
  }
  MatX out_bar = MatX::Zero(cache.out.rows(), B);
  field.sdf_net.backward(cache, out_bar, &g_bar, sums.grads.sdf, nullptr);
}

struct Adam {
  VecX m, v;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;

  void step(std::vector<SdfField::TensorRef>& params,
            std::vector<SdfField::TensorRef>& grads, double lr) {
    Eigen::Index total = 0;
    for (const auto& p : params) total += p.size;
    if (m.size() != total) {
      m = VecX::Zero(total);
      v = VecX::Zero(total);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      double* p = params[k].data;
      const double* g = grads[k].data;
      for (Eigen::Index i = 0; i < params[k].size; ++i) {
        const Eigen::Index j = off + i;
        m[j] = beta1 * m[j] + (1.0 - beta1) * g[i];
        v[j] = beta2 * v[j] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
      }
      off += params[k].size;
    }
  }
};

void ray_range(const Eigen::AlignedBox3d& box, const Ray& ray, double diag,
               double& near, double& far) {
  double t0, t1;
  if (!ray_box_range(ray, box, t0, t1)) {
    near = 0.05;
    far = diag;
    return;
  }
  near = std::clamp(t0, 0.05, 2.0 * diag);
  far = std::clamp(t1, near + 0.1, 2.0 * diag);
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const IterationCallback& callback) {
  cfg.validate();
  if (data.views.size() < 2) throw TooFewViews("need at least 2 views");

  FieldArch arch = cfg.arch;
  arch.init_radius = 0.375 * data.diagonal;  // 0.75 of the scene half-extent
  TrainResult result{SdfField(arch, cfg.seed), {}};
  SdfField& field = result.field;

  Eigen::AlignedBox3d sample_box = data.scene_bbox;
  const double diag = data.diagonal;

  // Monocular baseline: per-view random scale on the oracle depth stands in
  // for a relative depth prediction.
  std::vector<ImageF> mono;
  if (cfg.mono_baseline) {
    for (std::size_t vi = 0; vi < data.views.size(); ++vi) {
      std::mt19937_64 rng(cfg.seed * 2654435761ull + vi);
      std::uniform_real_distribution<double> U(0.5, 2.0);
      const double a = U(rng);
      ImageF d = data.views[vi].depth;
      for (auto& px : d.data) px = static_cast<float>(px * a);
      mono.push_back(std::move(d));
    }
  }

  auto params = field.tensors();
  FieldGrads grads = field.zero_grads();
  auto grad_refs = SdfField::grad_tensors(grads);
  Adam adam;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U01(0.0, 1.0);
  std::normal_distribution<double> N01(0.0, 1.0);

  const int n_views = static_cast<int>(data.views.size());
  const bool matching_losses = (cfg.use_depth || cfg.use_reproj) &&
                               !cfg.mono_baseline;

  std::vector<RayWork> random_work, matched_work;
  std::vector<ChunkSums> chunk_sums;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const int ref = iter % n_views;
    const TrainView& view = data.views[ref];
    static const std::optional<SelectedPairData> kNoPair;
    const auto& sel =
        data.selected.size() == data.views.size() ? data.selected[ref] : kNoPair;

    int n_matched = 0;
    if (matching_losses && sel) n_matched = cfg.rays_per_batch / 2;
    const int n_random = cfg.rays_per_batch - n_matched;

    // All randomness is drawn serially here so worker chunking cannot
    // change the schedule.
    random_work.clear();
    matched_work.clear();
    std::uniform_int_distribution<int> Ux(0, view.camera.width - 1),
        Uy(0, view.camera.height - 1);
    for (int i = 0; i < n_random; ++i) {
      const int px = Ux(rng), py = Uy(rng);
      RayWork wk;
      const Ray ray = pixel_to_ray(view.camera, Vec2(px, py));
      wk.origin = ray.origin;
      wk.dir = ray.direction;
      ray_range(sample_box, ray, diag, wk.near, wk.far);
      wk.coarse_seed = rng();
      wk.fine_seed = rng();
      for (int ch = 0; ch < 3; ++ch) wk.gt_color[ch] = view.color.at(px, py, ch);
      Vec3 n(view.normal.at(px, py, 0), view.normal.at(px, py, 1),
             view.normal.at(px, py, 2));
      wk.gt_normal = n.norm() > 0.5 ? Vec3(n.normalized()) : Vec3::UnitZ();
      if (cfg.mono_baseline)
        wk.mono_depth = mono[ref].at(px, py);
      random_work.push_back(wk);
    }
    if (n_matched > 0) {
      std::uniform_int_distribution<int> Um(
          0, static_cast<int>(sel->tri_depth.size()) - 1);
      for (int i = 0; i < n_matched; ++i) {
        const int k = Um(rng);
        RayWork wk;
        const Ray ray = pixel_to_ray(view.camera, sel->pixel_r.col(k));
        wk.origin = ray.origin;
        wk.dir = ray.direction;
        ray_range(sample_box, ray, diag, wk.near, wk.far);
        wk.coarse_seed = rng();
        wk.fine_seed = rng();
        wk.dtilde = sel->tri_depth[k];
        wk.u = sel->uncertainty[k];
        wk.w_epi = sel->epi_weight[k];
        wk.match_px = sel->pixel_s.col(k);
        wk.src_index = sel->src_index;
        matched_work.push_back(wk);
      }
    }
    Mat3X eik_pts(3, cfg.eikonal_points);
    for (int i = 0; i < cfg.eikonal_points; ++i) {
      if (i % 2 == 0 || random_work.empty()) {
        for (int a = 0; a < 3; ++a)
          eik_pts(a, i) = sample_box.min()[a] +
                          U01(rng) * (sample_box.max()[a] - sample_box.min()[a]);
      } else {
        // Near-surface jitter around a random coarse sample of the batch.
        const auto& wk =
            random_work[static_cast<std::size_t>(U01(rng) * random_work.size()) %
                        random_work.size()];
        const double t = wk.near + U01(rng) * (wk.far - wk.near);
        const Vec3 p = wk.origin + t * wk.dir;
        for (int a = 0; a < 3; ++a) eik_pts(a, i) = p[a] + 0.05 * N01(rng);
      }
    }

    IterationContext ctx;
    ctx.cfg = &cfg;
    ctx.data = &data;
    ctx.fine_enabled = cfg.n_fine > 0 && iter >= cfg.fine_start;
    ctx.inv_random = n_random > 0 ? 1.0 / n_random : 0.0;
    ctx.inv_matched = n_matched > 0 ? 1.0 / n_matched : 0.0;

    // Monocular baseline needs the batch-level least-squares fit before
    // adjoints exist; render depths once without gradients to solve it.
    if (cfg.mono_baseline && n_random >= 2) {
      VecX d_hat(n_random), d_mono(n_random);
      const std::int64_t chunks64 = num_chunks(n_random, kRaysPerChunk);
      std::vector<VecX> chunk_depth(chunks64);
      parallel_chunks(n_random, kRaysPerChunk,
                      [&](int c, std::int64_t i0, std::int64_t i1) {
                        RayBatch b;
                        RenderBatchCache cache;
                        render_rays(field, random_work, i0, i1, cfg.n_coarse,
                                    cfg.n_fine, ctx.fine_enabled, false, false,
                                    b, cache);
                        chunk_depth[c] = cache.depth;
                      });
      Eigen::Index off = 0;
      for (const auto& cd : chunk_depth) {
        d_hat.segment(off, cd.size()) = cd;
        off += cd.size();
      }
      for (int i = 0; i < n_random; ++i) d_mono[i] = random_work[i].mono_depth;
      try {
        ctx.mono_fit = solve_scale_shift(d_hat, d_mono);
      } catch (const Degenerate&) {
        ctx.mono_fit.reset();
      }
    }

    const std::int64_t n_chunks_r = num_chunks(n_random, kRaysPerChunk);
    const std::int64_t n_chunks_m = num_chunks(n_matched, kRaysPerChunk);
    const std::int64_t n_chunks_e = num_chunks(cfg.eikonal_points, 256);
    const std::int64_t total_chunks = n_chunks_r + n_chunks_m + n_chunks_e;
    while (static_cast<std::int64_t>(chunk_sums.size()) < total_chunks) {
      ChunkSums s;
      s.grads = field.zero_grads();
      chunk_sums.push_back(std::move(s));
    }
    for (std::int64_t c = 0; c < total_chunks; ++c) {
      ChunkSums& s = chunk_sums[c];
      s.rgb = s.normal = s.depth = s.reproj = s.eikonal = s.mono = 0.0;
      s.grads.set_zero();
    }

    parallel_chunks(n_random, kRaysPerChunk,
                    [&](int c, std::int64_t i0, std::int64_t i1) {
                      process_random_chunk(field, ctx, random_work, i0, i1,
                                           chunk_sums[c]);
                    });
    parallel_chunks(n_matched, kRaysPerChunk,
                    [&](int c, std::int64_t i0, std::int64_t i1) {
                      process_matched_chunk(field, ctx, matched_work, i0, i1,
                                            chunk_sums[n_chunks_r + c]);
                    });
    parallel_chunks(cfg.eikonal_points, 256,
                    [&](int c, std::int64_t i0, std::int64_t i1) {
                      process_eikonal_chunk(
                          field, eik_pts, i0, i1, cfg.weights.lambda_eikonal,
                          1.0 / cfg.eikonal_points,
                          chunk_sums[n_chunks_r + n_chunks_m + c]);
                    });

    grads.set_zero();
    LossBreakdown loss;
    for (std::int64_t c = 0; c < total_chunks; ++c) {
      const ChunkSums& s = chunk_sums[c];
      loss.rgb += s.rgb;
      loss.normal += s.normal;
      loss.depth += s.depth + s.mono;
      loss.reproj += s.reproj;
      loss.eikonal += s.eikonal;
      grads.axpy(1.0, s.grads);
    }
    loss.total = total_loss(loss, cfg.weights);

    if (!std::isfinite(loss.total)) {
      std::ostringstream os;
      os << "non-finite loss at iteration " << iter << " (ref view "
         << view.id << "): rgb=" << loss.rgb << " depth=" << loss.depth
         << " reproj=" << loss.reproj << " normal=" << loss.normal
         << " eikonal=" << loss.eikonal << " beta=" << field.beta;
      std::fprintf(stderr, "%s\n", os.str().c_str());
      throw NonFiniteLoss(os.str());
    }

    const double lr =
        iter >= cfg.decay_at * cfg.iterations ? cfg.lr * cfg.lr_decay : cfg.lr;
    adam.step(params, grad_refs, lr);
    field.beta = std::max(field.beta, SdfField::kBetaMin);

    result.history.push_back(loss);
    if (callback) callback(iter, loss);
  }

  if (!cfg.history_path.empty()) save_history_csv(cfg.history_path, result.history);
  if (!cfg.checkpoint_path.empty()) save_checkpoint(cfg.checkpoint_path, field);
  return result;
}

void save_history_csv(const std::string& path,
                      const std::vector<LossBreakdown>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "iteration,total,rgb,depth,reproj,normal,eikonal\n";
  out.precision(10);
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out << i << ',' << h.total << ',' << h.rgb << ',' << h.depth << ','
        << h.reproj << ',' << h.normal << ',' << h.eikonal << '\n';
  }
}

// ---------------------------------------------------------------------------
// gradcheck

namespace {

struct GradCheckFixture {
  SdfField field;
  RayBatch batch;
  Mat3X targets_color;
  Mat3X targets_normal;
  VecX dtilde, u, w_epi;
  Mat2X match_px;
  Camera cam_s;
  Mat3X eik_pts;
  std::string term;

  double loss(const SdfField& f) {
    if (term == "eikonal") {
      MlpCache c;
      f.sdf_forward(eik_pts, true, c);
      return eikonal_loss(f.sdf_gradient_from_cache(c));
    }
    RenderBatchCache cache;
    render_batch(f, batch, term == "rgb", term == "normal", cache);
    if (term == "rgb") return rgb_loss(cache.color, targets_color);
    if (term == "normal") return normal_loss(cache.normal, targets_normal);
    if (term == "depth")
      return interimage_depth_loss(cache.depth, dtilde, u, w_epi);
    if (term == "reproj") {
      const int R = batch.ray_count();
      Mat2X reproj(2, R);
      for (int r = 0; r < R; ++r) {
        ReprojPath path(cam_s, batch.origin.col(r), batch.dir.col(r));
        Vec2 pix, dpix;
        path.eval(cache.depth[r], pix, dpix);
        reproj.col(r) = pix;
      }
      return reprojection_loss(match_px, reproj, u, w_epi);
    }
    throw InvalidInput("unknown gradcheck term " + term);
  }

  void engine_grads(SdfField& f, FieldGrads& grads) {
    grads.set_zero();
    if (term == "eikonal") {
      ChunkSums sums;
      sums.grads = std::move(grads);
      process_eikonal_chunk(f, eik_pts, 0, eik_pts.cols(), 1.0,
                            1.0 / eik_pts.cols(), sums);
      grads = std::move(sums.grads);
      return;
    }
    RenderBatchCache cache;
    render_batch(f, batch, term == "rgb", term == "normal", cache);
    const int R = batch.ray_count();
    MatX color_bar = MatX::Zero(3, R);
    Mat3X normal_bar = Mat3X::Zero(3, R);
    VecX depth_bar = VecX::Zero(R);
    if (term == "rgb") {
      for (int r = 0; r < R; ++r)
        for (int ch = 0; ch < 3; ++ch)
          color_bar(ch, r) =
              sgn(cache.color(ch, r) - targets_color(ch, r)) / R;
    } else if (term == "normal") {
      for (int r = 0; r < R; ++r) {
        const Vec3 n_hat = cache.normal.col(r);
        const Vec3 prior = targets_normal.col(r);
        Vec3 nb;
        for (int ch = 0; ch < 3; ++ch) nb[ch] = sgn(n_hat[ch] - prior[ch]);
        nb += -sgn(1.0 - n_hat.dot(prior)) * prior;
        normal_bar.col(r) = nb / R;
      }
    } else if (term == "depth") {
      for (int r = 0; r < R; ++r)
        depth_bar[r] = (1.0 - u[r]) * w_epi[r] *
                       sgn(cache.depth[r] - dtilde[r]) / dtilde[r] / R;
    } else if (term == "reproj") {
      for (int r = 0; r < R; ++r) {
        ReprojPath path(cam_s, batch.origin.col(r), batch.dir.col(r));
        Vec2 pix, dpix;
        if (!path.eval(cache.depth[r], pix, dpix)) continue;
        const Vec2 diff = match_px.col(r) - pix;
        depth_bar[r] = -(1.0 - u[r]) * w_epi[r] *
                       (sgn(diff.x()) * dpix.x() + sgn(diff.y()) * dpix.y()) / R;
      }
    }
    render_batch_backward(f, batch, cache, color_bar, depth_bar, normal_bar,
                          grads);
  }
};

GradCheckFixture make_fixture(const std::string& term, std::uint64_t seed) {
  GradCheckFixture fx;
  fx.term = term;
  FieldArch arch;
  arch.init_radius = 1.2;
  fx.field = SdfField(arch, seed);
  // Roughen the geometric init so gradients probe generic weights.
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> N01(0.0, 1.0);
  for (auto& t : fx.field.tensors())
    if (t.name != "beta")
      for (Eigen::Index i = 0; i < t.size; ++i) t.data[i] += 0.02 * N01(rng);

  std::uniform_real_distribution<double> U01(0.0, 1.0);
  const int R = 8, N = 24;
  fx.batch.origin.resize(3, R);
  fx.batch.dir.resize(3, R);
  fx.batch.t.resize(N, R);
  fx.batch.delta.resize(N, R);
  for (int r = 0; r < R; ++r) {
    Vec3 o(0.4 * N01(rng), 0.4 * N01(rng), 0.4 * N01(rng));
    Vec3 d(N01(rng), N01(rng), N01(rng));
    d.normalize();
    fx.batch.origin.col(r) = o;
    fx.batch.dir.col(r) = d;
    RaySamples s = sample_ray(Ray{o, d}, 0.2, 3.0, N, true, rng());
    fx.batch.t.col(r) = s.t;
    fx.batch.delta.col(r) = s.delta;
  }
  fx.targets_color.resize(3, R);
  fx.targets_normal.resize(3, R);
  fx.dtilde.resize(R);
  fx.u.resize(R);
  fx.w_epi.resize(R);
  fx.match_px.resize(2, R);
  for (int r = 0; r < R; ++r) {
    for (int ch = 0; ch < 3; ++ch) fx.targets_color(ch, r) = U01(rng);
    Vec3 n(N01(rng), N01(rng), N01(rng));
    fx.targets_normal.col(r) = n.normalized();
    fx.dtilde[r] = 0.5 + 2.0 * U01(rng);
    fx.u[r] = 0.8 * U01(rng);
    fx.w_epi[r] = 0.25 * U01(rng);
    fx.match_px.col(r) = Vec2(80.0 * U01(rng), 60.0 * U01(rng));
  }
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = 70.0;
  K(0, 2) = 40.0;
  K(1, 2) = 30.0;
  Mat4 c2w = Mat4::Identity();
  const double th = 0.35;
  c2w.block<3, 3>(0, 0) =
      Eigen::AngleAxisd(th, Vec3::UnitY()).toRotationMatrix();
  c2w.block<3, 1>(0, 3) = Vec3(-0.9, 0.1, -0.3);
  fx.cam_s = Camera(K, c2w, 80, 60);

  fx.eik_pts.resize(3, 64);
  for (int i = 0; i < 64; ++i)
    fx.eik_pts.col(i) = Vec3(N01(rng), N01(rng), N01(rng)) * 0.6;
  return fx;
}

}  // namespace

GradCheckReport gradcheck(const std::string& term, int n_probes,
                          std::uint64_t seed) {
  GradCheckFixture fx = make_fixture(term, seed);
  FieldGrads grads = fx.field.zero_grads();
  fx.engine_grads(fx.field, grads);

  auto params = fx.field.tensors();
  auto grad_refs = SdfField::grad_tensors(grads);
  Eigen::Index total = 0;
  for (const auto& p : params) total += p.size;

  std::mt19937_64 rng(seed + 99);
  std::uniform_int_distribution<Eigen::Index> pick(0, total - 1);
  GradCheckReport report{term, n_probes, 0.0};
  for (int p = 0; p < n_probes; ++p) {
    Eigen::Index flat = pick(rng);
    Eigen::Index k = 0;
    std::size_t ti = 0;
    for (; ti < params.size(); ++ti) {
      if (flat < k + params[ti].size) break;
      k += params[ti].size;
    }
    double* slot = params[ti].data + (flat - k);
    const double g_engine = grad_refs[ti].data[flat - k];
    const double orig = *slot;
    const double h = 1e-6 * std::max(1.0, std::abs(orig));
    *slot = orig + h;
    const double lp = fx.loss(fx.field);
    *slot = orig - h;
    const double lm = fx.loss(fx.field);
    *slot = orig;
    const double g_fd = (lp - lm) / (2.0 * h);
    const double err =
        std::abs(g_fd - g_engine) /
        std::max({std::abs(g_fd), std::abs(g_engine), 1e-7});
    report.max_rel_err = std::max(report.max_rel_err, err);
  }
  return report;
}

}  // namespace svr
