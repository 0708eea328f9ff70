#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "svr/meshing.hpp"
#include "svr/train.hpp"

using namespace svr;
namespace fs = std::filesystem;

namespace {

// Small end-to-end dataset built in memory through the oracle pipeline.
Dataset tiny_dataset(const std::string& scene_name, int views, int matches,
                     double noise, double outliers, std::uint64_t seed) {
  AnalyticScene scene = build_scene(scene_name);
  CameraRig rig = make_camera_rig(scene, views, "ring", 64, 48);
  Dataset data;
  for (int i = 0; i < views; ++i) {
    TrainView v;
    v.id = i;
    v.camera = rig.cameras[i];
    OracleView view = render_oracle(scene, rig.cameras[i]);
    v.color = view.color;
    v.normal = view.normal;
    v.depth = view.depth;
    data.views.push_back(std::move(v));
  }
  for (int r = 0; r < views; ++r)
    for (int s = r + 1; s < views; ++s) {
      try {
        data.match_sets.push_back(generate_matches(
            scene, rig.cameras[r], rig.cameras[s], r, s, matches, noise,
            outliers, seed + 97 * r + s));
      } catch (const NoOverlap&) {
      }
    }
  const Vec3 c = scene.room.center();
  const Vec3 h = 0.55 * scene.room.diagonal();
  data.scene_bbox = {c - h, c + h};
  data.diagonal = scene.diagonal() * (1.1 / 1.1);
  data.diagonal = scene.diagonal();
  return data;
}

TrainConfig tiny_config(int iters) {
  TrainConfig cfg;
  cfg.iterations = iters;
  cfg.rays_per_batch = 64;
  cfg.n_coarse = 24;
  cfg.n_fine = 8;
  cfg.fine_start = 40;
  cfg.eikonal_points = 64;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("gradcheck: every loss term within 1e-3 of finite differences") {
  for (const std::string term : {"rgb", "depth", "reproj", "normal", "eikonal"}) {
    GradCheckReport rep = gradcheck(term, 60, 17);
    INFO("term ", term, " err ", rep.max_rel_err);
    CHECK(rep.max_rel_err < 1e-3);
  }
}

TEST_CASE("build_priors selects sources and fills valid arrays") {
  Dataset data = tiny_dataset("room-two-chairs", 6, 60, 0.0, 0.0, 5);
  TrainConfig cfg = tiny_config(1);
  build_priors(data, cfg);
  REQUIRE(data.selected.size() == 6);
  int selected_count = 0;
  for (const auto& sel : data.selected) {
    if (!sel) continue;
    ++selected_count;
    CHECK(sel->tri_depth.size() > 0);
    CHECK(sel->tri_depth.minCoeff() > 0.0);
    CHECK(sel->epi_weight.maxCoeff() <= 0.25 + 1e-12);
    CHECK(sel->epi_weight.minCoeff() >= 0.0);
  }
  CHECK(selected_count >= 4);

  // exact matches: every epipolar weight at the maximum
  for (const auto& sel : data.selected)
    if (sel) CHECK(sel->epi_weight.minCoeff() > 0.25 - 1e-9);
}

TEST_CASE("priors report lists every pair and the selection map") {
  Dataset data = tiny_dataset("room-two-chairs", 5, 40, 0.0, 0.0, 6);
  TrainConfig cfg = tiny_config(1);
  PriorsReport rep = compute_priors_report(data, cfg);
  CHECK(rep.pairs.size() == data.match_sets.size());
  CHECK(rep.selected_source.size() == 5);
  const std::string table = rep.format_table();
  CHECK(table.find("selected source") != std::string::npos);
  for (const auto& row : rep.pairs) {
    CHECK(row.angular_score >= 0.0);
    CHECK(row.angular_score <= 2.0);
    CHECK(row.mean_epi_weight > 0.2);  // exact matches
    CHECK(row.valid_fraction > 0.9);
  }
}

TEST_CASE("zero iterations returns the initial field unchanged") {
  Dataset data = tiny_dataset("empty-room", 3, 30, 0.0, 0.0, 7);
  TrainConfig cfg = tiny_config(1);
  build_priors(data, cfg);
  TrainResult one = train(data, cfg);
  // compare against a fresh field with the same seed and arch
  FieldArch arch = cfg.arch;
  arch.init_radius = 0.375 * data.diagonal;
  SdfField fresh(arch, cfg.seed);
  // after exactly one Adam step parameters moved; history has one row
  CHECK(one.history.size() == 1);
  bool any_moved = false;
  auto ta = one.field.tensors();
  auto tb = fresh.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (Eigen::Index j = 0; j < ta[i].size; ++j)
      if (ta[i].data[j] != tb[i].data[j]) any_moved = true;
  CHECK(any_moved);
}

TEST_CASE("training is deterministic given the seed") {
  Dataset data = tiny_dataset("empty-room", 4, 40, 0.3, 0.05, 8);
  TrainConfig cfg = tiny_config(6);
  build_priors(data, cfg);
  TrainResult a = train(data, cfg);
  TrainResult b = train(data, cfg);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total == b.history[i].total);
    CHECK(a.history[i].rgb == b.history[i].rgb);
  }
  auto ta = a.field.tensors();
  auto tb = b.field.tensors();
  for (std::size_t i = 0; i < ta.size(); ++i)
    for (Eigen::Index j = 0; j < ta[i].size; ++j)
      CHECK(ta[i].data[j] == tb[i].data[j]);
}

TEST_CASE("results do not depend on the worker thread count") {
  Dataset data = tiny_dataset("empty-room", 3, 30, 0.0, 0.0, 9);
  TrainConfig cfg = tiny_config(4);
  build_priors(data, cfg);
  set_thread_count(1);
  TrainResult serial = train(data, cfg);
  set_thread_count(2);
  TrainResult parallel = train(data, cfg);
  set_thread_count(0);
  REQUIRE(serial.history.size() == parallel.history.size());
  for (std::size_t i = 0; i < serial.history.size(); ++i)
    CHECK(serial.history[i].total == parallel.history[i].total);
}

TEST_CASE("short training run reduces the loss") {
  Dataset data = tiny_dataset("empty-room", 6, 120, 0.3, 0.05, 10);
  TrainConfig cfg = tiny_config(700);
  cfg.rays_per_batch = 128;
  build_priors(data, cfg);
  TrainResult res = train(data, cfg);
  const double early = res.history[100].total;
  const double late = res.history.back().total;
  INFO("loss at 100: ", early, ", final: ", late);
  CHECK(late < 0.2 * early);
}

TEST_CASE("history csv format") {
  std::vector<LossBreakdown> hist(3);
  hist[1].total = 1.5;
  hist[1].rgb = 0.25;
  const std::string path = (fs::temp_directory_path() / "svr_hist.csv").string();
  save_history_csv(path, hist);
  std::ifstream in(path);
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  CHECK(header == "iteration,total,rgb,depth,reproj,normal,eikonal");
  CHECK(row1.substr(0, 6) == "1,1.5,");
  fs::remove(path);
}

TEST_CASE("mono baseline mode trains without matched rays") {
  Dataset data = tiny_dataset("empty-room", 4, 30, 0.0, 0.0, 11);
  TrainConfig cfg = tiny_config(5);
  cfg.mono_baseline = true;
  build_priors(data, cfg);
  TrainResult res = train(data, cfg);
  CHECK(res.history.size() == 5);
  for (const auto& h : res.history) {
    CHECK(std::isfinite(h.total));
    CHECK(h.reproj == 0.0);  // no reprojection term in baseline mode
  }
}
