// Command-line pipeline: synthesize oracle data, compute matching priors,
// train the field, extract meshes and score them.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "svr/config.hpp"
#include "svr/meshing.hpp"
#include "svr/synthetic.hpp"
#include "svr/train.hpp"

namespace fs = std::filesystem;
using namespace svr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumeric = 4;

double now_sec() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct StageTimer {
  RunManifest& manifest;
  std::string stage;
  double t0 = now_sec();
  StageTimer(RunManifest& m, std::string s) : manifest(m), stage(std::move(s)) {}
  ~StageTimer() { manifest.timings_sec[stage] = now_sec() - t0; }
};

Config load_merged_config(const std::string& config_path) {
  Config cfg = default_config();
  if (!config_path.empty()) {
    Config file = Config::parse_file(config_path);
    for (const auto& [section, kv] : file.sections())
      for (const auto& [k, v] : kv) cfg.set(section, k, v);
  }
  return cfg;
}

void hash_if_exists(RunManifest& m, const fs::path& p) {
  if (fs::exists(p)) m.input_hashes[p.string()] = hash_file(p.string());
}

int cmd_synth(const Config& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create " + out_dir);
  RunManifest manifest{"synth", cfg, {}, cfg.get_u64("synth", "seed", 1), thread_count(), {}};

  AnalyticScene scene = build_scene(cfg.get("synth", "scene", "room-two-chairs"));
  const int n_views = cfg.get_int("synth", "views", 10);
  CameraRig rig;
  {
    StageTimer t(manifest, "rig");
    rig = make_camera_rig(scene, n_views, cfg.get("synth", "pattern", "ring"),
                          cfg.get_int("synth", "width", 128),
                          cfg.get_int("synth", "height", 96),
                          cfg.get_double("synth", "fov_deg", 75.0));
  }
  std::vector<std::pair<int, Camera>> cams;
  for (int i = 0; i < n_views; ++i) cams.emplace_back(i, rig.cameras[i]);
  save_cameras((fs::path(out_dir) / "cameras.txt").string(), cams);
  save_scene_file((fs::path(out_dir) / "scene.txt").string(), scene);

  {
    StageTimer t(manifest, "render");
    char name[64];
    for (int i = 0; i < n_views; ++i) {
      OracleView view = render_oracle(scene, rig.cameras[i]);
      std::snprintf(name, sizeof(name), "view_%03d_color.png", i);
      write_png((fs::path(out_dir) / name).string(), view.color);
      std::snprintf(name, sizeof(name), "view_%03d_depth.pfm", i);
      write_pfm((fs::path(out_dir) / name).string(), view.depth);
      std::snprintf(name, sizeof(name), "view_%03d_normal.pfm", i);
      write_pfm((fs::path(out_dir) / name).string(), view.normal);
    }
  }

  {
    StageTimer t(manifest, "matches");
    const int per_pair = cfg.get_int("synth", "matches_per_pair", 400);
    const double noise = cfg.get_double("synth", "noise_px", 0.5);
    const double outliers = cfg.get_double("synth", "outlier_rate", 0.1);
    const std::uint64_t seed = cfg.get_u64("synth", "seed", 1);
    std::vector<MatchSet> sets;
    for (int r = 0; r < n_views; ++r)
      for (int s = r + 1; s < n_views; ++s) {
        try {
          sets.push_back(generate_matches(
              scene, rig.cameras[r], rig.cameras[s], r, s, per_pair, noise,
              outliers, seed * 1000003ull + r * 131ull + s));
        } catch (const NoOverlap&) {
          // Pair without co-visible surface: no block written.
        }
      }
    save_matches((fs::path(out_dir) / "matches.txt").string(), sets);
  }

  manifest.write((fs::path(out_dir) / "manifest.json").string());
  std::printf("synth: %d views of %s -> %s\n", n_views, scene.name.c_str(),
              out_dir.c_str());
  return kExitOk;
}

int cmd_priors(const Config& cfg, const std::string& data_dir,
               const std::string& out_path) {
  Dataset data = load_dataset(data_dir);
  if (data.match_sets.empty()) throw MissingInput("no matches in " + data_dir);
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.epsilon = cfg.get_double("priors", "epsilon", tc.epsilon);
  tc.gamma = cfg.get_double("priors", "gamma", tc.gamma);
  PriorsReport report = compute_priors_report(data, tc);
  const std::string table = report.format_table();
  std::fputs(table.c_str(), stdout);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    out << table;
  }
  return kExitOk;
}

int cmd_train(Config cfg, const std::string& data_dir,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  TrainConfig tc = TrainConfig::from_config(cfg);
  tc.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
  tc.history_path = (fs::path(out_dir) / "history.csv").string();

  RunManifest manifest{"train", cfg, {}, tc.seed, thread_count(), {}};
  hash_if_exists(manifest, fs::path(data_dir) / "cameras.txt");
  hash_if_exists(manifest, fs::path(data_dir) / "matches.txt");
  hash_if_exists(manifest, fs::path(data_dir) / "scene.txt");

  Dataset data = load_dataset(data_dir);
  {
    StageTimer t(manifest, "priors");
    build_priors(data, tc);
  }
  {
    StageTimer t(manifest, "train");
    const int report_every = std::max(1, tc.iterations / 20);
    train(data, tc, [&](int iter, const LossBreakdown& l) {
      if (iter % report_every == 0 || iter + 1 == tc.iterations)
        std::printf(
            "iter %6d  total %.4f  rgb %.4f  depth %.4f  reproj %.4f  "
            "normal %.4f  eik %.4f\n",
            iter, l.total, l.rgb, l.depth, l.reproj, l.normal, l.eikonal);
    });
  }
  manifest.write((fs::path(out_dir) / "manifest.json").string());
  std::printf("train: checkpoint at %s\n", tc.checkpoint_path.c_str());
  return kExitOk;
}

Eigen::AlignedBox3d mesh_bbox_for(const Config& cfg, const std::string& data_dir,
                                  const std::string& scene_name) {
  const double inflate = cfg.get_double("mesh", "bbox_inflate", 0.1);
  AnalyticScene scene = build_scene(
      !scene_name.empty()
          ? scene_name
          : (fs::path(data_dir) / "scene.txt").string());
  const Vec3 c = scene.room.center();
  const Vec3 h = (0.5 + 0.5 * inflate) * scene.room.diagonal();
  return {c - h, c + h};
}

int cmd_mesh(const Config& cfg, const std::string& checkpoint,
             const std::string& scene_name, const std::string& data_dir,
             const std::string& out_path) {
  const int res = cfg.get_int("mesh", "resolution", 256);
  Mesh mesh;
  if (!checkpoint.empty()) {
    SdfField field = load_checkpoint(checkpoint);
    mesh = marching_cubes_field(field, mesh_bbox_for(cfg, data_dir, scene_name), res);
  } else if (!scene_name.empty()) {
    AnalyticScene scene = build_scene(scene_name);
    mesh = marching_cubes([&](const Vec3& p) { return scene.sdf(p); },
                          mesh_bbox_for(cfg, "", scene_name), res);
  } else {
    throw MissingInput("mesh needs --checkpoint or --scene");
  }
  if (out_path.size() > 4 && out_path.substr(out_path.size() - 4) == ".obj")
    save_mesh_obj(out_path, mesh);
  else
    save_mesh_ply(out_path, mesh);
  std::printf("mesh: %zu vertices, %zu triangles -> %s\n", mesh.vertices.size(),
              mesh.triangles.size(), out_path.c_str());
  return kExitOk;
}

int cmd_eval(const Config& cfg, const std::string& pred_path,
             const std::string& gt_path, const std::string& gt_scene,
             const std::string& report_path) {
  const int n_points = cfg.get_int("eval", "points", 100000);
  const std::uint64_t seed = cfg.get_u64("eval", "seed", 7);

  Mesh pred = load_mesh(pred_path);
  Mesh gt;
  double diagonal = 0.0;
  if (!gt_scene.empty()) {
    AnalyticScene scene = build_scene(gt_scene);
    diagonal = scene.diagonal();
    const Vec3 c = scene.room.center();
    const Vec3 h = 0.55 * scene.room.diagonal();
    gt = marching_cubes([&](const Vec3& p) { return scene.sdf(p); },
                        {c - h, c + h}, cfg.get_int("mesh", "resolution", 256));
  } else if (!gt_path.empty()) {
    gt = load_mesh(gt_path);
    Eigen::AlignedBox3d box;
    for (const auto& v : gt.vertices) box.extend(v);
    diagonal = box.diagonal().norm();
  } else {
    throw MissingInput("eval needs --gt or --gt-scene");
  }

  double tau = cfg.get_double("eval", "tau", 0.0);
  if (!(tau > 0.0)) tau = cfg.get_double("eval", "tau_rel", 0.02) * diagonal;

  Mat3X pred_cloud = sample_points(pred, n_points, seed);
  Mat3X gt_cloud = sample_points(gt, n_points, seed + 1);
  MetricsReport rep = evaluate(pred_cloud, gt_cloud, tau);
  std::printf("F-score  Acc.    Comp.   Prec.   Recall  (tau=%.4f m)\n", rep.tau);
  std::printf("%-8.3f %-7.3f %-7.3f %-7.3f %-7.3f\n", rep.fscore, rep.accuracy,
              rep.completeness, rep.precision, rep.recall);
  if (!report_path.empty()) save_metrics_json(report_path, rep);
  return kExitOk;
}

int cmd_gradcheck(const Config& cfg, const std::string& term, int probes,
                  std::uint64_t seed) {
  std::vector<std::string> terms;
  if (term == "all")
    terms = {"rgb", "depth", "reproj", "normal", "eikonal"};
  else
    terms = {term};
  bool ok = true;
  for (const auto& t : terms) {
    GradCheckReport rep = gradcheck(t, probes, seed);
    const bool pass = rep.max_rel_err < 1e-3;
    ok = ok && pass;
    std::printf("gradcheck %-8s probes %4d  max rel err %.3e  [%s]\n",
                t.c_str(), rep.probes, rep.max_rel_err, pass ? "ok" : "FAIL");
  }
  (void)cfg;
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view indoor surface reconstruction pipeline"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "configuration file (key = value sections)");

  auto* synth = app.add_subcommand("synth", "generate an oracle dataset");
  std::string synth_out = "run";
  std::string synth_scene, synth_pattern;
  int synth_views = -1;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--scene", synth_scene, "scene name or scene file");
  synth->add_option("--views", synth_views, "number of views");
  synth->add_option("--pattern", synth_pattern, "rig pattern: ring | wall-scan");

  auto* priors = app.add_subcommand("priors", "matching-prior report");
  std::string priors_data, priors_out;
  priors->add_option("--data", priors_data, "dataset directory")->required();
  priors->add_option("--out", priors_out, "write the table here too");

  auto* train_cmd = app.add_subcommand("train", "optimize the field");
  std::string train_data, train_out = "run";
  int train_iters = -1;
  std::int64_t train_seed = -1;
  bool no_normal = false, no_depth = false, no_reproj = false;
  bool no_epipolar = false, no_angular = false, mono_baseline = false;
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_option("--iterations", train_iters, "override iteration count");
  train_cmd->add_option("--seed", train_seed, "override rng seed");
  train_cmd->add_flag("--no-normal", no_normal, "drop the normal loss");
  train_cmd->add_flag("--no-depth", no_depth, "drop the inter-image depth loss");
  train_cmd->add_flag("--no-reproj", no_reproj, "drop the reprojection loss");
  train_cmd->add_flag("--no-epipolar", no_epipolar, "constant epipolar weights");
  train_cmd->add_flag("--no-angular", no_angular, "disable the angular filter");
  train_cmd->add_flag("--mono-baseline", mono_baseline,
                      "swap the inter-image depth loss for the scale-invariant "
                      "monocular baseline");

  auto* mesh_cmd = app.add_subcommand("mesh", "extract the zero level set");
  std::string mesh_ckpt, mesh_scene, mesh_data, mesh_out = "mesh.ply";
  int mesh_res = -1;
  mesh_cmd->add_option("--checkpoint", mesh_ckpt, "field checkpoint");
  mesh_cmd->add_option("--scene", mesh_scene, "analytic scene instead of a field");
  mesh_cmd->add_option("--data", mesh_data, "dataset dir (for the bounding box)");
  mesh_cmd->add_option("--out", mesh_out, "mesh path (.ply or .obj)");
  mesh_cmd->add_option("--resolution", mesh_res, "grid resolution");

  auto* eval_cmd = app.add_subcommand("eval", "score a mesh against ground truth");
  std::string eval_pred, eval_gt, eval_gt_scene, eval_report;
  double eval_tau = -1.0;
  eval_cmd->add_option("--pred", eval_pred, "predicted mesh")->required();
  eval_cmd->add_option("--gt", eval_gt, "ground-truth mesh");
  eval_cmd->add_option("--gt-scene", eval_gt_scene, "analytic ground-truth scene");
  eval_cmd->add_option("--tau", eval_tau, "distance threshold in meters");
  eval_cmd->add_option("--report", eval_report, "metrics JSON path");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check");
  std::string grad_term = "all";
  int grad_probes = 120;
  std::uint64_t grad_seed = 5;
  grad_cmd->add_option("--term", grad_term, "rgb|depth|reproj|normal|eikonal|all");
  grad_cmd->add_option("--probes", grad_probes, "probes per term");
  grad_cmd->add_option("--seed", grad_seed, "fixture seed");

  auto* defaults_cmd = app.add_subcommand("defaults", "print the default config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    Config cfg = load_merged_config(config_path);
    if (synth->parsed()) {
      if (!synth_scene.empty()) cfg.set("synth", "scene", synth_scene);
      if (!synth_pattern.empty()) cfg.set("synth", "pattern", synth_pattern);
      if (synth_views > 0) cfg.set("synth", "views", std::to_string(synth_views));
      return cmd_synth(cfg, synth_out);
    }
    if (priors->parsed()) return cmd_priors(cfg, priors_data, priors_out);
    if (train_cmd->parsed()) {
      if (train_iters > 0) cfg.set("train", "iterations", std::to_string(train_iters));
      if (train_seed >= 0) cfg.set("train", "seed", std::to_string(train_seed));
      if (no_normal) cfg.set("train", "use_normal", "false");
      if (no_depth) cfg.set("train", "use_depth", "false");
      if (no_reproj) cfg.set("train", "use_reproj", "false");
      if (no_epipolar) cfg.set("train", "use_epipolar", "false");
      if (no_angular) cfg.set("train", "use_angular", "false");
      if (mono_baseline) cfg.set("train", "mono_baseline", "true");
      return cmd_train(cfg, train_data, train_out);
    }
    if (mesh_cmd->parsed()) {
      if (mesh_res > 0) cfg.set("mesh", "resolution", std::to_string(mesh_res));
      return cmd_mesh(cfg, mesh_ckpt, mesh_scene, mesh_data, mesh_out);
    }
    if (eval_cmd->parsed()) {
      if (eval_tau > 0) cfg.set("eval", "tau", std::to_string(eval_tau));
      return cmd_eval(cfg, eval_pred, eval_gt, eval_gt_scene, eval_report);
    }
    if (grad_cmd->parsed())
      return cmd_gradcheck(cfg, grad_term, grad_probes, grad_seed);
    if (defaults_cmd->parsed()) {
      std::fputs(cfg.serialize().c_str(), stdout);
      return kExitOk;
    }
  } catch (const NonFiniteLoss& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const InvalidBeta& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return kExitUsage;
}
