#pragma once

#include <Eigen/Geometry>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "svr/config.hpp"
#include "svr/field.hpp"
#include "svr/losses.hpp"
#include "svr/matching.hpp"
#include "svr/renderer.hpp"
#include "svr/synthetic.hpp"

namespace svr {

struct TrainView {
  int id = -1;
  Camera camera;
  ImageF color;
  ImageF normal;       // world-frame unit normals
  ImageF depth;        // oracle depth; feeds the monocular baseline
  ImageF mono_depth;   // per-view rescaled relative depth (baseline mode)
};

// Priors for one reference view against its selected source view, reduced
// to the matches whose triangulation is valid.
struct SelectedPairData {
  int src_index = -1;  // index into Dataset::views
  Mat2X pixel_r;
  Mat2X pixel_s;
  VecX uncertainty;
  VecX epi_weight;
  VecX tri_depth;
};

struct Dataset {
  std::vector<TrainView> views;
  std::vector<MatchSet> match_sets;                     // as loaded
  std::vector<std::optional<SelectedPairData>> selected;  // per view
  Eigen::AlignedBox3d scene_bbox;
  double diagonal = 0.0;

  int view_index(int id) const;  // UnknownView if absent
};

// Reads cameras.txt, matches.txt, per-view color/depth/normal maps and, when
// present, scene.txt for the bounding box (camera hull +-10% otherwise).
Dataset load_dataset(const std::string& dir);

// Angular scores, source selection and per-pair weights under the config's
// epsilon/gamma and ablation flags. Fills Dataset::selected.
void build_priors(Dataset& data, const TrainConfig& cfg);

struct PriorsPairReport {
  int ref_view = -1;
  int src_view = -1;
  double angular_score = 0.0;
  int match_count = 0;
  double mean_epi_weight = 0.0;
  double valid_fraction = 0.0;  // triangulation-valid matches
};

// Per-pair table plus the chosen source view per reference (or -1).
struct PriorsReport {
  std::vector<PriorsPairReport> pairs;
  std::map<int, int> selected_source;
  std::string format_table() const;
};
PriorsReport compute_priors_report(const Dataset& data, const TrainConfig& cfg);

struct TrainResult {
  SdfField field;
  std::vector<LossBreakdown> history;
};

using IterationCallback =
    std::function<void(int iteration, const LossBreakdown&)>;

// Round-robin reference views; each batch splits rays between random pixels
// (color/normal supervision) and matched pixels of the selected source view
// (depth/reprojection). Deterministic given cfg.seed and fixed thread-safe
// chunking. NonFiniteLoss aborts with a diagnostic dump.
TrainResult train(const Dataset& data, const TrainConfig& cfg,
                  const IterationCallback& callback = nullptr);

void save_history_csv(const std::string& path,
                      const std::vector<LossBreakdown>& history);

// Finite-difference verification of one loss term's engine gradient on a
// frozen random fixture. term is one of rgb, depth, reproj, normal, eikonal.
struct GradCheckReport {
  std::string term;
  int probes = 0;
  double max_rel_err = 0.0;
};
GradCheckReport gradcheck(const std::string& term, int n_probes,
                          std::uint64_t seed);

}  // namespace svr
