#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "svr/geometry.hpp"

namespace svr {

struct MatchPair {
  Vec2 pixel_r = Vec2::Zero();
  Vec2 pixel_s = Vec2::Zero();
  double uncertainty = 0.0;  // 0 = fully confident, 1 = no information
};

struct MatchSet {
  int ref_view = -1;
  int src_view = -1;
  std::vector<MatchPair> matches;
};

// Per view-pair priors derived from the matches: triangulated depth along
// the reference ray, epipolar weights, and the angular score used for
// source-view selection.
struct ViewPairPriors {
  int ref_view = -1;
  int src_view = -1;
  std::vector<MatchPair> matches;
  std::vector<double> tri_depth;   // reference-ray depth; valid entries > 0
  std::vector<bool> tri_valid;     // false where triangulation degenerated
  std::vector<double> epi_weight;  // in [0, 0.25]
  double angular_score = 0.0;      // in [0, 2]
  int match_count() const { return static_cast<int>(matches.size()); }
};

struct LoadedMatches {
  std::vector<MatchSet> sets;
  int dropped_count = 0;  // rows rejected for out-of-bounds pixels
};

// Match file: blocks of `ref_id src_id count` followed by count rows of
// `u_r v_r u_s v_s uncertainty`. Out-of-bounds rows are dropped and counted.
LoadedMatches load_matches(const std::string& path,
                           const std::map<int, Camera>& cameras);
void save_matches(const std::string& path, const std::vector<MatchSet>& sets);

// Score for translation and angular variation between the two views:
// 1 - cos of the angle between the certainty-weighted sums of the matched
// pixels' world-frame ray directions. AllUncertain if either weighted sum
// has norm < 1e-9.
double angular_score(const MatchSet& pair, const Camera& cam_r,
                     const Camera& cam_s);

struct SourceCandidate {
  int view = -1;
  double score = 0.0;  // S
  int match_count = 0; // H
};

// Among candidates with score - epsilon > 0, picks the largest match count;
// ties resolved by larger score, then smaller view id. nullopt if none pass.
std::optional<int> select_source_view(const std::vector<SourceCandidate>& candidates,
                                      double epsilon);

// w_i = 0.5 * (1 - sigmoid(gamma * sampson)). Ill-conditioned matches get
// weight 0 instead of propagating.
std::vector<double> epipolar_weights(const Mat3& F,
                                     const std::vector<MatchPair>& matches,
                                     double gamma);

// Fills tri_depth/tri_valid by triangulating every match; degenerate or
// behind-camera matches are flagged invalid rather than dropped.
void triangulated_depth_priors(const Camera& cam_r, const Camera& cam_s,
                               ViewPairPriors& pair);

// Convenience: full prior computation for one match set.
ViewPairPriors build_pair_priors(const MatchSet& set, const Camera& cam_r,
                                 const Camera& cam_s, double gamma);

// Defaults; the filter drops near-parallel mean view directions and gamma
// scales the Sampson distance (squared pixels) inside the weight sigmoid.
constexpr double kDefaultEpsilon = 0.015192246987791869;  // 1 - cos(10 deg)
constexpr double kDefaultGamma = 10.0;

}  // namespace svr
