#include "svr/matching.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace svr {

LoadedMatches load_matches(const std::string& path,
                           const std::map<int, Camera>& cameras) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open match file " + path);
  LoadedMatches out;
  std::string line;
  int line_no = 0;
  int remaining = 0;
  MatchSet current;
  const Camera* cam_r = nullptr;
  const Camera* cam_s = nullptr;
  auto flush = [&] {
    if (remaining > 0) throw ParseError("match block truncated at line " +
                                        std::to_string(line_no));
    if (cam_r) out.sets.push_back(std::move(current));
  };
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream row(line);
    if (remaining == 0) {
      int r, s, count;
      if (!(row >> r)) continue;  // blank line
      if (!(row >> s >> count) || count < 0)
        throw ParseError("bad match header at line " + std::to_string(line_no));
      flush();
      auto it_r = cameras.find(r), it_s = cameras.find(s);
      if (it_r == cameras.end() || it_s == cameras.end())
        throw UnknownView("unknown view id at line " + std::to_string(line_no));
      current = MatchSet{r, s, {}};
      cam_r = &it_r->second;
      cam_s = &it_s->second;
      remaining = count;
    } else {
      MatchPair m;
      if (!(row >> m.pixel_r.x() >> m.pixel_r.y() >> m.pixel_s.x() >>
            m.pixel_s.y() >> m.uncertainty))
        throw ParseError("bad match row at line " + std::to_string(line_no));
      if (m.uncertainty < 0.0 || m.uncertainty > 1.0)
        throw ParseError("uncertainty outside [0,1] at line " +
                         std::to_string(line_no));
      --remaining;
      if (!cam_r->in_bounds(m.pixel_r) || !cam_s->in_bounds(m.pixel_s)) {
        ++out.dropped_count;
        continue;
      }
      current.matches.push_back(m);
    }
  }
  flush();
  return out;
}

void save_matches(const std::string& path, const std::vector<MatchSet>& sets) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write match file " + path);
  out << "# ref_id src_id count, then count rows: u_r v_r u_s v_s uncertainty\n";
  out.precision(17);
  for (const auto& set : sets) {
    out << set.ref_view << ' ' << set.src_view << ' ' << set.matches.size()
        << '\n';
    for (const auto& m : set.matches)
      out << m.pixel_r.x() << ' ' << m.pixel_r.y() << ' ' << m.pixel_s.x()
          << ' ' << m.pixel_s.y() << ' ' << m.uncertainty << '\n';
  }
}

double angular_score(const MatchSet& pair, const Camera& cam_r,
                     const Camera& cam_s) {
  Vec3 sum_r = Vec3::Zero();
  Vec3 sum_s = Vec3::Zero();
  for (const auto& m : pair.matches) {
    const double w = 1.0 - m.uncertainty;
    sum_r += w * pixel_to_ray(cam_r, m.pixel_r).direction;
    sum_s += w * pixel_to_ray(cam_s, m.pixel_s).direction;
  }
  const double nr = sum_r.norm(), ns = sum_s.norm();
  if (nr < 1e-9 || ns < 1e-9) throw AllUncertain();
  return 1.0 - sum_r.dot(sum_s) / (nr * ns);
}

std::optional<int> select_source_view(const std::vector<SourceCandidate>& candidates,
                                      double epsilon) {
  std::optional<SourceCandidate> best;
  for (const auto& c : candidates) {
    if (!(c.score - epsilon > 0.0)) continue;
    if (!best || c.match_count > best->match_count ||
        (c.match_count == best->match_count && c.score > best->score) ||
        (c.match_count == best->match_count && c.score == best->score &&
         c.view < best->view))
      best = c;
  }
  if (!best) return std::nullopt;
  return best->view;
}

std::vector<double> epipolar_weights(const Mat3& F,
                                     const std::vector<MatchPair>& matches,
                                     double gamma) {
  if (gamma <= 0.0) throw InvalidInput("gamma must be positive");
  std::vector<double> w(matches.size(), 0.0);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    double d;
    try {
      d = sampson_distance(F, homogeneous_pixel(matches[i].pixel_r),
                           homogeneous_pixel(matches[i].pixel_s));
    } catch (const IllConditioned&) {
      w[i] = 0.0;
      continue;
    }
    w[i] = 0.5 * (1.0 - 1.0 / (1.0 + std::exp(-gamma * d)));
  }
  return w;
}

void triangulated_depth_priors(const Camera& cam_r, const Camera& cam_s,
                               ViewPairPriors& pair) {
  const std::size_t n = pair.matches.size();
  pair.tri_depth.assign(n, 0.0);
  pair.tri_valid.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    try {
      Ray rr = pixel_to_ray(cam_r, pair.matches[i].pixel_r);
      Ray rs = pixel_to_ray(cam_s, pair.matches[i].pixel_s);
      pair.tri_depth[i] = triangulate(rr, rs).depth_r;
      pair.tri_valid[i] = true;
    } catch (const DegenerateParallel&) {
    } catch (const BehindCamera&) {
    }
  }
}

ViewPairPriors build_pair_priors(const MatchSet& set, const Camera& cam_r,
                                 const Camera& cam_s, double gamma) {
  ViewPairPriors pair;
  pair.ref_view = set.ref_view;
  pair.src_view = set.src_view;
  pair.matches = set.matches;
  pair.angular_score = angular_score(set, cam_r, cam_s);
  pair.epi_weight = epipolar_weights(fundamental_matrix(cam_r, cam_s),
                                     set.matches, gamma);
  triangulated_depth_priors(cam_r, cam_s, pair);
  return pair;
}

}  // namespace svr
