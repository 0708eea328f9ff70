#pragma once

#include <Eigen/Geometry>
#include <string>
#include <vector>

#include "svr/geometry.hpp"
#include "svr/image_io.hpp"
#include "svr/matching.hpp"

namespace svr {

enum class PrimitiveKind { Box, Sphere, Cylinder };

// Solid furniture piece. Boxes rotate about z by yaw; cylinders are
// z-aligned. sdf() is the standard primitive distance, negative inside the
// solid.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::Box;
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Ones();   // box: half extents; sphere: (r,_,_); cylinder: (r,_,half_h)
  double yaw = 0.0;           // radians
  Vec3 albedo = Vec3(0.6, 0.6, 0.6);

  double sdf(const Vec3& p) const;
  Vec3 sdf_gradient(const Vec3& p) const;
  Eigen::AlignedBox3d bounds() const;
};

// Analytic indoor scene. Signed distance convention: negative in the air
// enclosed by the watertight surface, positive inside walls and furniture.
struct AnalyticScene {
  std::string name;
  Eigen::AlignedBox3d room;
  std::vector<Primitive> furniture;
  bool textured = true;

  double sdf(const Vec3& p) const;
  Vec3 sdf_gradient(const Vec3& p) const;  // points from air into solid
  double diagonal() const { return room.diagonal().norm(); }

  // Shaded surface color at a surface point with outward (into-air) normal.
  Vec3 surface_color(const Vec3& p, const Vec3& n_air) const;

  void validate() const;  // InvalidScene if furniture leaves the room
};

// Named library scenes plus scene-file parsing; UnknownScene otherwise.
AnalyticScene build_scene(const std::string& name_or_path);
AnalyticScene parse_scene_file(const std::string& path);
void save_scene_file(const std::string& path, const AnalyticScene& scene);

struct OracleView {
  Camera camera;
  ImageF color;   // 3 channels
  ImageF depth;   // meters along the unit pixel ray
  ImageF normal;  // world frame, unit, 3 channels
};

// First-hit distance along the ray, |sdf| < 1e-6 at the hit. Returns false
// only if the ray escapes (cannot happen for closed rooms).
bool trace_ray(const AnalyticScene& scene, const Ray& ray, double& t_hit);

// Sphere-traced ground truth maps. InvalidCamera unless the camera center
// is inside the room's air volume.
OracleView render_oracle(const AnalyticScene& scene, const Camera& camera);

struct CameraRig {
  std::vector<Camera> cameras;
  std::vector<double> adjacent_baseline_deg;  // between consecutive views
};

// "ring": inward-facing circle with cyclic up/level/down targets.
// "wall-scan": translating cameras facing the opposite wall.
CameraRig make_camera_rig(const AnalyticScene& scene, int n_views,
                          const std::string& pattern, int width = 128,
                          int height = 96, double fov_deg = 75.0);

// Oracle matches: mutually visible surface points projected into both
// views, Gaussian pixel noise of noise_px, an outlier_rate fraction
// replaced by uniform source pixels with confidently low uncertainty.
MatchSet generate_matches(const AnalyticScene& scene, const Camera& cam_r,
                          const Camera& cam_s, int ref_id, int src_id,
                          int count, double noise_px, double outlier_rate,
                          std::uint64_t seed);

}  // namespace svr
