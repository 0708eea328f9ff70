#pragma once

#include <string>
#include <vector>

#include "svr/common.hpp"

namespace svr {

// Pinhole camera. `cam_to_world` maps camera coordinates (x right, y down,
// z forward) to world coordinates. Pixel convention: the stored coordinate
// (u,v) lifts through K^-1 * (u+0.5, v+0.5, 1); project() applies the
// inverse shift, so stored coordinates round-trip.
struct Camera {
  Mat3 intrinsics = Mat3::Identity();
  Mat4 cam_to_world = Mat4::Identity();
  int width = 0;
  int height = 0;

  Camera() = default;
  Camera(const Mat3& K, const Mat4& c2w, int w, int h);

  Vec3 center() const { return cam_to_world.block<3, 1>(0, 3); }
  Mat3 rotation() const { return cam_to_world.block<3, 3>(0, 0); }
  Mat4 world_to_cam() const;
  Vec3 world_to_cam_point(const Vec3& p) const;
  bool in_bounds(const Vec2& pixel) const {
    return pixel.x() >= 0.0 && pixel.x() < width && pixel.y() >= 0.0 &&
           pixel.y() < height;
  }
  // Principal point expressed in stored pixel coordinates.
  Vec2 principal_point_pixel() const {
    return {intrinsics(0, 2) - 0.5, intrinsics(1, 2) - 0.5};
  }

  // InvalidCamera unless intrinsics are upper-triangular with positive
  // diagonal, the rotation block is orthonormal (1e-9) with det +1, and
  // width/height are positive.
  void validate() const;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  // unit norm

  Vec3 at(double t) const { return origin + t * direction; }
};

struct TriangulationResult {
  Vec3 point = Vec3::Zero();  // midpoint of the mutual-perpendicular segment
  double depth_r = 0.0;       // parameter along the reference ray
  double depth_s = 0.0;       // parameter along the source ray
  double ray_angle = 0.0;     // radians between directions
  double gap = 0.0;           // closest-approach distance between the lines
};

// Homogeneous lift of a stored pixel coordinate into optical image
// coordinates (the frame K projects into).
inline Vec3 homogeneous_pixel(const Vec2& pixel) {
  return {pixel.x() + 0.5, pixel.y() + 0.5, 1.0};
}

// OutOfBounds unless pixel lies in [0,width) x [0,height).
Ray pixel_to_ray(const Camera& camera, const Vec2& pixel);

// Returns (stored pixel, camera-frame depth). BehindCamera if depth <= 1e-6.
std::pair<Vec2, double> project(const Camera& camera, const Vec3& point);

// Midpoint triangulation: closest point between the two lines.
// DegenerateParallel if |sin(angle)| < 1e-6, BehindCamera if either
// parameter at the perpendicular feet is <= 0.
TriangulationResult triangulate(const Ray& ray_r, const Ray& ray_s);

// F = Ks^-T [t]x R Kr^-1 for the relative pose mapping reference-camera to
// source-camera coordinates, scaled so the largest-magnitude entry is 1.
// DegenerateBaseline if the centers coincide (|t| < 1e-9).
Mat3 fundamental_matrix(const Camera& cam_r, const Camera& cam_s);

// First-order geometric error of a correspondence to the epipolar
// constraint, in squared optical-pixel units. Inputs are homogeneous with
// last component 1. IllConditioned if the denominator is < 1e-12.
double sampson_distance(const Mat3& F, const Vec3& p_r, const Vec3& p_s);

// Lifts pixel_r along its ray to rendered_depth (depth multiplies the unit
// direction) and projects the world point into cam_s.
Vec2 reproject(const Camera& cam_r, const Camera& cam_s, const Vec2& pixel_r,
               double rendered_depth);

// Camera file: one record per view -- id, 9 intrinsics entries row-major,
// 16 cam_to_world entries row-major, width, height. Whitespace separated,
// '#' starts a comment.
std::vector<std::pair<int, Camera>> load_cameras(const std::string& path);
void save_cameras(const std::string& path,
                  const std::vector<std::pair<int, Camera>>& cameras);

}  // namespace svr
