#include "svr/geometry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace svr {

Camera::Camera(const Mat3& K, const Mat4& c2w, int w, int h)
    : intrinsics(K), cam_to_world(c2w), width(w), height(h) {
  validate();
}

Mat4 Camera::world_to_cam() const {
  Mat4 inv = Mat4::Identity();
  Mat3 rt = rotation().transpose();
  inv.block<3, 3>(0, 0) = rt;
  inv.block<3, 1>(0, 3) = -rt * center();
  return inv;
}

Vec3 Camera::world_to_cam_point(const Vec3& p) const {
  return rotation().transpose() * (p - center());
}

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw InvalidCamera("non-positive image size");
  const Mat3& K = intrinsics;
  if (std::abs(K(1, 0)) > 1e-12 || std::abs(K(2, 0)) > 1e-12 ||
      std::abs(K(2, 1)) > 1e-12)
    throw InvalidCamera("intrinsics not upper-triangular");
  if (K(0, 0) <= 0 || K(1, 1) <= 0 || K(2, 2) <= 0)
    throw InvalidCamera("intrinsics diagonal not positive");
  Mat3 R = rotation();
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw InvalidCamera("rotation not orthonormal");
  if (R.determinant() < 0) throw InvalidCamera("rotation has negative determinant");
  Eigen::RowVector4d bottom = cam_to_world.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
    throw InvalidCamera("pose bottom row not (0,0,0,1)");
}

Ray pixel_to_ray(const Camera& camera, const Vec2& pixel) {
  if (!camera.in_bounds(pixel))
    throw OutOfBounds("pixel outside image: " + std::to_string(pixel.x()) +
                      "," + std::to_string(pixel.y()));
  Vec3 cam_dir = camera.intrinsics.inverse() * homogeneous_pixel(pixel);
  Vec3 world_dir = camera.rotation() * cam_dir;
  return Ray{camera.center(), world_dir.normalized()};
}

std::pair<Vec2, double> project(const Camera& camera, const Vec3& point) {
  Vec3 q = camera.world_to_cam_point(point);
  if (q.z() <= 1e-6) throw BehindCamera("point depth " + std::to_string(q.z()));
  Vec3 w = camera.intrinsics * q;
  return {Vec2(w.x() / w.z() - 0.5, w.y() / w.z() - 0.5), q.z()};
}

TriangulationResult triangulate(const Ray& ray_r, const Ray& ray_s) {
  const Vec3& d1 = ray_r.direction;
  const Vec3& d2 = ray_s.direction;
  const double c = d1.dot(d2);
  const double sin2 = d1.cross(d2).squaredNorm();
  if (std::sqrt(sin2) < 1e-6) throw DegenerateParallel();

  const Vec3 b = ray_s.origin - ray_r.origin;
  const double denom = 1.0 - c * c;
  const double t1 = (b.dot(d1) - c * b.dot(d2)) / denom;
  const double t2 = (c * b.dot(d1) - b.dot(d2)) / denom;
  if (t1 <= 0.0 || t2 <= 0.0) throw BehindCamera("triangulated point behind a camera");

  const Vec3 p1 = ray_r.at(t1);
  const Vec3 p2 = ray_s.at(t2);
  TriangulationResult res;
  res.point = 0.5 * (p1 + p2);
  res.depth_r = t1;
  res.depth_s = t2;
  res.ray_angle = std::atan2(std::sqrt(sin2), c);
  res.gap = (p1 - p2).norm();
  return res;
}

Mat3 fundamental_matrix(const Camera& cam_r, const Camera& cam_s) {
  // Relative pose: reference-camera coords -> source-camera coords.
  Mat3 R = cam_s.rotation().transpose() * cam_r.rotation();
  Vec3 t = cam_s.world_to_cam_point(cam_r.center());
  if (t.norm() < 1e-9) throw DegenerateBaseline();

  Mat3 tx;
  tx << 0, -t.z(), t.y(), t.z(), 0, -t.x(), -t.y(), t.x(), 0;
  Mat3 F = cam_s.intrinsics.inverse().transpose() * tx * R *
           cam_r.intrinsics.inverse();

  // Projective scale fixed by the first largest-magnitude entry.
  double pivot = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col)
      if (std::abs(F(r, col)) > std::abs(pivot)) pivot = F(r, col);
  return F / pivot;
}

double sampson_distance(const Mat3& F, const Vec3& p_r, const Vec3& p_s) {
  const Vec3 Fr = F * p_r;
  const Vec3 Fts = F.transpose() * p_s;
  const double num = p_s.dot(Fr);
  const double denom =
      Fr.x() * Fr.x() + Fr.y() * Fr.y() + Fts.x() * Fts.x() + Fts.y() * Fts.y();
  if (denom < 1e-12) throw IllConditioned();
  return num * num / denom;
}

Vec2 reproject(const Camera& cam_r, const Camera& cam_s, const Vec2& pixel_r,
               double rendered_depth) {
  Ray ray = pixel_to_ray(cam_r, pixel_r);
  Vec3 x = ray.at(rendered_depth);
  return project(cam_s, x).first;
}

std::vector<std::pair<int, Camera>> load_cameras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open camera file " + path);
  // Strip comments, then read whitespace-separated records.
  std::stringstream clean;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    clean << line.substr(0, hash) << ' ';
  }
  std::vector<std::pair<int, Camera>> cams;
  int id;
  while (clean >> id) {
    Mat3 K;
    Mat4 P;
    int w, h;
    for (int i = 0; i < 9; ++i)
      if (!(clean >> K(i / 3, i % 3))) throw ParseError("truncated camera record");
    for (int i = 0; i < 16; ++i)
      if (!(clean >> P(i / 4, i % 4))) throw ParseError("truncated camera record");
    if (!(clean >> w >> h)) throw ParseError("truncated camera record");
    cams.emplace_back(id, Camera(K, P, w, h));
  }
  return cams;
}

void save_cameras(const std::string& path,
                  const std::vector<std::pair<int, Camera>>& cameras) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write camera file " + path);
  out << "# view_id K[9] cam_to_world[16] width height\n";
  out.precision(17);
  for (const auto& [id, cam] : cameras) {
    out << id;
    for (int i = 0; i < 9; ++i) out << ' ' << cam.intrinsics(i / 3, i % 3);
    for (int i = 0; i < 16; ++i) out << ' ' << cam.cam_to_world(i / 4, i % 4);
    out << ' ' << cam.width << ' ' << cam.height << '\n';
  }
}

}  // namespace svr
