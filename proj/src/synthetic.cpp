#include "svr/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace svr {

namespace {

Vec3 rotate_z(const Vec3& v, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y(), v.z()};
}

double box_sdf(const Vec3& local, const Vec3& half) {
  const Vec3 q = local.cwiseAbs() - half;
  const Vec3 qp = q.cwiseMax(0.0);
  return qp.norm() + std::min(q.maxCoeff(), 0.0);
}

Vec3 box_grad(const Vec3& local, const Vec3& half) {
  const Vec3 q = local.cwiseAbs() - half;
  Vec3 g;
  if ((q.array() > 0.0).any()) {
    const Vec3 qp = q.cwiseMax(0.0);
    const double n = std::max(qp.norm(), 1e-300);
    for (int a = 0; a < 3; ++a)
      g[a] = (local[a] >= 0 ? 1.0 : -1.0) * qp[a] / n;
  } else {
    int axis = 0;
    q.maxCoeff(&axis);
    g = Vec3::Zero();
    g[axis] = local[axis] >= 0 ? 1.0 : -1.0;
  }
  return g;
}

}  // namespace

double Primitive::sdf(const Vec3& p) const {
  const Vec3 local = rotate_z(p - center, -yaw);
  switch (kind) {
    case PrimitiveKind::Box:
      return box_sdf(local, half);
    case PrimitiveKind::Sphere:
      return local.norm() - half.x();
    case PrimitiveKind::Cylinder: {
      const double dr = std::hypot(local.x(), local.y()) - half.x();
      const double dz = std::abs(local.z()) - half.z();
      const double ir = std::max(dr, 0.0), iz = std::max(dz, 0.0);
      return std::min(std::max(dr, dz), 0.0) + std::hypot(ir, iz);
    }
  }
  return 0.0;
}

Vec3 Primitive::sdf_gradient(const Vec3& p) const {
  const Vec3 local = rotate_z(p - center, -yaw);
  Vec3 g;
  switch (kind) {
    case PrimitiveKind::Box:
      g = box_grad(local, half);
      break;
    case PrimitiveKind::Sphere:
      g = local.norm() > 1e-300 ? Vec3(local.normalized()) : Vec3::UnitZ();
      break;
    case PrimitiveKind::Cylinder: {
      const double rho = std::hypot(local.x(), local.y());
      const double dr = rho - half.x();
      const double dz = std::abs(local.z()) - half.z();
      const Vec3 radial = rho > 1e-300
                              ? Vec3(local.x() / rho, local.y() / rho, 0.0)
                              : Vec3::UnitX();
      const Vec3 axial(0, 0, local.z() >= 0 ? 1.0 : -1.0);
      if (dr <= 0.0 && dz <= 0.0) {
        g = dr > dz ? radial : axial;
      } else {
        const double ir = std::max(dr, 0.0), iz = std::max(dz, 0.0);
        const double n = std::max(std::hypot(ir, iz), 1e-300);
        g = (ir * radial + iz * axial) / n;
      }
      break;
    }
  }
  return rotate_z(g, yaw);
}

Eigen::AlignedBox3d Primitive::bounds() const {
  Vec3 ext;
  switch (kind) {
    case PrimitiveKind::Box: {
      const double c = std::abs(std::cos(yaw)), s = std::abs(std::sin(yaw));
      ext = Vec3(c * half.x() + s * half.y(), s * half.x() + c * half.y(),
                 half.z());
      break;
    }
    case PrimitiveKind::Sphere:
      ext = Vec3::Constant(half.x());
      break;
    case PrimitiveKind::Cylinder:
      ext = Vec3(half.x(), half.x(), half.z());
      break;
  }
  return {center - ext, center + ext};
}

double AnalyticScene::sdf(const Vec3& p) const {
  // Air is the interior of the watertight surface: negative inside the room
  // cavity, positive in walls and furniture.
  const Vec3 c = room.center();
  const Vec3 half = 0.5 * room.diagonal();
  double v = box_sdf(p - c, half);
  for (const auto& f : furniture) v = std::max(v, -f.sdf(p));
  return v;
}

Vec3 AnalyticScene::sdf_gradient(const Vec3& p) const {
  const Vec3 c = room.center();
  const Vec3 half = 0.5 * room.diagonal();
  double best = box_sdf(p - c, half);
  Vec3 g = box_grad(p - c, half);
  for (const auto& f : furniture) {
    const double v = -f.sdf(p);
    if (v > best) {
      best = v;
      g = -f.sdf_gradient(p);
    }
  }
  return g;
}

namespace {

double checker(const Vec3& p, double scale) {
  const auto cell = [&](double v) {
    return static_cast<long long>(std::floor(v / scale));
  };
  return ((cell(p.x()) + cell(p.y()) + cell(p.z())) & 1) ? 1.0 : 0.0;
}

}  // namespace

Vec3 AnalyticScene::surface_color(const Vec3& p, const Vec3& n_air) const {
  // Pick the owning structure: nearest furniture if any is within tolerance.
  Vec3 base(0.74, 0.72, 0.69);
  double nearest = std::numeric_limits<double>::max();
  const Primitive* owner = nullptr;
  for (const auto& f : furniture) {
    const double d = std::abs(f.sdf(p));
    if (d < nearest) {
      nearest = d;
      owner = &f;
    }
  }
  if (owner && nearest < 1e-3) {
    base = owner->albedo;
    if (textured) base *= 0.92 + 0.08 * checker(p, 0.11);
  } else {
    // Room shell: tint by face, mild checker + low-frequency gradient.
    int axis = 0;
    n_air.cwiseAbs().maxCoeff(&axis);
    if (axis == 2 && n_air.z() > 0) base = Vec3(0.62, 0.60, 0.58);  // floor
    if (axis == 2 && n_air.z() < 0) base = Vec3(0.82, 0.82, 0.84);  // ceiling
    if (axis == 0) base = Vec3(0.72, 0.74, 0.70);
    if (axis == 1) base = Vec3(0.70, 0.71, 0.76);
    if (textured) {
      base *= 0.93 + 0.07 * checker(p, axis == 2 ? 0.5 : 0.45);
      base *= 1.0 + 0.05 * std::sin(1.7 * p.x() + 0.9 * p.y() + 2.3 * p.z());
    }
  }
  const Vec3 light = Vec3(0.25, 0.15, 0.95).normalized();
  const double diffuse = 0.35 + 0.65 * std::max(0.0, n_air.dot(light));
  return (base * diffuse).cwiseMin(1.0).cwiseMax(0.0);
}

void AnalyticScene::validate() const {
  if (room.isEmpty() || room.diagonal().minCoeff() <= 0)
    throw InvalidScene("degenerate room box");
  for (const auto& f : furniture) {
    const auto b = f.bounds();
    if (!room.contains(b.min().matrix()) || !room.contains(b.max().matrix()))
      throw InvalidScene("furniture outside room: " + name);
    if (f.half.minCoeff() <= 0) throw InvalidScene("degenerate primitive");
  }
}

namespace {

void add_chair(AnalyticScene& scene, double cx, double cy, double yaw_deg,
               const Vec3& color) {
  const double floor_z = scene.room.min().z();
  const double yaw = yaw_deg * M_PI / 180.0;
  Primitive seat;
  seat.kind = PrimitiveKind::Box;
  seat.half = Vec3(0.24, 0.24, 0.275);
  seat.center = Vec3(cx, cy, floor_z + seat.half.z());
  seat.yaw = yaw;
  seat.albedo = color;
  Primitive back;
  back.kind = PrimitiveKind::Box;
  back.half = Vec3(0.24, 0.05, 0.25);
  back.center = Vec3(cx, cy, floor_z + 0.55 + back.half.z()) +
                rotate_z(Vec3(0.0, 0.19, 0.0), yaw);
  back.yaw = yaw;
  back.albedo = color * 0.9;
  scene.furniture.push_back(seat);
  scene.furniture.push_back(back);
}

Eigen::AlignedBox3d default_room() {
  return {Vec3(-2.0, -1.5, -1.25), Vec3(2.0, 1.5, 1.25)};
}

}  // namespace

AnalyticScene build_scene(const std::string& name_or_path) {
  AnalyticScene scene;
  scene.name = name_or_path;
  scene.room = default_room();
  if (name_or_path == "empty-room") {
  } else if (name_or_path == "room-two-chairs") {
    add_chair(scene, 0.62, -0.38, 25.0, Vec3(0.62, 0.28, 0.22));
    add_chair(scene, -0.55, 0.42, -115.0, Vec3(0.24, 0.38, 0.58));
  } else if (name_or_path == "cluttered") {
    add_chair(scene, 0.62, -0.38, 25.0, Vec3(0.62, 0.28, 0.22));
    add_chair(scene, -0.55, 0.42, -115.0, Vec3(0.24, 0.38, 0.58));
    Primitive ball;
    ball.kind = PrimitiveKind::Sphere;
    ball.half = Vec3(0.32, 0, 0);
    ball.center = Vec3(-1.05, -0.72, -1.25 + 0.32);
    ball.albedo = Vec3(0.30, 0.55, 0.30);
    scene.furniture.push_back(ball);
    Primitive table;
    table.kind = PrimitiveKind::Cylinder;
    table.half = Vec3(0.30, 0, 0.325);
    table.center = Vec3(0.75, 0.78, -1.25 + 0.325);
    table.albedo = Vec3(0.55, 0.45, 0.30);
    scene.furniture.push_back(table);
  } else if (std::filesystem::exists(name_or_path)) {
    return parse_scene_file(name_or_path);
  } else {
    throw UnknownScene("no scene named " + name_or_path);
  }
  scene.validate();
  return scene;
}

AnalyticScene parse_scene_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file " + path);
  AnalyticScene scene;
  scene.name = path;
  bool have_room = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream row(line);
    std::string kind;
    if (!(row >> kind)) continue;
    auto bad = [&] {
      return ParseError("bad scene row at line " + std::to_string(line_no));
    };
    if (kind == "room") {
      Vec3 lo, hi;
      if (!(row >> lo.x() >> lo.y() >> lo.z() >> hi.x() >> hi.y() >> hi.z()))
        throw bad();
      scene.room = {lo, hi};
      have_room = true;
    } else if (kind == "texture") {
      std::string mode;
      if (!(row >> mode)) throw bad();
      scene.textured = (mode == "on");
    } else if (kind == "box") {
      Primitive p;
      p.kind = PrimitiveKind::Box;
      double yaw_deg;
      if (!(row >> p.center.x() >> p.center.y() >> p.center.z() >>
            p.half.x() >> p.half.y() >> p.half.z() >> yaw_deg >>
            p.albedo.x() >> p.albedo.y() >> p.albedo.z()))
        throw bad();
      p.yaw = yaw_deg * M_PI / 180.0;
      scene.furniture.push_back(p);
    } else if (kind == "sphere") {
      Primitive p;
      p.kind = PrimitiveKind::Sphere;
      double r;
      if (!(row >> p.center.x() >> p.center.y() >> p.center.z() >> r >>
            p.albedo.x() >> p.albedo.y() >> p.albedo.z()))
        throw bad();
      p.half = Vec3(r, 0, 0);
      scene.furniture.push_back(p);
    } else if (kind == "cylinder") {
      Primitive p;
      p.kind = PrimitiveKind::Cylinder;
      double r, hh;
      if (!(row >> p.center.x() >> p.center.y() >> p.center.z() >> r >> hh >>
            p.albedo.x() >> p.albedo.y() >> p.albedo.z()))
        throw bad();
      p.half = Vec3(r, 0, hh);
      scene.furniture.push_back(p);
    } else {
      throw bad();
    }
  }
  if (!have_room) throw ParseError("scene file missing room: " + path);
  scene.validate();
  return scene;
}

void save_scene_file(const std::string& path, const AnalyticScene& scene) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scene file " + path);
  out.precision(17);
  out << "# room min max; texture on|off; box c h yaw_deg rgb; "
         "sphere c r rgb; cylinder c r half_h rgb\n";
  const auto& r = scene.room;
  out << "room " << r.min().x() << ' ' << r.min().y() << ' ' << r.min().z()
      << ' ' << r.max().x() << ' ' << r.max().y() << ' ' << r.max().z() << '\n';
  out << "texture " << (scene.textured ? "on" : "off") << '\n';
  for (const auto& f : scene.furniture) {
    const Vec3& c = f.center;
    const Vec3& a = f.albedo;
    switch (f.kind) {
      case PrimitiveKind::Box:
        out << "box " << c.x() << ' ' << c.y() << ' ' << c.z() << ' '
            << f.half.x() << ' ' << f.half.y() << ' ' << f.half.z() << ' '
            << f.yaw * 180.0 / M_PI << ' ' << a.x() << ' ' << a.y() << ' '
            << a.z() << '\n';
        break;
      case PrimitiveKind::Sphere:
        out << "sphere " << c.x() << ' ' << c.y() << ' ' << c.z() << ' '
            << f.half.x() << ' ' << a.x() << ' ' << a.y() << ' ' << a.z()
            << '\n';
        break;
      case PrimitiveKind::Cylinder:
        out << "cylinder " << c.x() << ' ' << c.y() << ' ' << c.z() << ' '
            << f.half.x() << ' ' << f.half.z() << ' ' << a.x() << ' ' << a.y()
            << ' ' << a.z() << '\n';
        break;
    }
  }
}

bool trace_ray(const AnalyticScene& scene, const Ray& ray, double& t_hit) {
  const double t_max = 4.0 * scene.diagonal();
  double t = 0.0;
  double f = scene.sdf(ray.at(t));
  if (f > 0.0) return false;  // starts inside solid
  // Sphere steps while far; the exact SDF makes each full step safe.
  for (int i = 0; i < 20000 && -f > 1e-4; ++i) {
    t += -f;
    if (t > t_max) return false;
    f = scene.sdf(ray.at(t));
  }
  // Newton polish with backtracking; handles grazing incidence where plain
  // sphere tracing stalls.
  for (int i = 0; i < 100 && std::abs(f) > 1e-7; ++i) {
    const double df = ray.direction.dot(scene.sdf_gradient(ray.at(t)));
    double step = std::abs(df) > 1e-12 ? -f / df : -f;
    double fn = f;
    for (int h = 0; h < 40; ++h) {
      fn = scene.sdf(ray.at(t + step));
      if (std::abs(fn) <= std::abs(f) || std::abs(step) < 1e-13) break;
      step *= 0.5;
    }
    t += step;
    f = fn;
    if (t > t_max || t < 0.0) return false;
  }
  t_hit = t;
  return std::abs(f) < 1e-6;
}

OracleView render_oracle(const AnalyticScene& scene, const Camera& camera) {
  if (scene.sdf(camera.center()) >= -1e-3)
    throw InvalidCamera("camera not inside the room air volume");
  OracleView view;
  view.camera = camera;
  const int w = camera.width, h = camera.height;
  view.color = ImageF(w, h, 3);
  view.depth = ImageF(w, h, 1);
  view.normal = ImageF(w, h, 3);
  parallel_chunks(h, 8, [&](int, std::int64_t y0, std::int64_t y1) {
    for (std::int64_t y = y0; y < y1; ++y) {
      for (int x = 0; x < w; ++x) {
        const Ray ray = pixel_to_ray(camera, Vec2(x, y));
        double t;
        if (!trace_ray(scene, ray, t)) continue;
        const Vec3 p = ray.at(t);
        const Vec3 g = scene.sdf_gradient(p).normalized();
        const Vec3 c = scene.surface_color(p, -g);
        view.depth.at(x, static_cast<int>(y)) = static_cast<float>(t);
        for (int k = 0; k < 3; ++k) {
          view.normal.at(x, static_cast<int>(y), k) = static_cast<float>(g[k]);
          view.color.at(x, static_cast<int>(y), k) = static_cast<float>(c[k]);
        }
      }
    }
  });
  return view;
}

namespace {

Camera look_at_camera(const Vec3& eye, const Vec3& target, int width,
                      int height, double fov_deg) {
  const Vec3 up(0, 0, 1);
  Vec3 fwd = (target - eye).normalized();
  Vec3 right = fwd.cross(up);
  if (right.norm() < 1e-9) right = Vec3(1, 0, 0);
  right.normalize();
  const Vec3 down = fwd.cross(right).normalized();  // camera y, world down
  Mat4 c2w = Mat4::Identity();
  c2w.block<3, 1>(0, 0) = right;
  c2w.block<3, 1>(0, 1) = down;
  c2w.block<3, 1>(0, 2) = fwd;
  c2w.block<3, 1>(0, 3) = eye;
  const double f = 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0);
  Mat3 K = Mat3::Identity();
  K(0, 0) = K(1, 1) = f;
  K(0, 2) = 0.5 * width;
  K(1, 2) = 0.5 * height;
  return Camera(K, c2w, width, height);
}

}  // namespace

CameraRig make_camera_rig(const AnalyticScene& scene, int n_views,
                          const std::string& pattern, int width, int height,
                          double fov_deg) {
  if (n_views < 2) throw TooFewViews();
  const Vec3 c = scene.room.center();
  const Vec3 half = 0.5 * scene.room.diagonal();
  CameraRig rig;
  if (pattern == "ring") {
    const double rho = 0.45 * std::min(half.x(), half.y());
    const double z0 = c.z() + 0.08 * half.z();
    const double tilt[3] = {-0.55, 0.05, 0.6};
    for (int i = 0; i < n_views; ++i) {
      const double th = 2.0 * M_PI * i / n_views;
      const Vec3 eye = c + Vec3(rho * std::cos(th), rho * std::sin(th), z0 - c.z());
      const Vec3 target =
          c + Vec3(-1.3 * rho * std::cos(th), -1.3 * rho * std::sin(th),
                   tilt[i % 3] * half.z());
      rig.cameras.push_back(look_at_camera(eye, target, width, height, fov_deg));
    }
  } else if (pattern == "wall-scan") {
    const double y0 = c.y() - 0.55 * half.y();
    const double span = 0.6 * half.x();
    for (int i = 0; i < n_views; ++i) {
      const double u = n_views > 1 ? static_cast<double>(i) / (n_views - 1) : 0.5;
      const Vec3 eye(c.x() - span + 2.0 * span * u, y0, c.z());
      const Vec3 target(c.x() + span * (2.0 * u - 1.0) * 0.3,
                        c.y() + 0.8 * half.y(),
                        c.z() + (i % 2 ? 0.25 : -0.25) * half.z());
      rig.cameras.push_back(look_at_camera(eye, target, width, height, fov_deg));
    }
  } else {
    throw InvalidInput("unknown rig pattern " + pattern);
  }
  for (const auto& cam : rig.cameras)
    if (scene.sdf(cam.center()) >= -0.05)
      throw InvalidScene("rig camera not inside the room");
  for (int i = 0; i + 1 < n_views; ++i) {
    const Vec3 a = (rig.cameras[i].center() - c).normalized();
    const Vec3 b = (rig.cameras[i + 1].center() - c).normalized();
    rig.adjacent_baseline_deg.push_back(
        std::acos(std::clamp(a.dot(b), -1.0, 1.0)) * 180.0 / M_PI);
  }
  return rig;
}

MatchSet generate_matches(const AnalyticScene& scene, const Camera& cam_r,
                          const Camera& cam_s, int ref_id, int src_id,
                          int count, double noise_px, double outlier_rate,
                          std::uint64_t seed) {
  if (count < 1) throw InvalidInput("match count must be >= 1");
  if (outlier_rate < 0.0 || outlier_rate > 1.0)
    throw InvalidInput("outlier_rate outside [0,1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> Ur_x(0.0, cam_r.width),
      Ur_y(0.0, cam_r.height), Us_x(0.0, cam_s.width), Us_y(0.0, cam_s.height),
      U01(0.0, 1.0);
  std::normal_distribution<double> N01(0.0, 1.0);

  MatchSet set;
  set.ref_view = ref_id;
  set.src_view = src_id;
  const long long max_attempts = 1000LL * count;
  for (long long attempt = 0;
       attempt < max_attempts && static_cast<int>(set.matches.size()) < count;
       ++attempt) {
    const Vec2 p_r(Ur_x(rng), Ur_y(rng));
    const Ray ray_r = pixel_to_ray(cam_r, p_r);
    double t_r;
    if (!trace_ray(scene, ray_r, t_r)) continue;
    const Vec3 X = ray_r.at(t_r);
    Vec2 p_s;
    try {
      p_s = project(cam_s, X).first;
    } catch (const BehindCamera&) {
      continue;
    }
    if (!cam_s.in_bounds(p_s)) continue;
    // Mutual visibility: the source ray must hit the same point.
    double t_s;
    if (!trace_ray(scene, pixel_to_ray(cam_s, p_s), t_s)) continue;
    if (std::abs(t_s - (X - cam_s.center()).norm()) > 1e-4) continue;

    MatchPair m;
    if (U01(rng) < outlier_rate) {
      m.pixel_r = p_r;
      m.pixel_s = Vec2(Us_x(rng), Us_y(rng));
      m.uncertainty = 0.3 * U01(rng);  // confidently wrong
    } else {
      const Vec2 er(noise_px * N01(rng), noise_px * N01(rng));
      const Vec2 es(noise_px * N01(rng), noise_px * N01(rng));
      m.pixel_r = p_r + er;
      m.pixel_s = p_s + es;
      if (!cam_r.in_bounds(m.pixel_r) || !cam_s.in_bounds(m.pixel_s)) continue;
      const double mag = std::sqrt(er.squaredNorm() + es.squaredNorm());
      m.uncertainty = std::clamp(1.0 - std::exp(-mag), 0.0, 1.0);
    }
    set.matches.push_back(m);
  }
  if (set.matches.empty()) throw NoOverlap("no co-visible surface points");
  return set;
}

}  // namespace svr
