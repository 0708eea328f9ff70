#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "svr/meshing.hpp"
#include "svr/synthetic.hpp"

using namespace svr;

TEST_CASE("marching cubes on the unit sphere") {
  auto sphere = [](const Vec3& p) { return p.norm() - 1.0; };
  Eigen::AlignedBox3d box(Vec3::Constant(-1.5), Vec3::Constant(1.5));
  Mesh mesh = marching_cubes(sphere, box, 64);
  mesh.validate();
  const double voxel = 3.0 / 64;
  for (const auto& v : mesh.vertices)
    CHECK(std::abs(v.norm() - 1.0) < 1.5 * voxel);
  // sphere area within a few percent
  CHECK(mesh.area() == doctest::Approx(4.0 * M_PI).epsilon(0.02));
}

TEST_CASE("marching cubes: constant sign means empty mesh") {
  auto positive = [](const Vec3&) { return 1.0; };
  Eigen::AlignedBox3d box(Vec3::Constant(-1.0), Vec3::Constant(1.0));
  CHECK_THROWS_AS(marching_cubes(positive, box, 16), EmptyMesh);
  CHECK_THROWS_AS(marching_cubes(positive, box, 4), InvalidInput);
}

TEST_CASE("marching cubes: plane area matches the box cross-section") {
  auto plane = [](const Vec3& p) { return p.z(); };
  Eigen::AlignedBox3d box(Vec3(-1, -2, -1), Vec3(1, 2, 1));
  Mesh mesh = marching_cubes(plane, box, 32);
  CHECK(mesh.area() == doctest::Approx(2.0 * 4.0).epsilon(0.02));
  for (const auto& v : mesh.vertices) CHECK(std::abs(v.z()) < 1e-9);
}

TEST_CASE("marching cubes on a field equals the generic path") {
  FieldArch arch;
  arch.init_radius = 0.8;
  SdfField field(arch, 3);
  Eigen::AlignedBox3d box(Vec3::Constant(-1.2), Vec3::Constant(1.2));
  Mesh a = marching_cubes(
      [&](const Vec3& p) { return field.eval(p, Vec3(0, 0, 1)).sdf; }, box, 24);
  Mesh b = marching_cubes_field(field, box, 24);
  REQUIRE(a.vertices.size() == b.vertices.size());
  REQUIRE(a.triangles.size() == b.triangles.size());
  for (std::size_t i = 0; i < a.vertices.size(); ++i)
    CHECK((a.vertices[i] - b.vertices[i]).norm() < 1e-9);
}

TEST_CASE("sample_points statistics and determinism") {
  // unit square as two triangles
  Mesh square;
  square.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
  square.triangles = {{0, 1, 2}, {0, 2, 3}};
  Mat3X pts = sample_points(square, 10000, 3);
  const Vec3 mean = pts.rowwise().mean();
  CHECK(std::abs(mean.x() - 0.5) < 0.02);
  CHECK(std::abs(mean.y() - 0.5) < 0.02);
  CHECK(std::abs(mean.z()) < 1e-12);

  Mat3X again = sample_points(square, 10000, 3);
  CHECK((pts - again).cwiseAbs().maxCoeff() == 0.0);

  // single triangle: all samples inside (barycentric validity)
  Mesh tri;
  tri.vertices = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0)};
  tri.triangles = {{0, 1, 2}};
  Mat3X tp = sample_points(tri, 500, 9);
  for (int i = 0; i < 500; ++i) {
    CHECK(tp(0, i) >= -1e-12);
    CHECK(tp(1, i) >= -1e-12);
    CHECK(tp(0, i) + tp(1, i) <= 2.0 + 1e-12);
  }
  Mesh empty;
  CHECK_THROWS_AS(sample_points(empty, 10, 0), EmptyMesh);
}

TEST_CASE("evaluate: identical clouds") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Mat3X cloud(3, 500);
  for (int i = 0; i < 500; ++i) cloud.col(i) = Vec3(U(rng), U(rng), U(rng));
  MetricsReport rep = evaluate(cloud, cloud, 0.05);
  CHECK(rep.accuracy == doctest::Approx(0.0));
  CHECK(rep.completeness == doctest::Approx(0.0));
  CHECK(rep.precision == doctest::Approx(1.0));
  CHECK(rep.recall == doctest::Approx(1.0));
  CHECK(rep.fscore == doctest::Approx(1.0));
}

TEST_CASE("evaluate: uniform offset by two tau") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Mat3X gt(3, 400);
  for (int i = 0; i < 400; ++i) gt.col(i) = Vec3(U(rng), U(rng), 0.0);
  const double tau = 0.05;
  Mat3X pred = gt;
  pred.row(2).array() += 2.0 * tau;  // off-plane shift: exact NN distance
  MetricsReport rep = evaluate(pred, gt, tau);
  CHECK(rep.accuracy == doctest::Approx(2.0 * tau));
  CHECK(rep.completeness == doctest::Approx(2.0 * tau));
  CHECK(rep.precision == doctest::Approx(0.0));
  CHECK(rep.recall == doctest::Approx(0.0));
  CHECK(rep.fscore == doctest::Approx(0.0));
}

TEST_CASE("evaluate: constructed half-in split") {
  // pred: half the points exactly on gt, half far away; gt fully covered
  Mat3X gt(3, 100), pred(3, 100);
  for (int i = 0; i < 100; ++i) {
    gt.col(i) = Vec3(i * 0.01, 0, 0);
    pred.col(i) = i < 50 ? Vec3(i * 0.02, 0, 0) : Vec3(i * 0.02 - 1.0, 5.0, 0);
  }
  // gt spacing 0.01 and pred-inlier spacing 0.02 over the same segment:
  // every gt point is within 0.01 of an inlier pred point
  MetricsReport rep = evaluate(pred, gt, 0.015);
  CHECK(rep.precision == doctest::Approx(0.5));
  CHECK(rep.recall == doctest::Approx(1.0));
  CHECK(rep.fscore == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("evaluate: symmetry and monotonicity in tau") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  Mat3X a(3, 300), b(3, 260);
  for (int i = 0; i < 300; ++i) a.col(i) = Vec3(U(rng), U(rng), U(rng));
  for (int i = 0; i < 260; ++i) b.col(i) = Vec3(U(rng), U(rng), U(rng));
  MetricsReport ab = evaluate(a, b, 0.2);
  MetricsReport ba = evaluate(b, a, 0.2);
  CHECK(ab.accuracy == doctest::Approx(ba.completeness));
  CHECK(ab.completeness == doctest::Approx(ba.accuracy));
  CHECK(ab.precision == doctest::Approx(ba.recall));

  double prev = -1.0;
  for (double tau : {0.02, 0.05, 0.1, 0.2, 0.5, 1.0}) {
    const double f = evaluate(a, b, tau).fscore;
    CHECK(f >= prev);
    prev = f;
  }
  CHECK_THROWS_AS(evaluate(Mat3X(3, 0), a, 0.1), EmptyCloud);
}

TEST_CASE("exact nearest neighbors against brute force") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  Mat3X cloud(3, 700);
  for (int i = 0; i < 700; ++i) cloud.col(i) = Vec3(U(rng), U(rng), U(rng));
  KdTree3 tree(cloud);
  for (int q = 0; q < 200; ++q) {
    const Vec3 query(U(rng), U(rng), U(rng));
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 700; ++i)
      best = std::min(best, (cloud.col(i) - query).squaredNorm());
    CHECK(tree.nearest_sq(query) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("mesh io round trips") {
  namespace fs = std::filesystem;
  auto sphere = [](const Vec3& p) { return p.norm() - 0.8; };
  Eigen::AlignedBox3d box(Vec3::Constant(-1.2), Vec3::Constant(1.2));
  Mesh mesh = marching_cubes(sphere, box, 16);

  const std::string ply = (fs::temp_directory_path() / "svr_mesh.ply").string();
  save_mesh_ply(ply, mesh);
  Mesh from_ply = load_mesh(ply);
  REQUIRE(from_ply.vertices.size() == mesh.vertices.size());
  REQUIRE(from_ply.triangles.size() == mesh.triangles.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    CHECK((from_ply.vertices[i] - mesh.vertices[i]).norm() < 1e-6);

  const std::string obj = (fs::temp_directory_path() / "svr_mesh.obj").string();
  save_mesh_obj(obj, mesh);
  Mesh from_obj = load_mesh(obj);
  REQUIRE(from_obj.triangles.size() == mesh.triangles.size());
  CHECK(from_obj.triangles[0] == mesh.triangles[0]);
  fs::remove(ply);
  fs::remove(obj);
}

TEST_CASE("room scene mesh: watertight box area sanity") {
  AnalyticScene scene = build_scene("empty-room");
  const Vec3 c = scene.room.center();
  const Vec3 h = 0.55 * scene.room.diagonal();
  Mesh mesh = marching_cubes([&](const Vec3& p) { return scene.sdf(p); },
                             {c - h, c + h}, 64);
  // box surface area 2(4*3 + 4*2.5 + 3*2.5) = 59
  CHECK(mesh.area() == doctest::Approx(59.0).epsilon(0.03));
}
