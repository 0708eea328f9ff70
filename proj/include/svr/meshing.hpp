#pragma once

#include <Eigen/Geometry>
#include <functional>
#include <string>
#include <vector>

#include "svr/common.hpp"
#include "svr/field.hpp"

namespace svr {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Eigen::Vector3i> triangles;

  double area() const;
  void validate() const;  // index range + degenerate-triangle check
};

struct MetricsReport {
  double accuracy = 0.0;      // mean pred -> gt distance (m)
  double completeness = 0.0;  // mean gt -> pred distance (m)
  double precision = 0.0;
  double recall = 0.0;
  double fscore = 0.0;
  double tau = 0.0;
  int pred_points = 0;
  int gt_points = 0;
};

using ScalarField = std::function<double(const Vec3&)>;

// Classic 256-case marching cubes with linear edge interpolation at
// iso-value 0. EmptyMesh if the grid never changes sign. Grid evaluation
// runs on the worker pool in fixed slabs.
Mesh marching_cubes(const ScalarField& sdf, const Eigen::AlignedBox3d& bbox,
                    int resolution);

// Batched-field convenience (uses the network's chunked forward).
Mesh marching_cubes_field(const SdfField& field, const Eigen::AlignedBox3d& bbox,
                          int resolution);

// Area-weighted uniform surface samples; deterministic per seed.
Mat3X sample_points(const Mesh& mesh, int n, std::uint64_t seed);

// Standard point-cloud reconstruction metrics at threshold tau.
MetricsReport evaluate(const Mat3X& pred, const Mat3X& gt, double tau);

// PLY (binary little-endian) and OBJ writers, extension-dispatched loader.
void save_mesh_ply(const std::string& path, const Mesh& mesh);
void save_mesh_obj(const std::string& path, const Mesh& mesh);
Mesh load_mesh(const std::string& path);

void save_metrics_json(const std::string& path, const MetricsReport& report);

// Exact nearest-neighbor queries over a fixed point set.
class KdTree3 {
 public:
  explicit KdTree3(const Mat3X& points);
  // Returns squared distance to the nearest point.
  double nearest_sq(const Vec3& query) const;

 private:
  struct Node {
    int axis = -1;  // -1: leaf
    double split = 0.0;
    int begin = 0, end = 0;
    int left = -1, right = -1;
  };
  void build(int node, int begin, int end, int depth);
  void query(int node, const Vec3& q, double& best) const;
  std::vector<Node> nodes_;
  std::vector<Vec3> pts_;
};

}  // namespace svr
