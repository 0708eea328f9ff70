#include "svr/meshing.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace svr {

namespace {
#include "meshing_tables.inc"

// Cube corner offsets in grid units, Bourke numbering.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeEnds[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                  {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                  {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

double Mesh::area() const {
  double a = 0.0;
  for (const auto& t : triangles) {
    const Vec3& v0 = vertices[t[0]];
    a += 0.5 * (vertices[t[1]] - v0).cross(vertices[t[2]] - v0).norm();
  }
  return a;
}

void Mesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k)
      if (t[k] < 0 || t[k] >= n) throw InvalidInput("triangle index out of range");
    const Vec3& v0 = vertices[t[0]];
    if (0.5 * (vertices[t[1]] - v0).cross(vertices[t[2]] - v0).norm() <= 1e-12)
      throw InvalidInput("degenerate triangle in mesh");
  }
}

namespace {

// Core grid walker. slice_eval fills the (res+1)^2 values of one z level;
// slabs advance serially so vertex indices are deterministic.
Mesh marching_cubes_impl(
    const std::function<void(int z, VecX& values)>& slice_eval,
    const Eigen::AlignedBox3d& bbox, int res) {
  if (res < 8) throw InvalidInput("marching cubes resolution must be >= 8");
  const int n = res + 1;
  const Vec3 origin = bbox.min();
  const Vec3 step = bbox.diagonal() / res;

  VecX slice_a(n * n), slice_b(n * n);
  slice_eval(0, slice_a);

  Mesh mesh;
  // One shared vertex per crossed grid edge: key = grid point + axis.
  std::unordered_map<std::uint64_t, int> edge_vertex;
  auto edge_key = [&](int ix, int iy, int iz, int axis) {
    return ((static_cast<std::uint64_t>(iz) * n + iy) * n + ix) * 4 + axis;
  };
  auto grid_point = [&](int ix, int iy, int iz) {
    return Vec3(origin.x() + ix * step.x(), origin.y() + iy * step.y(),
                origin.z() + iz * step.z());
  };

  for (int z = 0; z < res; ++z) {
    slice_eval(z + 1, slice_b);
    const VecX* slices[2] = {&slice_a, &slice_b};
    for (int y = 0; y < res; ++y) {
      for (int x = 0; x < res; ++x) {
        double val[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const int cx = x + kCorner[c][0];
          const int cy = y + kCorner[c][1];
          const int cz = kCorner[c][2];
          val[c] = (*slices[cz])[cy * n + cx];
          if (val[c] < 0.0) cube |= 1 << c;
        }
        const int edges = kEdgeTable[cube];
        if (edges == 0) continue;

        int edge_idx[12];
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const int* a = kCorner[kEdgeEnds[e][0]];
          const int* b = kCorner[kEdgeEnds[e][1]];
          // Canonical key: lower endpoint of the edge plus its axis.
          int ax = x + std::min(a[0], b[0]);
          int ay = y + std::min(a[1], b[1]);
          int az = z + std::min(a[2], b[2]);
          int axis = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
          const std::uint64_t key = edge_key(ax, ay, az, axis);
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) {
            edge_idx[e] = it->second;
            continue;
          }
          const double va = val[kEdgeEnds[e][0]];
          const double vb = val[kEdgeEnds[e][1]];
          double t = 0.5;
          if (std::abs(va - vb) > 1e-300) t = va / (va - vb);
          t = std::clamp(t, 0.0, 1.0);
          const Vec3 pa = grid_point(x + a[0], y + a[1], z + a[2]);
          const Vec3 pb = grid_point(x + b[0], y + b[1], z + b[2]);
          edge_idx[e] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(pa + t * (pb - pa));
          edge_vertex.emplace(key, edge_idx[e]);
        }

        for (int k = 0; kTriTable[cube][k] != -1; k += 3) {
          const int i0 = edge_idx[kTriTable[cube][k]];
          const int i1 = edge_idx[kTriTable[cube][k + 1]];
          const int i2 = edge_idx[kTriTable[cube][k + 2]];
          const Vec3& v0 = mesh.vertices[i0];
          const double area =
              0.5 * (mesh.vertices[i1] - v0).cross(mesh.vertices[i2] - v0).norm();
          if (area > 1e-12) mesh.triangles.push_back({i0, i1, i2});
        }
      }
    }
    std::swap(slice_a, slice_b);
  }
  if (mesh.triangles.empty()) throw EmptyMesh("no zero crossing in grid");
  return mesh;
}

}  // namespace

Mesh marching_cubes(const ScalarField& sdf, const Eigen::AlignedBox3d& bbox,
                    int resolution) {
  const int n = resolution + 1;
  const Vec3 origin = bbox.min();
  const Vec3 step = bbox.diagonal() / resolution;
  auto slice_eval = [&](int z, VecX& values) {
    parallel_chunks(n, 32, [&](int, std::int64_t y0, std::int64_t y1) {
      for (std::int64_t y = y0; y < y1; ++y)
        for (int x = 0; x < n; ++x)
          values[y * n + x] = sdf(Vec3(origin.x() + x * step.x(),
                                       origin.y() + y * step.y(),
                                       origin.z() + z * step.z()));
    });
  };
  return marching_cubes_impl(slice_eval, bbox, resolution);
}

Mesh marching_cubes_field(const SdfField& field, const Eigen::AlignedBox3d& bbox,
                          int resolution) {
  const int n = resolution + 1;
  const Vec3 origin = bbox.min();
  const Vec3 step = bbox.diagonal() / resolution;
  auto slice_eval = [&](int z, VecX& values) {
    parallel_chunks(static_cast<std::int64_t>(n) * n, 4096,
                    [&](int, std::int64_t j0, std::int64_t j1) {
                      Mat3X pts(3, j1 - j0);
                      for (std::int64_t j = j0; j < j1; ++j) {
                        const int x = static_cast<int>(j % n);
                        const int y = static_cast<int>(j / n);
                        pts.col(j - j0) = Vec3(origin.x() + x * step.x(),
                                               origin.y() + y * step.y(),
                                               origin.z() + z * step.z());
                      }
                      MlpCache cache;
                      field.sdf_forward(pts, false, cache);
                      for (std::int64_t j = j0; j < j1; ++j)
                        values[j] = cache.out(0, j - j0);
                    });
  };
  return marching_cubes_impl(slice_eval, bbox, resolution);
}

Mat3X sample_points(const Mesh& mesh, int n, std::uint64_t seed) {
  if (mesh.triangles.empty()) throw EmptyMesh("cannot sample an empty mesh");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    const Vec3& v0 = mesh.vertices[t[0]];
    total += 0.5 * (mesh.vertices[t[1]] - v0).cross(mesh.vertices[t[2]] - v0).norm();
    cum[i] = total;
  }
  if (total <= 0.0) throw EmptyMesh("zero-area mesh");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Mat3X pts(3, n);
  for (int i = 0; i < n; ++i) {
    const double pickv = U(rng) * total;
    const auto it = std::lower_bound(cum.begin(), cum.end(), pickv);
    const auto& t = mesh.triangles[it - cum.begin()];
    double a = U(rng), b = U(rng);
    if (a + b > 1.0) {
      a = 1.0 - a;
      b = 1.0 - b;
    }
    pts.col(i) = mesh.vertices[t[0]] +
                 a * (mesh.vertices[t[1]] - mesh.vertices[t[0]]) +
                 b * (mesh.vertices[t[2]] - mesh.vertices[t[0]]);
  }
  return pts;
}

KdTree3::KdTree3(const Mat3X& points) {
  if (points.cols() == 0) throw EmptyCloud();
  pts_.resize(points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) pts_[i] = points.col(i);
  nodes_.reserve(2 * pts_.size() / 8 + 8);
  nodes_.push_back({});
  build(0, 0, static_cast<int>(pts_.size()), 0);
}

void KdTree3::build(int node, int begin, int end, int depth) {
  if (end - begin <= 16) {
    nodes_[node] = {-1, 0.0, begin, end, -1, -1};
    return;
  }
  Vec3 lo = pts_[begin], hi = pts_[begin];
  for (int i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(pts_[i]);
    hi = hi.cwiseMax(pts_[i]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(pts_.begin() + begin, pts_.begin() + mid, pts_.begin() + end,
                   [axis](const Vec3& a, const Vec3& b) { return a[axis] < b[axis]; });
  const double split = pts_[mid][axis];
  const int left = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_.push_back({});
  nodes_[node] = {axis, split, begin, end, left, left + 1};
  build(left, begin, mid, depth + 1);
  build(left + 1, mid, end, depth + 1);
}

void KdTree3::query(int node, const Vec3& q, double& best) const {
  const Node& nd = nodes_[node];
  if (nd.axis < 0) {
    for (int i = nd.begin; i < nd.end; ++i)
      best = std::min(best, (pts_[i] - q).squaredNorm());
    return;
  }
  const double d = q[nd.axis] - nd.split;
  const int first = d < 0.0 ? nd.left : nd.right;
  const int second = d < 0.0 ? nd.right : nd.left;
  query(first, q, best);
  if (d * d < best) query(second, q, best);
}

double KdTree3::nearest_sq(const Vec3& query_pt) const {
  double best = std::numeric_limits<double>::infinity();
  query(0, query_pt, best);
  return best;
}

MetricsReport evaluate(const Mat3X& pred, const Mat3X& gt, double tau) {
  if (pred.cols() == 0 || gt.cols() == 0) throw EmptyCloud();
  if (!(tau > 0.0)) throw InvalidInput("tau must be positive");
  const KdTree3 gt_tree(gt);
  const KdTree3 pred_tree(pred);

  auto directed = [&](const Mat3X& from, const KdTree3& to, double& mean_dist,
                      double& frac_within) {
    const Eigen::Index n = from.cols();
    const std::int64_t chunks = num_chunks(n, 4096);
    std::vector<double> sum(chunks, 0.0);
    std::vector<std::int64_t> within(chunks, 0);
    parallel_chunks(n, 4096, [&](int c, std::int64_t i0, std::int64_t i1) {
      for (std::int64_t i = i0; i < i1; ++i) {
        const double d = std::sqrt(to.nearest_sq(from.col(i)));
        sum[c] += d;
        if (d <= tau) ++within[c];
      }
    });
    double s = 0.0;
    std::int64_t w = 0;
    for (std::int64_t c = 0; c < chunks; ++c) {
      s += sum[c];
      w += within[c];
    }
    mean_dist = s / n;
    frac_within = static_cast<double>(w) / n;
  };

  MetricsReport rep;
  rep.tau = tau;
  rep.pred_points = static_cast<int>(pred.cols());
  rep.gt_points = static_cast<int>(gt.cols());
  directed(pred, gt_tree, rep.accuracy, rep.precision);
  directed(gt, pred_tree, rep.completeness, rep.recall);
  rep.fscore = rep.precision + rep.recall > 0.0
                   ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
                   : 0.0;
  return rep;
}

void save_mesh_ply(const std::string& path, const Mesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertices.size() << '\n'
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.triangles.size() << '\n'
      << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    const float xyz[3] = {static_cast<float>(v.x()), static_cast<float>(v.y()),
                          static_cast<float>(v.z())};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  for (const auto& t : mesh.triangles) {
    const unsigned char c = 3;
    out.write(reinterpret_cast<const char*>(&c), 1);
    const std::int32_t idx[3] = {t[0], t[1], t[2]};
    out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
  if (!out) throw IoError("short write on " + path);
}

void save_mesh_obj(const std::string& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(9);
  for (const auto& v : mesh.vertices)
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

namespace {

Mesh load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t n_vert = 0, n_face = 0;
  bool binary_le = false;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string tok;
    row >> tok;
    if (tok == "format") {
      std::string fmt;
      row >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tok == "element") {
      std::string what;
      std::size_t count;
      row >> what >> count;
      if (what == "vertex") n_vert = count;
      if (what == "face") n_face = count;
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!binary_le) throw IoError("only binary little-endian PLY supported");
  Mesh mesh;
  mesh.vertices.resize(n_vert);
  for (auto& v : mesh.vertices) {
    float xyz[3];
    in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
    v = Vec3(xyz[0], xyz[1], xyz[2]);
  }
  mesh.triangles.reserve(n_face);
  for (std::size_t i = 0; i < n_face; ++i) {
    unsigned char c;
    in.read(reinterpret_cast<char*>(&c), 1);
    if (c != 3) throw IoError("non-triangle face in " + path);
    std::int32_t idx[3];
    in.read(reinterpret_cast<char*>(idx), sizeof(idx));
    mesh.triangles.push_back({idx[0], idx[1], idx[2]});
  }
  if (!in) throw IoError("truncated PLY " + path);
  return mesh;
}

Mesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Mesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string tok;
    row >> tok;
    if (tok == "v") {
      Vec3 v;
      row >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tok == "f") {
      int a, b, c;
      row >> a >> b >> c;
      mesh.triangles.push_back({a - 1, b - 1, c - 1});
    }
  }
  return mesh;
}

}  // namespace

Mesh load_mesh(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".obj")
    return load_obj(path);
  return load_ply(path);
}

void save_metrics_json(const std::string& path, const MetricsReport& r) {
  nlohmann::json j;
  j["fscore"] = r.fscore;
  j["accuracy"] = r.accuracy;
  j["completeness"] = r.completeness;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["tau"] = r.tau;
  j["pred_points"] = r.pred_points;
  j["gt_points"] = r.gt_points;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace svr
