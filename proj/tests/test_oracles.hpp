// Test-only oracles, independent of the library's computation paths:
// a brute-force triangulation minimizer, ray-primitive closed forms, and
// finite-difference gradients.
#pragma once

#include <cmath>
#include <functional>

#include "svr/geometry.hpp"

namespace svr::testing {

// Minimizes the summed squared point-to-line distance over a shrinking 3D
// grid. Slow and simple on purpose.
inline Vec3 brute_force_triangulate(const Ray& a, const Ray& b, Vec3 center,
                                    double half_extent, int refinements = 8,
                                    int res = 20) {
  auto cost = [&](const Vec3& p) {
    const Vec3 da = p - a.origin, db = p - b.origin;
    const double ca = da.squaredNorm() - std::pow(da.dot(a.direction), 2);
    const double cb = db.squaredNorm() - std::pow(db.dot(b.direction), 2);
    return ca + cb;
  };
  Vec3 best = center;
  for (int pass = 0; pass < refinements; ++pass) {
    double best_cost = std::numeric_limits<double>::infinity();
    Vec3 best_local = center;
    for (int i = 0; i <= res; ++i)
      for (int j = 0; j <= res; ++j)
        for (int k = 0; k <= res; ++k) {
          const Vec3 p = center + half_extent *
                                      Vec3(2.0 * i / res - 1.0, 2.0 * j / res - 1.0,
                                           2.0 * k / res - 1.0);
          const double c = cost(p);
          if (c < best_cost) {
            best_cost = c;
            best_local = p;
          }
        }
    best = best_local;
    center = best_local;
    half_extent *= 2.5 / res;  // keep neighbors of the best cell
  }
  return best;
}

// First positive root of |o + t d - c|^2 = r^2, or -1.
inline double ray_sphere_depth(const Vec3& o, const Vec3& d, const Vec3& c,
                               double r) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - r * r);
  if (disc < 0) return -1.0;
  const double t = -b - std::sqrt(disc);
  return t > 0 ? t : -b + std::sqrt(disc);
}

inline double central_difference(const std::function<double(double)>& f,
                                 double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace svr::testing
