#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace svr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;
using Mat3X = Eigen::Matrix3Xd;
using Mat2X = Eigen::Matrix2Xd;
using RowArrX = Eigen::Array<double, 1, Eigen::Dynamic>;

// Error taxonomy. Each failure mode named by the contract it violates.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
#define SVR_ERROR(name)                                         \
  struct name : Error {                                         \
    explicit name(const std::string& m = #name) : Error(m) {}   \
  }

SVR_ERROR(OutOfBounds);
SVR_ERROR(BehindCamera);
SVR_ERROR(DegenerateParallel);
SVR_ERROR(DegenerateBaseline);
SVR_ERROR(IllConditioned);
SVR_ERROR(InvalidCamera);
SVR_ERROR(ParseError);
SVR_ERROR(UnknownView);
SVR_ERROR(AllUncertain);
SVR_ERROR(InvalidInput);
SVR_ERROR(InvalidBeta);
SVR_ERROR(InvalidRange);
SVR_ERROR(ShapeError);
SVR_ERROR(InvalidPrior);
SVR_ERROR(Degenerate);
SVR_ERROR(UnknownScene);
SVR_ERROR(InvalidScene);
SVR_ERROR(TooFewViews);
SVR_ERROR(NoOverlap);
SVR_ERROR(EmptyMesh);
SVR_ERROR(EmptyCloud);
SVR_ERROR(IoError);
SVR_ERROR(MissingInput);
SVR_ERROR(NonFiniteLoss);

#undef SVR_ERROR

// Worker pool used by every batched computation. Work is split into
// fixed-size chunks by index, so results never depend on the thread count;
// callers that reduce must combine per-chunk outputs in chunk order.
int thread_count();                 // SVRECON_THREADS env override, else hardware
void set_thread_count(int n);       // 0 restores the default

// Runs fn(chunk_index, begin, end) over [0, n) in chunks of chunk_size.
void parallel_chunks(std::int64_t n, std::int64_t chunk_size,
                     const std::function<void(int, std::int64_t, std::int64_t)>& fn);

inline std::int64_t num_chunks(std::int64_t n, std::int64_t chunk_size) {
  return (n + chunk_size - 1) / chunk_size;
}

// FNV-1a, used for input hashes in run manifests.
std::uint64_t fnv1a(const void* data, std::size_t len);
std::uint64_t hash_file(const std::string& path);  // IoError if unreadable

constexpr const char* kVersion = "svrecon 0.1.0";

}  // namespace svr
