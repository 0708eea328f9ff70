#pragma once

#include <array>
#include <string>
#include <vector>

#include "svr/common.hpp"

namespace svr {

// Smooth activation with bounded second derivative. The scale trades
// initialization sharpness against curvature; 10 keeps finite-difference
// probes of the spatial gradient accurate at h = 1e-4.
struct Softplus {
  double k = 10.0;
  double f(double x) const;
  double df(double x) const;   // sigmoid(kx)
  double ddf(double x) const;  // k * s * (1 - s)
};

struct Linear {
  MatX W;
  VecX b;
};

// One fully connected network: hidden layers under Softplus, linear output.
// The cache stores everything backward needs; tangent buffers carry
// d/dx of every activation for the three spatial directions, which is what
// lets losses on the SDF spatial gradient reach the parameters.
struct MlpCache {
  MatX input;                                 // in x B
  std::vector<MatX> z, h;                     // per hidden layer
  std::vector<MatX> dfz;                      // activation derivative at z
  MatX out;                                   // out x B
  bool has_tangent = false;
  std::array<MatX, 3> jin;                    // d input / d x_t
  std::vector<std::array<MatX, 3>> jz, jh;
};

struct Mlp {
  std::vector<Linear> hidden;
  Linear out;
  Softplus act;

  int in_dim() const { return hidden.empty() ? out.W.cols() : hidden.front().W.cols(); }
  int out_dim() const { return static_cast<int>(out.W.rows()); }

  void forward(const MatX& x, MlpCache& c) const;
  void forward_tangent(const std::array<MatX, 3>& jx, MlpCache& c) const;

  // Accumulates parameter gradients; when in_bar is non-null it receives
  // dL/d(input). tangent_row0_bar is the adjoint of row 0 of (W_out * Jh),
  // i.e. of the spatial gradient of output 0 (3 x B); pass nullptr when the
  // cache has no tangent.
  void backward(const MlpCache& c, const MatX& out_bar,
                const Mat3X* tangent_row0_bar, Mlp& grads, MatX* in_bar) const;

  static Mlp zeros_like(const Mlp& other);
  void set_zero();
  void axpy(double a, const Mlp& other);  // this += a * other
};

// Frequency encoding: raw coords followed by (sin(2^k pi x), cos(2^k pi x))
// per octave and coordinate.
int encoding_dim(int levels);
MatX encode_positions(const Mat3X& pts, int levels);
void encode_positions_with_jacobian(const Mat3X& pts, int levels, MatX& enc,
                                    std::array<MatX, 3>& jac);
MatX encode_dirs(const Mat3X& dirs, int levels);

struct FieldSample {
  double sdf = 0.0;
  Vec3 gradient = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  VecX feature;
};

struct FieldArch {
  int sdf_width = 64;
  int sdf_hidden = 4;
  int color_width = 64;
  int color_hidden = 3;
  int feature_dim = 15;
  int pe_pos = 6;
  int pe_dir = 4;
  double init_radius = 1.8;  // 0.75 of the scene half-extent in practice
  double beta_init = 0.1;
};

struct FieldGrads {
  Mlp sdf;
  Mlp color;
  double beta = 0.0;
  void set_zero();
  void axpy(double a, const FieldGrads& other);
};

// Signed distance convention: negative in free space (the interior of the
// scene's watertight surface), positive inside solid structure. Density is
// the Laplace transform of the paper, high on the solid side.
struct SdfField {
  FieldArch arch;
  Mlp sdf_net;
  Mlp color_net;
  double beta = 0.1;

  static constexpr double kBetaMin = 1e-4;

  SdfField() = default;
  SdfField(const FieldArch& a, std::uint64_t seed);

  // Batched SDF evaluation. Points are 3 x B. Results land in the cache;
  // sdf row = cache.out row 0, features = remaining rows.
  void sdf_forward(const Mat3X& pts, bool with_tangent, MlpCache& c) const;
  Mat3X sdf_gradient_from_cache(const MlpCache& c) const;  // 3 x B

  // Color head. dirs must be unit; grad is the raw SDF spatial gradient.
  struct ColorCache {
    MlpCache mlp;
    MatX rgb;  // 3 x B, post-sigmoid
  };
  void color_forward(const Mat3X& pts, const Mat3X& dirs, const Mat3X& grad,
                     const MatX& feat, ColorCache& c) const;
  // grad_bar/feat_bar receive the input adjoints needed upstream.
  void color_backward(const ColorCache& c, const MatX& rgb_bar,
                      FieldGrads& grads, Mat3X& grad_bar, MatX& feat_bar) const;

  FieldSample eval(const Vec3& point, const Vec3& view_dir) const;

  FieldGrads zero_grads() const;

  struct TensorRef {
    std::string name;
    double* data;
    Eigen::Index size;
  };
  std::vector<TensorRef> tensors();  // fixed order, beta last
  static std::vector<TensorRef> grad_tensors(FieldGrads& g);
  Eigen::Index parameter_count();
};

// Laplace SDF-to-density transform. sigma rises monotonically with s:
// ~0 deep in free space (s << 0), 1/(2 beta) at the surface, 1/beta inside
// solids. InvalidBeta if beta <= 0.
double density_from_sdf(double s, double beta);
double density_dsdf(double s, double beta);
double density_dbeta(double s, double beta);

// Checkpoint: versioned binary dump of named tensors; load rejects shape
// mismatches and non-finite values.
void save_checkpoint(const std::string& path, const SdfField& field);
SdfField load_checkpoint(const std::string& path);

}  // namespace svr
