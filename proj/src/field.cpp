#include "svr/field.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace svr {

double Softplus::f(double x) const {
  // log(1+e^{kx})/k, evaluated through the sigmoid so forward and backward
  // share one transcendental pipeline.
  const double kx = k * x;
  if (kx > 0) return x + std::log1p(std::exp(-kx)) / k;
  return std::log1p(std::exp(kx)) / k;
}

double Softplus::df(double x) const {
  const double kx = k * x;
  if (kx >= 0) return 1.0 / (1.0 + std::exp(-kx));
  const double e = std::exp(kx);
  return e / (1.0 + e);
}

double Softplus::ddf(double x) const {
  const double s = df(x);
  return k * s * (1.0 - s);
}

namespace {

// Fills s = sigmoid(k z) and h = softplus(z) in one pass, stable at both
// saturation ends (exp underflow gives exactly s=0, h=0 or s=1, h=z).
void activation_forward(const Softplus& act, const MatX& z, MatX& s, MatX& h) {
  const double k = act.k;
  s.resizeLike(z);
  h.resizeLike(z);
  const double* zp = z.data();
  double* sp = s.data();
  double* hp = h.data();
  const Eigen::Index n = z.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double kx = k * zp[i];
    if (kx > 0) {
      const double e = std::exp(-kx);
      sp[i] = 1.0 / (1.0 + e);
      hp[i] = zp[i] + std::log1p(e) / k;
    } else {
      const double e = std::exp(kx);
      sp[i] = e / (1.0 + e);
      hp[i] = std::log1p(e) / k;
    }
  }
}

}  // namespace

void Mlp::forward(const MatX& x, MlpCache& c) const {
  const std::size_t L = hidden.size();
  c.input = x;
  c.z.resize(L);
  c.h.resize(L);
  if (c.dfz.size() != L) c.dfz.resize(L);
  const MatX* prev = &c.input;
  for (std::size_t l = 0; l < L; ++l) {
    c.z[l].noalias() = hidden[l].W * (*prev);
    c.z[l].colwise() += hidden[l].b;
    activation_forward(act, c.z[l], c.dfz[l], c.h[l]);
    prev = &c.h[l];
  }
  c.out.noalias() = out.W * (*prev);
  c.out.colwise() += out.b;
  c.has_tangent = false;
}

void Mlp::forward_tangent(const std::array<MatX, 3>& jx, MlpCache& c) const {
  const std::size_t L = hidden.size();
  c.jin = jx;
  c.jz.resize(L);
  c.jh.resize(L);
  const std::array<MatX, 3>* prev = &c.jin;
  for (std::size_t l = 0; l < L; ++l) {
    for (int t = 0; t < 3; ++t) {
      c.jz[l][t].noalias() = hidden[l].W * (*prev)[t];
      c.jh[l][t] = c.dfz[l].cwiseProduct(c.jz[l][t]);
    }
    prev = &c.jh[l];
  }
  c.has_tangent = true;
}

void Mlp::backward(const MlpCache& c, const MatX& out_bar,
                   const Mat3X* tangent_row0_bar, Mlp& grads,
                   MatX* in_bar) const {
  const std::size_t L = hidden.size();
  const MatX& h_last = L ? c.h.back() : c.input;

  grads.out.W.noalias() += out_bar * h_last.transpose();
  grads.out.b.noalias() += out_bar.rowwise().sum();
  MatX h_bar = out.W.transpose() * out_bar;

  std::array<MatX, 3> jh_bar;
  const bool tangent = tangent_row0_bar != nullptr;
  if (tangent) {
    for (int t = 0; t < 3; ++t) {
      const MatX& jh_last = L ? c.jh.back()[t] : c.jin[t];
      grads.out.W.row(0).noalias() +=
          tangent_row0_bar->row(t) * jh_last.transpose();
      jh_bar[t].noalias() =
          out.W.row(0).transpose() * tangent_row0_bar->row(t);
    }
  }

  for (std::size_t li = L; li-- > 0;) {
    const MatX& s = c.dfz[li];
    MatX z_bar = s.cwiseProduct(h_bar);
    std::array<MatX, 3> jz_bar;
    if (tangent) {
      // Second-derivative path: the tangent activation jh = s .* jz depends
      // on z, so adjoints flowing into jh also reach z.
      MatX mix = c.jz[li][0].cwiseProduct(jh_bar[0]) +
                 c.jz[li][1].cwiseProduct(jh_bar[1]) +
                 c.jz[li][2].cwiseProduct(jh_bar[2]);
      z_bar += (act.k * s.array() * (1.0 - s.array()) * mix.array()).matrix();
      for (int t = 0; t < 3; ++t) jz_bar[t] = s.cwiseProduct(jh_bar[t]);
    }

    const MatX& h_prev = li ? c.h[li - 1] : c.input;
    grads.hidden[li].W.noalias() += z_bar * h_prev.transpose();
    grads.hidden[li].b.noalias() += z_bar.rowwise().sum();
    if (tangent) {
      const std::array<MatX, 3>& jh_prev = li ? c.jh[li - 1] : c.jin;
      for (int t = 0; t < 3; ++t) {
        grads.hidden[li].W.noalias() += jz_bar[t] * jh_prev[t].transpose();
        if (li) jh_bar[t].noalias() = hidden[li].W.transpose() * jz_bar[t];
      }
    }
    if (li || in_bar) h_bar.noalias() = hidden[li].W.transpose() * z_bar;
  }
  if (in_bar) *in_bar = std::move(h_bar);
}

Mlp Mlp::zeros_like(const Mlp& other) {
  Mlp g;
  g.act = other.act;
  g.hidden.resize(other.hidden.size());
  for (std::size_t l = 0; l < other.hidden.size(); ++l) {
    g.hidden[l].W = MatX::Zero(other.hidden[l].W.rows(), other.hidden[l].W.cols());
    g.hidden[l].b = VecX::Zero(other.hidden[l].b.size());
  }
  g.out.W = MatX::Zero(other.out.W.rows(), other.out.W.cols());
  g.out.b = VecX::Zero(other.out.b.size());
  return g;
}

void Mlp::set_zero() {
  for (auto& l : hidden) {
    l.W.setZero();
    l.b.setZero();
  }
  out.W.setZero();
  out.b.setZero();
}

void Mlp::axpy(double a, const Mlp& other) {
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    hidden[l].W += a * other.hidden[l].W;
    hidden[l].b += a * other.hidden[l].b;
  }
  out.W += a * other.out.W;
  out.b += a * other.out.b;
}

int encoding_dim(int levels) { return 3 + 6 * levels; }

MatX encode_positions(const Mat3X& pts, int levels) {
  const Eigen::Index B = pts.cols();
  MatX enc(encoding_dim(levels), B);
  enc.topRows(3) = pts;
  for (int k = 0; k < levels; ++k) {
    const double freq = std::pow(2.0, k) * M_PI;
    for (int c = 0; c < 3; ++c) {
      const int row = 3 + 6 * k + 2 * c;
      enc.row(row) = (freq * pts.row(c).array()).sin();
      enc.row(row + 1) = (freq * pts.row(c).array()).cos();
    }
  }
  return enc;
}

void encode_positions_with_jacobian(const Mat3X& pts, int levels, MatX& enc,
                                    std::array<MatX, 3>& jac) {
  const Eigen::Index B = pts.cols();
  const int dim = encoding_dim(levels);
  enc.resize(dim, B);
  enc.topRows(3) = pts;
  for (int t = 0; t < 3; ++t) {
    jac[t] = MatX::Zero(dim, B);
    jac[t].row(t).setOnes();
  }
  for (int k = 0; k < levels; ++k) {
    const double freq = std::pow(2.0, k) * M_PI;
    for (int c = 0; c < 3; ++c) {
      const int row = 3 + 6 * k + 2 * c;
      RowArrX s = (freq * pts.row(c).array()).sin();
      RowArrX co = (freq * pts.row(c).array()).cos();
      enc.row(row) = s;
      enc.row(row + 1) = co;
      jac[c].row(row) = freq * co;
      jac[c].row(row + 1) = -freq * s;
    }
  }
}

MatX encode_dirs(const Mat3X& dirs, int levels) {
  return encode_positions(dirs, levels);
}

void FieldGrads::set_zero() {
  sdf.set_zero();
  color.set_zero();
  beta = 0.0;
}

void FieldGrads::axpy(double a, const FieldGrads& other) {
  sdf.axpy(a, other.sdf);
  color.axpy(a, other.color);
  beta += a * other.beta;
}

namespace {

Mlp make_mlp(int in, int width, int n_hidden, int out_dim) {
  Mlp m;
  m.hidden.resize(n_hidden);
  int prev = in;
  for (int l = 0; l < n_hidden; ++l) {
    m.hidden[l].W.resize(width, prev);
    m.hidden[l].b = VecX::Zero(width);
    prev = width;
  }
  m.out.W.resize(out_dim, prev);
  m.out.b = VecX::Zero(out_dim);
  return m;
}

}  // namespace

SdfField::SdfField(const FieldArch& a, std::uint64_t seed) : arch(a) {
  beta = a.beta_init;
  const int sdf_in = encoding_dim(a.pe_pos);
  const int color_in = 3 + encoding_dim(a.pe_dir) + 3 + a.feature_dim;
  sdf_net = make_mlp(sdf_in, a.sdf_width, a.sdf_hidden, 1 + a.feature_dim);
  color_net = make_mlp(color_in, a.color_width, a.color_hidden, 3);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  auto fill = [&](MatX& W, double std_dev, double mean = 0.0) {
    for (Eigen::Index j = 0; j < W.cols(); ++j)
      for (Eigen::Index i = 0; i < W.rows(); ++i)
        W(i, j) = mean + std_dev * N(rng);
  };

  // Geometric initialization: the network starts out close to
  // f(x) = |x| - init_radius, with the frequency-encoded inputs silenced.
  for (std::size_t l = 0; l < sdf_net.hidden.size(); ++l) {
    MatX& W = sdf_net.hidden[l].W;
    fill(W, std::sqrt(2.0 / W.rows()));
    if (l == 0) W.rightCols(W.cols() - 3).setZero();
  }
  {
    MatX& W = sdf_net.out.W;
    const double m = std::sqrt(M_PI / W.cols());
    for (Eigen::Index j = 0; j < W.cols(); ++j) W(0, j) = m + 1e-4 * N(rng);
    for (Eigen::Index i = 1; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j)
        W(i, j) = std::sqrt(2.0 / W.cols()) * N(rng);
    sdf_net.out.b(0) = -a.init_radius;
  }

  for (auto& l : color_net.hidden) fill(l.W, std::sqrt(2.0 / l.W.cols()));
  fill(color_net.out.W, std::sqrt(1.0 / color_net.out.W.cols()));
}

void SdfField::sdf_forward(const Mat3X& pts, bool with_tangent,
                           MlpCache& c) const {
  if (with_tangent) {
    MatX enc;
    std::array<MatX, 3> jac;
    encode_positions_with_jacobian(pts, arch.pe_pos, enc, jac);
    sdf_net.forward(enc, c);
    sdf_net.forward_tangent(jac, c);
  } else {
    sdf_net.forward(encode_positions(pts, arch.pe_pos), c);
  }
}

Mat3X SdfField::sdf_gradient_from_cache(const MlpCache& c) const {
  const std::size_t L = sdf_net.hidden.size();
  Mat3X g(3, c.out.cols());
  for (int t = 0; t < 3; ++t) {
    const MatX& jh_last = L ? c.jh.back()[t] : c.jin[t];
    g.row(t).noalias() = sdf_net.out.W.row(0) * jh_last;
  }
  return g;
}

void SdfField::color_forward(const Mat3X& pts, const Mat3X& dirs,
                             const Mat3X& grad, const MatX& feat,
                             ColorCache& c) const {
  const Eigen::Index B = pts.cols();
  const int dir_dim = encoding_dim(arch.pe_dir);
  MatX in(3 + dir_dim + 3 + arch.feature_dim, B);
  in.topRows(3) = pts;
  in.middleRows(3, dir_dim) = encode_dirs(dirs, arch.pe_dir);
  in.middleRows(3 + dir_dim, 3) = grad;
  in.bottomRows(arch.feature_dim) = feat;
  color_net.forward(in, c.mlp);
  c.rgb = c.mlp.out.unaryExpr(
      [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

void SdfField::color_backward(const ColorCache& c, const MatX& rgb_bar,
                              FieldGrads& grads, Mat3X& grad_bar,
                              MatX& feat_bar) const {
  MatX out_bar =
      rgb_bar.cwiseProduct(c.rgb.cwiseProduct(MatX::Ones(3, c.rgb.cols()) - c.rgb));
  MatX in_bar;
  color_net.backward(c.mlp, out_bar, nullptr, grads.color, &in_bar);
  const int dir_dim = encoding_dim(arch.pe_dir);
  grad_bar = in_bar.middleRows(3 + dir_dim, 3);
  feat_bar = in_bar.bottomRows(arch.feature_dim);
}

FieldSample SdfField::eval(const Vec3& point, const Vec3& view_dir) const {
  if (!point.allFinite() || !view_dir.allFinite())
    throw InvalidInput("non-finite field input");
  if (std::abs(view_dir.norm() - 1.0) > 1e-6)
    throw InvalidInput("view direction not unit norm");
  MlpCache c;
  sdf_forward(point, true, c);
  Mat3X g = sdf_gradient_from_cache(c);
  ColorCache cc;
  color_forward(point, view_dir, g, c.out.bottomRows(arch.feature_dim), cc);
  FieldSample s;
  s.sdf = c.out(0, 0);
  s.gradient = g.col(0);
  s.color = cc.rgb.col(0);
  s.feature = c.out.col(0).tail(arch.feature_dim);
  return s;
}

FieldGrads SdfField::zero_grads() const {
  FieldGrads g;
  g.sdf = Mlp::zeros_like(sdf_net);
  g.color = Mlp::zeros_like(color_net);
  g.beta = 0.0;
  return g;
}

namespace {

void push_mlp_tensors(const std::string& prefix, Mlp& m,
                      std::vector<SdfField::TensorRef>& refs) {
  for (std::size_t l = 0; l < m.hidden.size(); ++l) {
    refs.push_back({prefix + ".h" + std::to_string(l) + ".W",
                    m.hidden[l].W.data(), m.hidden[l].W.size()});
    refs.push_back({prefix + ".h" + std::to_string(l) + ".b",
                    m.hidden[l].b.data(), m.hidden[l].b.size()});
  }
  refs.push_back({prefix + ".out.W", m.out.W.data(), m.out.W.size()});
  refs.push_back({prefix + ".out.b", m.out.b.data(), m.out.b.size()});
}

}  // namespace

std::vector<SdfField::TensorRef> SdfField::tensors() {
  std::vector<TensorRef> refs;
  push_mlp_tensors("sdf", sdf_net, refs);
  push_mlp_tensors("color", color_net, refs);
  refs.push_back({"beta", &beta, 1});
  return refs;
}

std::vector<SdfField::TensorRef> SdfField::grad_tensors(FieldGrads& g) {
  std::vector<TensorRef> refs;
  push_mlp_tensors("sdf", g.sdf, refs);
  push_mlp_tensors("color", g.color, refs);
  refs.push_back({"beta", &g.beta, 1});
  return refs;
}

Eigen::Index SdfField::parameter_count() {
  Eigen::Index n = 0;
  for (const auto& t : tensors()) n += t.size;
  return n;
}

double density_from_sdf(double s, double beta) {
  if (beta <= 0.0) throw InvalidBeta();
  if (s <= 0.0) return 0.5 / beta * std::exp(s / beta);
  return (1.0 - 0.5 * std::exp(-s / beta)) / beta;
}

double density_dsdf(double s, double beta) {
  if (beta <= 0.0) throw InvalidBeta();
  return 0.5 / (beta * beta) * std::exp(-std::abs(s) / beta);
}

double density_dbeta(double s, double beta) {
  if (beta <= 0.0) throw InvalidBeta();
  const double b2 = beta * beta;
  if (s <= 0.0) return -0.5 / b2 * std::exp(s / beta) * (1.0 + s / beta);
  return -1.0 / b2 + 0.5 / b2 * std::exp(-s / beta) * (1.0 - s / beta);
}

namespace {

constexpr char kMagic[9] = "SVRCKPT1";

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint");
}

}  // namespace

void save_checkpoint(const std::string& path, const SdfField& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  SdfField& f = const_cast<SdfField&>(field);
  const FieldArch& a = field.arch;
  for (int v : {a.sdf_width, a.sdf_hidden, a.color_width, a.color_hidden,
                a.feature_dim, a.pe_pos, a.pe_dir})
    write_pod(out, static_cast<std::int32_t>(v));
  write_pod(out, a.init_radius);
  write_pod(out, a.beta_init);
  auto refs = f.tensors();
  write_pod(out, static_cast<std::int32_t>(refs.size()));
  for (const auto& t : refs) {
    write_pod(out, static_cast<std::int32_t>(t.name.size()));
    out.write(t.name.data(), t.name.size());
    write_pod(out, static_cast<std::int64_t>(t.size));
    out.write(reinterpret_cast<const char*>(t.data), t.size * sizeof(double));
  }
  if (!out) throw IoError("short write on checkpoint " + path);
}

SdfField load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8))
    throw IoError("not a checkpoint file: " + path);
  FieldArch a;
  std::int32_t v;
  read_pod(in, v); a.sdf_width = v;
  read_pod(in, v); a.sdf_hidden = v;
  read_pod(in, v); a.color_width = v;
  read_pod(in, v); a.color_hidden = v;
  read_pod(in, v); a.feature_dim = v;
  read_pod(in, v); a.pe_pos = v;
  read_pod(in, v); a.pe_dir = v;
  read_pod(in, a.init_radius);
  read_pod(in, a.beta_init);
  SdfField field(a, 0);
  auto refs = field.tensors();
  std::int32_t count;
  read_pod(in, count);
  if (count != static_cast<std::int32_t>(refs.size()))
    throw ShapeError("checkpoint tensor count mismatch");
  for (auto& t : refs) {
    std::int32_t name_len;
    read_pod(in, name_len);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::int64_t size;
    read_pod(in, size);
    if (name != t.name || size != t.size)
      throw ShapeError("checkpoint tensor mismatch: " + name);
    in.read(reinterpret_cast<char*>(t.data), size * sizeof(double));
    if (!in) throw IoError("truncated checkpoint");
    for (Eigen::Index i = 0; i < t.size; ++i)
      if (!std::isfinite(t.data[i]))
        throw ParseError("non-finite value in checkpoint tensor " + name);
  }
  return field;
}

}  // namespace svr
