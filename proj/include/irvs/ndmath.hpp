#pragma once

// Dense MLP math with reverse-mode gradients w.r.t. parameters and inputs,
// spectral normalization, optimizers, and the text checkpoint format.
//
// Conventions: batches are row-major matrices with one sample per row.
// A layer maps h (in) to W h + b (out); ReLU between layers, none after the
// last one.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "irvs/errors.hpp"
#include "irvs/rng.hpp"

namespace irvs {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kSigmaFloor = 1e-12;

enum class Activation { kRelu };

// Which weight matrices are divided by their top singular value.
enum class SpectralScope { kAll, kHidden };

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  // Power-iteration state for spectral norm. The forward pass uses
  // sigma = u^T W v with both vectors held fixed; refresh_spectral() advances them.
  Vector u;  // out
  Vector v;  // in

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

struct MlpParams {
  std::vector<Layer> layers;
  Activation activation = Activation::kRelu;
  bool spectral_norm = false;
  SpectralScope spectral_scope = SpectralScope::kAll;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
  int depth() const { return static_cast<int>(layers.size()); }

  bool normalizes(std::size_t i) const {
    if (!spectral_norm) return false;
    return spectral_scope == SpectralScope::kAll || i + 1 < layers.size();
  }

  std::vector<int> sizes() const {
    std::vector<int> out;
    if (layers.empty()) return out;
    out.push_back(input_dim());
    for (const auto& l : layers) out.push_back(l.out_dim());
    return out;
  }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }
};

// Same layout as MlpParams, holding derivatives.
struct MlpGrad {
  std::vector<Matrix> d_weight;
  std::vector<Vector> d_bias;

  static MlpGrad zeros_like(const MlpParams& p) {
    MlpGrad g;
    for (const auto& l : p.layers) {
      g.d_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.d_bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

  MlpGrad& add_scaled(const MlpGrad& other, double scale) {
    for (std::size_t i = 0; i < d_weight.size(); ++i) {
      d_weight[i] += scale * other.d_weight[i];
      d_bias[i] += scale * other.d_bias[i];
    }
    return *this;
  }

  double squared_norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < d_weight.size(); ++i) {
      s += d_weight[i].squaredNorm() + d_bias[i].squaredNorm();
    }
    return s;
  }
};

struct GradPair {
  MlpGrad d_params;
  Vector d_input;
};

inline void check_chain(const MlpParams& p) {
  if (p.layers.empty()) throw ShapeError("mlp has no layers");
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    if (l.bias.size() != l.weight.rows()) throw ShapeError("bias size does not match layer output");
    if (i > 0 && l.in_dim() != p.layers[i - 1].out_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " input dim " + std::to_string(l.in_dim()) +
                       " does not chain with previous output " + std::to_string(p.layers[i - 1].out_dim()));
    }
  }
}

// ---------------------------------------------------------------------------
// Spectral normalization

struct SpectralResult {
  Matrix scaled;
  Vector u;
  double sigma = 0.0;
};

namespace detail {

struct PowerState {
  Vector u, v;
  double sigma;
};

inline PowerState power_iterate(const Matrix& w, Vector u, Vector v, int iters) {
  for (int k = 0; k < iters; ++k) {
    Vector nv = w.transpose() * u;
    double nvn = nv.norm();
    if (!(nvn > 0.0)) break;
    v = nv / nvn;
    Vector nu = w * v;
    double nun = nu.norm();
    if (!(nun > 0.0)) break;
    u = nu / nun;
  }
  double sigma = (v.size() == w.cols()) ? u.dot(w * v) : 0.0;
  return {std::move(u), std::move(v), sigma};
}

}  // namespace detail

// Power iteration estimate of the top singular value. A zero matrix yields
// sigma = kSigmaFloor and a zero scaled matrix.
inline SpectralResult spectral_normalize(const Matrix& weight, const Vector& u, int iters) {
  if (iters < 1) throw ArgumentError("spectral_normalize needs iters >= 1");
  if (u.size() != weight.rows()) throw ShapeError("power iteration vector must have weight.rows() entries");
  double un = u.norm();
  if (!(un > 0.0)) throw ArgumentError("power iteration vector must be nonzero");
  auto st = detail::power_iterate(weight, u / un, Vector::Zero(weight.cols()), iters);
  SpectralResult r;
  r.sigma = std::max(st.sigma, kSigmaFloor);
  r.u = st.u;
  if (st.sigma <= kSigmaFloor) {
    r.scaled = Matrix::Zero(weight.rows(), weight.cols());
  } else {
    r.scaled = weight / r.sigma;
  }
  return r;
}

inline double layer_sigma(const Layer& l) { return std::max(l.u.dot(l.weight * l.v), kSigmaFloor); }

inline void refresh_spectral(MlpParams& p, int iters) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    if (!p.normalizes(i)) continue;
    auto& l = p.layers[i];
    auto st = detail::power_iterate(l.weight, l.u, l.v, iters);
    l.u = std::move(st.u);
    l.v = std::move(st.v);
  }
}

inline Matrix effective_weight(const MlpParams& p, std::size_t i) {
  const auto& l = p.layers[i];
  if (!p.normalizes(i)) return l.weight;
  return l.weight / layer_sigma(l);
}

// ---------------------------------------------------------------------------
// Construction

// Fan-in scaled uniform init, bound sqrt(1/fan_in), for weights and biases.
inline MlpParams make_mlp(std::span<const int> sizes, Rng& rng, bool spectral_norm = false,
                          SpectralScope scope = SpectralScope::kAll) {
  if (sizes.size() < 2) throw ArgumentError("mlp needs at least input and output sizes");
  MlpParams p;
  p.spectral_norm = spectral_norm;
  p.spectral_scope = scope;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    int in = sizes[i], out = sizes[i + 1];
    if (in < 1 || out < 1) throw ArgumentError("layer sizes must be positive");
    double bound = std::sqrt(1.0 / in);
    std::uniform_real_distribution<double> init(-bound, bound);
    Layer l;
    l.weight.resize(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = init(rng);
    l.bias.resize(out);
    for (int r = 0; r < out; ++r) l.bias(r) = init(rng);
    l.u.resize(out);
    for (int r = 0; r < out; ++r) l.u(r) = normal(rng);
    l.u.normalize();
    l.v = Vector::Zero(in);
    p.layers.push_back(std::move(l));
  }
  // Seed v (and sharpen u) so sigma is accurate from the first forward pass.
  for (auto& l : p.layers) {
    auto st = detail::power_iterate(l.weight, l.u, l.v, 30);
    l.u = std::move(st.u);
    l.v = std::move(st.v);
  }
  return p;
}

inline MlpParams make_mlp(std::initializer_list<int> sizes, Rng& rng, bool spectral_norm = false,
                          SpectralScope scope = SpectralScope::kAll) {
  std::vector<int> s(sizes);
  return make_mlp(std::span<const int>(s), rng, spectral_norm, scope);
}

// Width x depth hidden stack between in_dim and out_dim.
inline std::vector<int> mlp_sizes(int in_dim, int width, int depth, int out_dim) {
  std::vector<int> s{in_dim};
  for (int i = 0; i < depth; ++i) s.push_back(width);
  s.push_back(out_dim);
  return s;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardTape {
  std::vector<Matrix> inputs;   // h_{l-1}, one per layer
  std::vector<Matrix> pre;      // z_l, one per layer
  std::vector<Matrix> weights;  // effective weights
};

inline Matrix forward_batch(const MlpParams& p, const Matrix& x, ForwardTape* tape = nullptr) {
  check_chain(p);
  if (x.cols() != p.input_dim()) {
    throw ShapeError("input dim " + std::to_string(x.cols()) + " != network input " +
                     std::to_string(p.input_dim()));
  }
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->weights.clear();
  }
  Matrix h = x;
  const std::size_t n = p.layers.size();
  for (std::size_t i = 0; i < n; ++i) {
    Matrix w = effective_weight(p, i);
    Matrix z = h * w.transpose();
    z.rowwise() += p.layers[i].bias.transpose();
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->weights.push_back(w);
    }
    if (i + 1 < n) {
      h = z.cwiseMax(0.0);
    } else {
      h = z;
    }
    if (tape) tape->pre.push_back(std::move(z));
  }
  return h;
}

// Chain rule through W_eff = W / (u^T W v) with u, v held constant.
inline Matrix spectral_weight_grad(const Layer& l, const Matrix& d_eff) {
  double sigma = layer_sigma(l);
  if (sigma <= kSigmaFloor) return d_eff / sigma;
  double inner = (d_eff.array() * l.weight.array()).sum();
  Matrix g = d_eff / sigma;
  g.noalias() -= (inner / (sigma * sigma)) * (l.u * l.v.transpose());
  return g;
}

struct BackwardResult {
  MlpGrad grads;            // empty when parameter gradients were not requested
  Matrix d_input;           // N x in
  std::vector<Matrix> d_pre;  // dL/dz_l per layer (kept for second-order terms)
};

// Reverse pass for an upstream gradient d_out (N x out). Parameter gradients
// are summed over the batch.
inline BackwardResult backward_batch(const MlpParams& p, const ForwardTape& tape, const Matrix& d_out,
                                     bool want_params = true, bool keep_pre = false) {
  const std::size_t n = p.layers.size();
  if (tape.pre.size() != n) throw ArgumentError("tape does not match network");
  if (d_out.cols() != p.output_dim() || d_out.rows() != tape.pre.back().rows()) {
    throw ShapeError("upstream gradient shape does not match network output");
  }
  BackwardResult r;
  if (want_params) r.grads = MlpGrad::zeros_like(p);
  if (keep_pre) r.d_pre.resize(n);
  Matrix dz = d_out;
  for (std::size_t k = n; k-- > 0;) {
    if (want_params) {
      Matrix d_eff = dz.transpose() * tape.inputs[k];
      r.grads.d_weight[k] = p.normalizes(k) ? spectral_weight_grad(p.layers[k], d_eff) : d_eff;
      r.grads.d_bias[k] = dz.colwise().sum().transpose();
    }
    Matrix dh = dz * tape.weights[k];
    if (keep_pre) r.d_pre[k] = std::move(dz);
    if (k == 0) {
      r.d_input = std::move(dh);
    } else {
      dz = (tape.pre[k - 1].array() > 0.0).select(dh.array(), 0.0).matrix();
    }
  }
  return r;
}

// Scalar-output network: values and input gradients for every row.
inline Matrix input_gradients(const MlpParams& p, const Matrix& x, Vector* values = nullptr) {
  if (p.output_dim() != 1) throw ShapeError("input_gradients needs a scalar-output network");
  ForwardTape tape;
  Matrix out = forward_batch(p, x, &tape);
  if (values) *values = out.col(0);
  Matrix ones = Matrix::Ones(x.rows(), 1);
  return backward_batch(p, tape, ones, false).d_input;
}

inline double mlp_forward(const MlpParams& p, const Vector& input) {
  if (p.output_dim() != 1) throw ShapeError("mlp_forward needs a scalar-output network");
  Matrix x = input.transpose();
  return forward_batch(p, x)(0, 0);
}

inline GradPair mlp_backward(const MlpParams& p, const Vector& input) {
  if (p.output_dim() != 1) throw ShapeError("mlp_backward needs a scalar-output network");
  ForwardTape tape;
  Matrix x = input.transpose();
  forward_batch(p, x, &tape);
  auto r = backward_batch(p, tape, Matrix::Ones(1, 1));
  return {std::move(r.grads), r.d_input.row(0).transpose()};
}

// Parameter gradient of sum_n c_n . grad_x f(x_n) for a scalar-output ReLU
// network, with the activation pattern held fixed. The directional
// derivative along c_n is a product of the layer maps, so each weight enters
// exactly once: d/dW_l = (dE/dz_l)^T t_{l-1}, where t is c pushed forward
// through the masked linear layers. Biases do not contribute.
inline MlpGrad input_grad_param_grad(const MlpParams& p, const ForwardTape& tape,
                                     const std::vector<Matrix>& d_pre, const Matrix& directions) {
  const std::size_t n = p.layers.size();
  MlpGrad g = MlpGrad::zeros_like(p);
  Matrix t = directions;
  for (std::size_t k = 0; k < n; ++k) {
    Matrix d_eff = d_pre[k].transpose() * t;
    g.d_weight[k] = p.normalizes(k) ? spectral_weight_grad(p.layers[k], d_eff) : d_eff;
    if (k + 1 < n) {
      Matrix nt = t * tape.weights[k].transpose();
      t = (tape.pre[k].array() > 0.0).select(nt.array(), 0.0).matrix();
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { kSgd, kAdam };

class Optimizer {
 public:
  explicit Optimizer(OptimizerKind kind = OptimizerKind::kAdam, double beta1 = 0.9, double beta2 = 0.999,
                     double eps = 1e-8)
      : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(MlpParams& p, const MlpGrad& g, double lr) {
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < p.layers.size(); ++i) {
        p.layers[i].weight -= lr * g.d_weight[i];
        p.layers[i].bias -= lr * g.d_bias[i];
      }
      return;
    }
    if (m_.d_weight.empty()) {
      m_ = MlpGrad::zeros_like(p);
      v_ = MlpGrad::zeros_like(p);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
      m = beta1_ * m + (1.0 - beta1_) * grad;
      v = beta2_ * v + (1.0 - beta2_) * grad.cwiseProduct(grad);
      param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
      update(p.layers[i].weight, m_.d_weight[i], v_.d_weight[i], g.d_weight[i]);
      update(p.layers[i].bias, m_.d_bias[i], v_.d_bias[i], g.d_bias[i]);
    }
  }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
  MlpGrad m_, v_;
};

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ArgumentError("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

// ---------------------------------------------------------------------------
// Checkpoints
//
//   # irvs-mlp v1
//   role <tag>
//   activation relu
//   spectral <0|1> <all|hidden>
//   sizes <n0> <n1> ... <nL>
//   layer <i>            (then weight rows, bias, u, v; one line each)
//
// Values are written with 17 significant digits, which round-trips doubles.

namespace detail {

inline void write_row(std::ostream& os, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i) os << ' ';
    os << data[i];
  }
  os << '\n';
}

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::string next(const char* what) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return line;
    }
    throw FormatError("line " + std::to_string(line_no_ + 1) + ": unexpected end of file, expected " + what);
  }

  std::vector<double> numbers(const char* what, Eigen::Index expect) {
    std::string line = next(what);
    std::vector<double> out;
    const char* c = line.c_str();
    char* end = nullptr;
    while (true) {
      double v = std::strtod(c, &end);
      if (end == c) break;
      out.push_back(v);
      c = end;
    }
    while (*c == ' ' || *c == '\t') ++c;
    if (*c != '\0' || static_cast<Eigen::Index>(out.size()) != expect) {
      fail("expected " + std::to_string(expect) + " values for " + what + ", got '" + line + "'");
    }
    return out;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("line " + std::to_string(line_no_) + ": " + msg);
  }

  int line_no() const { return line_no_; }

 private:
  std::istream& is_;
  int line_no_ = 0;
};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const MlpParams& p, const std::string& role = "mlp") {
  check_chain(p);
  auto old_prec = os.precision(17);
  os << "# irvs-mlp v1\n";
  os << "role " << role << '\n';
  os << "activation relu\n";
  os << "spectral " << (p.spectral_norm ? 1 : 0) << ' '
     << (p.spectral_scope == SpectralScope::kAll ? "all" : "hidden") << '\n';
  os << "sizes";
  for (int s : p.sizes()) os << ' ' << s;
  os << '\n';
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    os << "layer " << i << '\n';
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) detail::write_row(os, l.weight.row(r).data(), l.weight.cols());
    detail::write_row(os, l.bias.data(), l.bias.size());
    detail::write_row(os, l.u.data(), l.u.size());
    detail::write_row(os, l.v.data(), l.v.size());
  }
  os.precision(old_prec);
}

inline MlpParams read_checkpoint(std::istream& is, std::string* role = nullptr) {
  detail::LineReader rd(is);
  if (rd.next("header") != "# irvs-mlp v1") rd.fail("not an irvs-mlp v1 checkpoint");
  MlpParams p;
  std::string tag, value;
  {
    std::istringstream ss(rd.next("role"));
    if (!(ss >> tag >> value) || tag != "role") rd.fail("expected 'role <tag>'");
    if (role) *role = value;
  }
  {
    std::istringstream ss(rd.next("activation"));
    if (!(ss >> tag >> value) || tag != "activation" || value != "relu") rd.fail("expected 'activation relu'");
  }
  {
    std::istringstream ss(rd.next("spectral"));
    int flag = 0;
    if (!(ss >> tag >> flag >> value) || tag != "spectral" || (value != "all" && value != "hidden")) {
      rd.fail("expected 'spectral <0|1> <all|hidden>'");
    }
    p.spectral_norm = flag != 0;
    p.spectral_scope = value == "all" ? SpectralScope::kAll : SpectralScope::kHidden;
  }
  std::vector<int> sizes;
  {
    std::istringstream ss(rd.next("sizes"));
    if (!(ss >> tag) || tag != "sizes") rd.fail("expected 'sizes ...'");
    int s;
    while (ss >> s) {
      if (s < 1) rd.fail("layer sizes must be positive");
      sizes.push_back(s);
    }
    if (sizes.size() < 2) rd.fail("need at least two sizes");
  }
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    if (rd.next("layer tag") != "layer " + std::to_string(i)) rd.fail("expected 'layer " + std::to_string(i) + "'");
    Layer l;
    int in = sizes[i], out = sizes[i + 1];
    l.weight.resize(out, in);
    for (int r = 0; r < out; ++r) {
      auto row = rd.numbers("weight row", in);
      for (int c = 0; c < in; ++c) l.weight(r, c) = row[c];
    }
    auto b = rd.numbers("bias", out);
    l.bias = Eigen::Map<Vector>(b.data(), out);
    auto u = rd.numbers("u", out);
    l.u = Eigen::Map<Vector>(u.data(), out);
    auto v = rd.numbers("v", in);
    l.v = Eigen::Map<Vector>(v.data(), in);
    p.layers.push_back(std::move(l));
  }
  return p;
}

}  // namespace irvs
