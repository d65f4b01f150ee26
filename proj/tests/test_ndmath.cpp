#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <sstream>

#include "irvs/ndmath.hpp"
#include "testing.hpp"

using namespace irvs;
using irvs::testing::naive_forward;
using irvs::testing::random_mlp;
using irvs::testing::random_vector;

namespace {

MlpParams linear_layer(std::initializer_list<double> w, double b) {
  MlpParams p;
  Layer l;
  l.weight.resize(1, static_cast<Eigen::Index>(w.size()));
  int i = 0;
  for (double x : w) l.weight(0, i++) = x;
  l.bias = Vector::Constant(1, b);
  l.u = Vector::Ones(1);
  l.v = Vector::Zero(l.weight.cols());
  p.layers.push_back(l);
  return p;
}

MlpParams zeroed(MlpParams p) {
  for (auto& l : p.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return p;
}

}  // namespace

TEST(MlpForward, ZeroNetworkGivesZero) {
  Rng rng(1);
  auto p = zeroed(make_mlp({4, 8, 8, 1}, rng));
  Rng in(2);
  for (int k = 0; k < 5; ++k) EXPECT_EQ(mlp_forward(p, random_vector(4, in, -5, 5)), 0.0);
}

TEST(MlpForward, SingleLinearLayerIsDotProduct) {
  auto p = linear_layer({2.0, 3.0}, 0.0);
  EXPECT_DOUBLE_EQ(mlp_forward(p, Vector::Ones(2)), 5.0);
}

TEST(MlpForward, MatchesLoopReference) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    for (bool spectral : {false, true}) {
      auto p = random_mlp(seed, spectral);
      Rng rng(seed + 100);
      Vector x = random_vector(p.input_dim(), rng, -2, 2);
      std::vector<double> xs(x.data(), x.data() + x.size());
      EXPECT_NEAR(mlp_forward(p, x), naive_forward(p, xs)[0], 1e-12) << "seed " << seed;
    }
  }
}

TEST(MlpForward, ZeroInputGivesBiasComposition) {
  auto p = random_mlp(7);
  Vector h = p.layers[0].bias;
  for (std::size_t k = 1; k < p.layers.size(); ++k) h = p.layers[k].weight * h.cwiseMax(0.0) + p.layers[k].bias;
  EXPECT_NEAR(mlp_forward(p, Vector::Zero(p.input_dim())), h[0], 1e-12);
}

TEST(MlpForward, DimensionMismatchThrows) {
  auto p = random_mlp(3);
  EXPECT_THROW(mlp_forward(p, Vector::Zero(p.input_dim() + 1)), ShapeError);
  EXPECT_THROW(mlp_backward(p, Vector::Zero(p.input_dim() + 1)), ShapeError);
}

TEST(MlpForward, BrokenChainThrows) {
  Rng rng(0);
  auto p = make_mlp({3, 4, 1}, rng);
  p.layers[1].weight = Matrix::Zero(1, 5);
  EXPECT_THROW(mlp_forward(p, Vector::Zero(3)), ShapeError);
}

TEST(MlpBackward, ZeroNetworkOnlyFinalBiasPath) {
  Rng rng(4);
  auto p = zeroed(make_mlp({3, 5, 5, 1}, rng));
  auto g = mlp_backward(p, Vector::Constant(3, 0.7));
  EXPECT_EQ(g.d_input.norm(), 0.0);
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    EXPECT_EQ(g.d_params.d_weight[k].norm(), 0.0);
    if (k + 1 < p.layers.size()) EXPECT_EQ(g.d_params.d_bias[k].norm(), 0.0);
  }
  EXPECT_EQ(g.d_params.d_bias.back()[0], 1.0);
}

TEST(MlpBackward, LinearLayerInputGradientIsWeight) {
  auto p = linear_layer({0.25, -1.5, 3.0}, 0.4);
  auto g = mlp_backward(p, Vector::Constant(3, 2.0));
  EXPECT_EQ(g.d_input, p.layers[0].weight.row(0).transpose());
  EXPECT_EQ(g.d_params.d_weight[0], Matrix::Constant(1, 3, 2.0));
}

TEST(MlpBackward, MatchesFiniteDifferences) {
  int nets = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    for (bool spectral : {false, true}) {
      auto p = random_mlp(1000 + seed, spectral);
      Rng rng(seed);
      Vector x = random_vector(p.input_dim(), rng);
      auto g = mlp_backward(p, x);
      auto rep = irvs::testing::fd_check_params(p, g.d_params, [&](const MlpParams& q) { return mlp_forward(q, x); });
      EXPECT_EQ(rep.failed, 0) << "seed " << seed << " spectral " << spectral << ": " << rep.first_failure;
      for (int i = 0; i < x.size(); ++i) {
        Vector xp = x, xm = x;
        xp[i] += 1e-5;
        xm[i] -= 1e-5;
        double num = (mlp_forward(p, xp) - mlp_forward(p, xm)) / 2e-5;
        EXPECT_TRUE(irvs::testing::close_rel(g.d_input[i], num)) << "input " << i << " seed " << seed;
      }
      ++nets;
    }
  }
  EXPECT_GE(nets, 20);
}

TEST(MlpBackward, ShapesMirrorParams) {
  auto p = random_mlp(11);
  auto g = mlp_backward(p, Vector::Zero(p.input_dim()));
  ASSERT_EQ(g.d_params.d_weight.size(), p.layers.size());
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    EXPECT_EQ(g.d_params.d_weight[k].rows(), p.layers[k].weight.rows());
    EXPECT_EQ(g.d_params.d_weight[k].cols(), p.layers[k].weight.cols());
    EXPECT_EQ(g.d_params.d_bias[k].size(), p.layers[k].bias.size());
  }
  EXPECT_EQ(g.d_input.size(), p.input_dim());
}

TEST(BackwardBatch, SumsPerRowGradients) {
  auto p = random_mlp(21);
  Rng rng(5);
  Matrix x(6, p.input_dim());
  for (int r = 0; r < 6; ++r) x.row(r) = random_vector(p.input_dim(), rng).transpose();
  ForwardTape tape;
  forward_batch(p, x, &tape);
  auto batch = backward_batch(p, tape, Matrix::Ones(6, 1));
  MlpGrad sum = MlpGrad::zeros_like(p);
  for (int r = 0; r < 6; ++r) {
    auto g = mlp_backward(p, x.row(r).transpose());
    sum.add_scaled(g.d_params, 1.0);
    EXPECT_LT((batch.d_input.row(r).transpose() - g.d_input).norm(), 1e-12);
  }
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    EXPECT_LT((batch.grads.d_weight[k] - sum.d_weight[k]).norm(), 1e-10);
    EXPECT_LT((batch.grads.d_bias[k] - sum.d_bias[k]).norm(), 1e-10);
  }
}

TEST(SpectralNormalize, IdentityUnchanged) {
  auto r = spectral_normalize(Matrix::Identity(2, 2), Vector::Ones(2), 5);
  EXPECT_NEAR(r.sigma, 1.0, 1e-12);
  EXPECT_LT((r.scaled - Matrix::Identity(2, 2)).norm(), 1e-12);
  EXPECT_NEAR(r.u.norm(), 1.0, 1e-12);
}

TEST(SpectralNormalize, DiagonalMatchesExactSvd) {
  Matrix w = Matrix::Zero(2, 2);
  w(0, 0) = 2.0;
  w(1, 1) = 1.0;
  auto r = spectral_normalize(w, Vector::Ones(2), 60);
  EXPECT_NEAR(r.sigma, 2.0, 1e-9);
  EXPECT_NEAR(r.scaled(0, 0), 1.0, 1e-9);
  EXPECT_NEAR(r.scaled(1, 1), 0.5, 1e-9);
  EXPECT_NEAR(r.scaled(0, 1), 0.0, 1e-12);
}

TEST(SpectralNormalize, RandomMatchesFullSvd) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Matrix w(8, 8);
    for (int i = 0; i < 64; ++i) w.data()[i] = uniform(rng, -1, 1);
    const double top = Eigen::JacobiSVD<Matrix>(w).singularValues()[0];
    auto r = spectral_normalize(w, random_vector(8, rng), 50);
    EXPECT_NEAR(r.sigma, top, 1e-3) << "seed " << seed;
    EXPECT_LE(Eigen::JacobiSVD<Matrix>(r.scaled).singularValues()[0], 1.0 + 1e-3);
    EXPECT_NEAR(r.u.norm(), 1.0, 1e-12);
  }
}

TEST(SpectralNormalize, ZeroMatrixFloorsSigma) {
  auto r = spectral_normalize(Matrix::Zero(3, 4), Vector::Ones(3), 3);
  EXPECT_EQ(r.sigma, kSigmaFloor);
  EXPECT_EQ(r.scaled, Matrix::Zero(3, 4));
  EXPECT_TRUE(r.scaled.allFinite());
}

TEST(SpectralNormalize, RejectsBadArguments) {
  EXPECT_THROW(spectral_normalize(Matrix::Identity(2, 2), Vector::Ones(2), 0), ArgumentError);
  EXPECT_THROW(spectral_normalize(Matrix::Identity(2, 2), Vector::Zero(2), 3), ArgumentError);
  EXPECT_THROW(spectral_normalize(Matrix::Identity(2, 2), Vector::Ones(3), 3), ShapeError);
}

TEST(SpectralNorm, RefreshTracksTopSingularValue) {
  Rng rng(9);
  auto p = make_mlp({6, 16, 1}, rng, true);
  refresh_spectral(p, 100);
  const double top = Eigen::JacobiSVD<Matrix>(p.layers[0].weight).singularValues()[0];
  EXPECT_NEAR(layer_sigma(p.layers[0]), top, 1e-6);
  EXPECT_LE(Eigen::JacobiSVD<Matrix>(effective_weight(p, 0)).singularValues()[0], 1.0 + 1e-3);
}

TEST(SpectralNorm, HiddenScopeSkipsOutputLayer) {
  Rng rng(3);
  auto p = make_mlp({3, 8, 8, 1}, rng, true, SpectralScope::kHidden);
  EXPECT_TRUE(p.normalizes(0));
  EXPECT_TRUE(p.normalizes(1));
  EXPECT_FALSE(p.normalizes(2));
  EXPECT_EQ(effective_weight(p, 2), p.layers[2].weight);
}

TEST(MakeMlp, FanInUniformBounds) {
  Rng rng(0);
  auto p = make_mlp({16, 32, 4}, rng);
  EXPECT_LE(p.layers[0].weight.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 16));
  EXPECT_LE(p.layers[1].weight.cwiseAbs().maxCoeff(), std::sqrt(1.0 / 32));
  EXPECT_EQ(p.sizes(), (std::vector<int>{16, 32, 4}));
  EXPECT_EQ(p.num_params(), 16u * 32 + 32 + 32 * 4 + 4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool spectral : {false, true}) {
    auto p = random_mlp(31, spectral);
    std::stringstream ss;
    write_checkpoint(ss, p, "energy");
    std::string role;
    auto q = read_checkpoint(ss, &role);
    EXPECT_EQ(role, "energy");
    EXPECT_EQ(q.spectral_norm, spectral);
    ASSERT_EQ(q.layers.size(), p.layers.size());
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
      EXPECT_EQ(q.layers[k].weight, p.layers[k].weight);
      EXPECT_EQ(q.layers[k].bias, p.layers[k].bias);
      EXPECT_EQ(q.layers[k].u, p.layers[k].u);
      EXPECT_EQ(q.layers[k].v, p.layers[k].v);
    }
  }
}

TEST(Checkpoint, MalformedInputNamesLine) {
  auto p = random_mlp(2);
  std::stringstream ss;
  write_checkpoint(ss, p);
  std::string text = ss.str();
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), FormatError);
  std::stringstream bad("# irvs-mlp v1\nrole mlp\nactivation tanh\n");
  try {
    read_checkpoint(bad);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Optimizer, SgdStepMovesAgainstGradient) {
  auto p = linear_layer({1.0, 1.0}, 0.0);
  auto g = mlp_backward(p, Vector::Ones(2));
  Optimizer opt(OptimizerKind::kSgd);
  opt.step(p, g.d_params, 0.1);
  EXPECT_NEAR(p.layers[0].weight(0, 0), 0.9, 1e-15);
  EXPECT_NEAR(p.layers[0].bias[0], -0.1, 1e-15);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::kAdam);
  EXPECT_THROW(parse_optimizer("rmsprop"), ArgumentError);
}

TEST(Optimizer, AdamFirstStepIsLrTimesSign) {
  auto p = linear_layer({1.0, -1.0}, 0.0);
  MlpGrad g = MlpGrad::zeros_like(p);
  g.d_weight[0](0, 0) = 3.0;
  g.d_weight[0](0, 1) = -0.01;
  Optimizer opt(OptimizerKind::kAdam);
  opt.step(p, g, 0.01);
  EXPECT_NEAR(p.layers[0].weight(0, 0), 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.layers[0].weight(0, 1), -1.0 + 0.01, 1e-6);
  EXPECT_EQ(p.layers[0].bias[0], 0.0);
}
