#include <gtest/gtest.h>

#include <sstream>

#include "irvs/langevin.hpp"
#include "testing.hpp"

using namespace irvs;

namespace {

SamplerBounds unit_box(int dim) {
  return SamplerBounds::joint(Vector::Constant(dim - 1, -1.0), Vector::Constant(dim - 1, 1.0), -1.0, 1.0);
}

// E(a, G) = (a - 0.3)^2 + (G - 0.1)^2
void quadratic(const Matrix& x, Vector& values, Matrix& grads) {
  values.resize(x.rows());
  grads.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double da = x(r, 0) - 0.3, dg = x(r, 1) - 0.1;
    values[r] = da * da + dg * dg;
    grads(r, 0) = 2 * da;
    grads(r, 1) = 2 * dg;
  }
}

// E(a, G) = (a - G)^2 + (G - 0.2)^2
void coupled(const Matrix& x, Vector& values, Matrix& grads) {
  values.resize(x.rows());
  grads.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double a = x(r, 0), g = x(r, 1);
    values[r] = (a - g) * (a - g) + (g - 0.2) * (g - 0.2);
    grads(r, 0) = 2 * (a - g);
    grads(r, 1) = -2 * (a - g) + 2 * (g - 0.2);
  }
}

std::vector<Rng> streams(int n, std::uint64_t seed) {
  std::vector<Rng> s;
  for (int i = 0; i < n; ++i) s.push_back(child_rng(seed, i));
  return s;
}

}  // namespace

TEST(ScheduleLr, Endpoints) {
  LangevinSchedule s;
  EXPECT_DOUBLE_EQ(schedule_lr(s, 0), 0.5);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 100), 1e-5);
  EXPECT_NEAR(schedule_lr(s, 50), 0.1250075, 1e-12);
}

TEST(ScheduleLr, NonIncreasing) {
  LangevinSchedule s;
  for (int t = 1; t <= s.iterations; ++t) EXPECT_LE(schedule_lr(s, t), schedule_lr(s, t - 1));
}

TEST(ScheduleLr, OutOfRangeThrows) {
  LangevinSchedule s;
  EXPECT_THROW(schedule_lr(s, -1), ArgumentError);
  EXPECT_THROW(schedule_lr(s, 101), ArgumentError);
}

TEST(LangevinSchedule, ValidateRejectsBadValues) {
  LangevinSchedule s;
  s.iterations = -1;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = {};
  s.lr_final = 0.0;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = {};
  s.lr_init = 1e-6;
  EXPECT_THROW(s.validate(), ArgumentError);
  s = {};
  s.clip_bound = 0.0;
  EXPECT_THROW(s.validate(), ArgumentError);
  EXPECT_THROW(TiltConfig{-1.0}.validate(), ArgumentError);
}

TEST(SgldChains, ZeroGradientNoNoiseReturnsInit) {
  LangevinSchedule s;
  s.noise_scale = 0.0;
  auto b = unit_box(3);
  auto st = streams(10, 4);
  auto copy = st;
  auto zero = [](const Matrix& x, Vector& v, Matrix& g) {
    v = Vector::Zero(x.rows());
    g = Matrix::Zero(x.rows(), x.cols());
  };
  Matrix x = sgld_chains(zero, b, s, std::span<Rng>(st));
  for (int c = 0; c < 10; ++c)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(x(c, j), uniform(copy[c], -1.0, 1.0));
}

TEST(SgldChains, QuadraticConverges) {
  LangevinSchedule s;
  s.noise_scale = 0.0;
  auto st = streams(100, 17);
  Matrix x = sgld_chains(quadratic, unit_box(2), s, std::span<Rng>(st));
  int near = 0;
  for (int c = 0; c < 100; ++c) near += std::hypot(x(c, 0) - 0.3, x(c, 1) - 0.1) <= 0.05;
  EXPECT_GE(near, 95);
}

TEST(SgldChains, ClipsUpdateToBound) {
  LangevinSchedule s;
  s.iterations = 1;
  s.noise_scale = 0.0;
  SamplerBounds b;
  b.lo = Vector::Constant(2, -10);
  b.hi = Vector::Constant(2, 10);
  b.init_lo = Vector::Zero(2);
  b.init_hi = Vector::Zero(2);
  auto steep = [](const Matrix& x, Vector& v, Matrix& g) {
    v = Vector::Zero(x.rows());
    g = Matrix::Constant(x.rows(), x.cols(), 100.0);
  };
  auto st = streams(1, 0);
  Matrix x = sgld_chains(steep, b, s, std::span<Rng>(st));
  // u = (0.5, 0.5) exactly, step lr(0) = 0.5
  EXPECT_EQ(x(0, 0), -0.25);
  EXPECT_EQ(x(0, 1), -0.25);
}

TEST(SgldChains, StaysInBounds) {
  LangevinSchedule s;
  s.iterations = 30;
  auto b = SamplerBounds::joint(Vector::Constant(2, -0.5), Vector::Constant(2, 0.5), -1.0, 1.0, 0.05);
  auto push_out = [](const Matrix& x, Vector& v, Matrix& g) {
    v = Vector::Zero(x.rows());
    g = -50.0 * x;
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto st = streams(16, seed);
    Matrix x = sgld_chains(push_out, b, s, std::span<Rng>(st));
    for (int c = 0; c < x.rows(); ++c) {
      for (int j = 0; j < 3; ++j) {
        EXPECT_GE(x(c, j), b.lo[j]);
        EXPECT_LE(x(c, j), b.hi[j]);
      }
    }
  }
}

TEST(SgldChains, NanGradientReportsIteration) {
  LangevinSchedule s;
  int calls = 0;
  auto bad = [&](const Matrix& x, Vector& v, Matrix& g) {
    v = Vector::Zero(x.rows());
    g = Matrix::Zero(x.rows(), x.cols());
    if (calls++ == 7) g(0, 0) = std::numeric_limits<double>::quiet_NaN();
  };
  auto st = streams(2, 1);
  try {
    sgld_chains(bad, unit_box(2), s, std::span<Rng>(st));
    FAIL() << "expected SamplerError";
  } catch (const SamplerError& e) {
    EXPECT_EQ(e.iteration, 7);
  }
}

TEST(SgldChains, DeterministicTrajectories) {
  LangevinSchedule s;
  s.iterations = 25;
  ChainTrace t1, t2;
  auto a = streams(4, 9), b = streams(4, 9);
  sgld_chains(quadratic, unit_box(2), s, std::span<Rng>(a), &t1);
  sgld_chains(quadratic, unit_box(2), s, std::span<Rng>(b), &t2);
  ASSERT_EQ(t1.size(), t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) {
    EXPECT_EQ(t1[i].coords, t2[i].coords);
    EXPECT_EQ(t1[i].objective, t2[i].objective);
  }
  EXPECT_EQ(t1.size(), 4u * 26);
}

TEST(SgldChains, ChainDoesNotDependOnBatching) {
  LangevinSchedule s;
  s.iterations = 20;
  auto all = streams(5, 3);
  Matrix x = sgld_chains(quadratic, unit_box(2), s, std::span<Rng>(all));
  for (int c = 0; c < 5; ++c) {
    Rng one = child_rng(3, c);
    Matrix y = sgld_chains(quadratic, unit_box(2), s, std::span<Rng>(&one, 1));
    EXPECT_EQ(y.row(0), x.row(c));
  }
}

TEST(SgldChains, SecondStageRefines) {
  LangevinSchedule s;
  s.iterations = 10;
  s.second_stage_iters = 50;
  s.second_stage_lr = 0.5;
  ChainTrace tr;
  Rng rng(2);
  auto r = sgld_chain(
      [](const Vector& p, Vector& g) {
        g = 2.0 * (p - Vector::Constant(2, 0.2));
        return (p.array() - 0.2).square().sum();
      },
      unit_box(2), s, rng, &tr);
  EXPECT_NEAR(r.action[0], 0.2, 1e-6);
  EXPECT_NEAR(r.ret, 0.2, 1e-6);
  EXPECT_EQ(tr.back().iter, 60);
}

TEST(Trace, CsvHeaderAndRows) {
  ChainTrace t{{0, 0, 1.5, Vector::Constant(2, 0.25)}, {1, 3, -2.0, Vector::Zero(2)}};
  std::ostringstream os;
  write_trace_csv(os, t);
  EXPECT_EQ(os.str(), "chain,iter,objective,coords\n0,0,1.5,0.25 0.25\n1,3,-2,0 0\n");
}

TEST(Infer, ZeroTiltObjectiveIsRawEnergy) {
  Rng rng(5);
  auto m = make_energy_model(3, 1, 16, 2, false, rng);
  Vector s = irvs::testing::random_vector(3, rng);
  Matrix pts(100, 2);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) pts.row(i * 10 + j) << -1.0 + 2.0 * i / 9, -1.0 + 2.0 * j / 9;
  Vector e;
  Matrix g;
  energy_point_grads(m, s.transpose(), pts, e, g);
  Vector tilted = e;
  Matrix tg = g;
  tilt_objective(0.0, pts, tilted, tg);
  EXPECT_EQ((tilted - e).cwiseAbs().maxCoeff(), 0.0);
  for (int k = 0; k < 100; ++k) {
    EXPECT_EQ(tilted_energy(m, s, pts.row(k).head(1).transpose(), pts(k, 1), TiltConfig{0.0}),
              energy(m, s, pts.row(k).head(1).transpose(), pts(k, 1)));
  }
}

TEST(Infer, CoupledQuadraticMatchesGridSearch) {
  // grid oracle for argmin (a - G)^2 + (G - 0.2)^2 - G over [-1, 1]^2
  double best = 1e300, ba = 0, bg = 0;
  for (int i = 0; i <= 400; ++i) {
    for (int j = 0; j <= 400; ++j) {
      const double a = -1 + i / 200.0, g = -1 + j / 200.0;
      const double v = (a - g) * (a - g) + (g - 0.2) * (g - 0.2) - g;
      if (v < best) {
        best = v;
        ba = a;
        bg = g;
      }
    }
  }
  EXPECT_NEAR(ba, 0.7, 1e-9);
  EXPECT_NEAR(bg, 0.7, 1e-9);
  Rng rng(8);
  auto r = tilted_argmin(coupled, unit_box(2), TiltConfig{1.0}, LangevinSchedule{}, 64, rng);
  EXPECT_NEAR(r.action[0], ba, 0.05);
  EXPECT_NEAR(r.ret, bg, 0.05);
}

TEST(Infer, ArgminInvariantToEnergyShift) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r1(seed), r2(seed);
    auto shifted = [](const Matrix& x, Vector& v, Matrix& g) {
      coupled(x, v, g);
      v.array() += 3.7;
    };
    auto a = tilted_argmin(coupled, unit_box(2), TiltConfig{0.0}, LangevinSchedule{}, 16, r1);
    auto b = tilted_argmin(shifted, unit_box(2), TiltConfig{0.0}, LangevinSchedule{}, 16, r2);
    EXPECT_EQ(a.chain, b.chain);
    EXPECT_EQ(a.action, b.action);
  }
}

TEST(Infer, PicksLowestObjectiveChain) {
  Rng rng(3);
  ChainTrace tr;
  LangevinSchedule s;
  s.iterations = 5;
  auto r = tilted_argmin(quadratic, unit_box(2), TiltConfig{0.5}, s, 8, rng, &tr);
  std::vector<double> last(8);
  for (const auto& t : tr)
    if (t.iter == 5) last[t.chain] = t.objective;
  for (double v : last) EXPECT_LE(r.objective, v);
  EXPECT_EQ(r.objective, last[r.chain]);
}

TEST(Infer, SoftmaxSelectionIsAChainEndpoint) {
  Rng rng(3);
  ChainTrace tr;
  LangevinSchedule s;
  s.iterations = 5;
  auto r = tilted_argmin(quadratic, unit_box(2), TiltConfig{0.0, ChainSelect::kSoftmax}, s, 8, rng, &tr);
  bool found = false;
  for (const auto& t : tr)
    if (t.iter == 5 && t.chain == r.chain) found = t.coords.head(1) == r.action && t.coords[1] == r.ret;
  EXPECT_TRUE(found);
}

TEST(Infer, RejectsBadArguments) {
  Rng rng(0);
  auto m = make_energy_model(2, 1, 8, 1, false, rng);
  EXPECT_THROW(infer(m, Vector::Zero(3), TiltConfig{1.0}, LangevinSchedule{}, 4, rng), ShapeError);
  EXPECT_THROW(infer(m, Vector::Zero(2), TiltConfig{1.0}, LangevinSchedule{}, 0, rng), ArgumentError);
  EXPECT_THROW(infer(m, Vector::Zero(2), TiltConfig{-1.0}, LangevinSchedule{}, 4, rng), ArgumentError);
}

TEST(SamplerBounds, JointWidensClipBoxOnly) {
  auto b = SamplerBounds::joint(Vector::Constant(1, -0.5), Vector::Constant(1, 0.5), -1.0, 1.0, 0.05);
  EXPECT_EQ(b.init_lo[0], -0.5);
  EXPECT_EQ(b.init_hi[1], 1.0);
  EXPECT_DOUBLE_EQ(b.lo[0], -0.55);
  EXPECT_DOUBLE_EQ(b.hi[1], 1.05);
}
