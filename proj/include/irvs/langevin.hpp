#pragma once

// Stochastic gradient Langevin dynamics over (a, G) with polynomial step-size
// decay, and tilted-energy inference argmin_{a,G} E(s, a, G) - eta_inv * G.

#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "irvs/energy_model.hpp"

namespace irvs {

struct LangevinSchedule {
  int iterations = 100;
  double lr_init = 0.5;
  double lr_final = 1e-5;
  double decay_power = 2.0;
  double noise_scale = 0.5;
  double clip_bound = 0.5;
  double second_stage_lr = 1e-5;
  int second_stage_iters = 0;

  void validate() const {
    if (iterations < 0 || second_stage_iters < 0) throw ArgumentError("langevin iteration counts must be >= 0");
    if (!(lr_final > 0.0) || !(lr_init >= lr_final)) throw ArgumentError("langevin needs lr_init >= lr_final > 0");
    if (!(clip_bound > 0.0)) throw ArgumentError("langevin clip bound must be positive");
    if (!(noise_scale >= 0.0)) throw ArgumentError("langevin noise scale must be non-negative");
  }
};

// How infer() picks among terminal chain points.
enum class ChainSelect {
  kArgmin,   // lowest tilted objective; ties go to the larger G
  kSoftmax,  // sample a chain with probability proportional to exp(-objective)
};

struct TiltConfig {
  double eta_inv = 0.0;
  ChainSelect select = ChainSelect::kArgmin;

  void validate() const {
    if (!std::isfinite(eta_inv) || eta_inv < 0.0) throw ArgumentError("eta_inv must be finite and >= 0");
  }
};

inline double schedule_lr(const LangevinSchedule& s, int t) {
  if (t < 0 || t > s.iterations) {
    throw ArgumentError("schedule step " + std::to_string(t) + " outside [0, " + std::to_string(s.iterations) + "]");
  }
  if (s.iterations == 0) return s.lr_init;
  double frac = 1.0 - static_cast<double>(t) / s.iterations;
  return (s.lr_init - s.lr_final) * std::pow(frac, s.decay_power) + s.lr_final;
}

// Box over the sampled coordinates (a..., G). Chains start uniformly in the
// init box and are clipped to the clip box after every step.
struct SamplerBounds {
  Vector lo, hi;
  Vector init_lo, init_hi;

  int dim() const { return static_cast<int>(lo.size()); }

  // Actions start in their data range; G starts in [-1, 1]. Both clip to the
  // range widened by `buffer`.
  static SamplerBounds joint(const Vector& action_lo, const Vector& action_hi, double return_lo, double return_hi,
                             double buffer = 0.0) {
    const auto ad = action_lo.size();
    SamplerBounds b;
    b.init_lo.resize(ad + 1);
    b.init_hi.resize(ad + 1);
    b.init_lo << action_lo, return_lo;
    b.init_hi << action_hi, return_hi;
    b.lo = b.init_lo.array() - buffer;
    b.hi = b.init_hi.array() + buffer;
    return b;
  }

  static SamplerBounds for_model(const EnergyModel& m, double buffer = 0.0) {
    return joint(m.action_lo, m.action_hi, m.return_lo, m.return_hi, buffer);
  }

  void validate() const {
    if (hi.size() != lo.size() || init_lo.size() != lo.size() || init_hi.size() != lo.size()) {
      throw ShapeError("sampler bounds have inconsistent sizes");
    }
    for (int i = 0; i < dim(); ++i) {
      if (!(lo[i] < hi[i]) || !(init_lo[i] <= init_hi[i])) throw ArgumentError("sampler bounds must have lo < hi");
    }
  }
};

struct TraceRecord {
  int chain = 0;
  int iter = 0;
  double objective = 0.0;
  Vector coords;
};
using ChainTrace = std::vector<TraceRecord>;

inline void write_trace_csv(std::ostream& os, const ChainTrace& trace) {
  auto prec = os.precision(17);
  os << "chain,iter,objective,coords\n";
  for (const auto& r : trace) {
    os << r.chain << ',' << r.iter << ',' << r.objective << ',';
    for (Eigen::Index i = 0; i < r.coords.size(); ++i) os << (i ? " " : "") << r.coords[i];
    os << '\n';
  }
  os.precision(prec);
}

// Runs one independent chain per stream. `objective(points, values, grads)`
// fills values (N) and grads (N x dim) for the N x dim matrix of points.
// Chain n consumes only streams[n], so results do not depend on batching.
template <class BatchObjective>
Matrix sgld_chains(BatchObjective&& objective, const SamplerBounds& bounds, const LangevinSchedule& sched,
                   std::span<Rng> streams, ChainTrace* trace = nullptr) {
  sched.validate();
  bounds.validate();
  const int n = static_cast<int>(streams.size());
  const int d = bounds.dim();
  Matrix x(n, d);
  for (int c = 0; c < n; ++c) {
    for (int j = 0; j < d; ++j) {
      x(c, j) = bounds.init_lo[j] == bounds.init_hi[j] ? bounds.init_lo[j]
                                                         : uniform(streams[c], bounds.init_lo[j], bounds.init_hi[j]);
    }
  }
  Vector values(n);
  Matrix grads(n, d);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto run_stage = [&](int iters, int iter_offset, auto lr_at, bool noisy) {
    for (int t = 0; t < iters; ++t) {
      objective(x, values, grads);
      if (!grads.allFinite()) throw SamplerError("non-finite energy gradient in Langevin chain", iter_offset + t);
      if (trace) {
        for (int c = 0; c < n; ++c) trace->push_back({c, iter_offset + t, values[c], x.row(c).transpose()});
      }
      const double lr = lr_at(t);
      for (int c = 0; c < n; ++c) {
        for (int j = 0; j < d; ++j) {
          double eps = noisy && sched.noise_scale > 0.0 ? sched.noise_scale * normal(streams[c]) : 0.0;
          double u = std::clamp(0.5 * grads(c, j) + eps, -sched.clip_bound, sched.clip_bound);
          x(c, j) = std::clamp(x(c, j) - lr * u, bounds.lo[j], bounds.hi[j]);
        }
      }
    }
  };
  run_stage(sched.iterations, 0, [&](int t) { return schedule_lr(sched, t); }, true);
  run_stage(sched.second_stage_iters, sched.iterations, [&](int) { return sched.second_stage_lr; }, false);
  if (trace) {
    objective(x, values, grads);
    const int last = sched.iterations + sched.second_stage_iters;
    for (int c = 0; c < n; ++c) trace->push_back({c, last, values[c], x.row(c).transpose()});
  }
  return x;
}

struct ChainResult {
  Vector action;
  double ret = 0.0;
};

// Single chain over a pointwise objective `f(point, grad) -> value`.
template <class PointObjective>
ChainResult sgld_chain(PointObjective&& f, const SamplerBounds& bounds, const LangevinSchedule& sched, Rng& rng,
                       ChainTrace* trace = nullptr) {
  auto batch = [&](const Matrix& pts, Vector& values, Matrix& grads) {
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      Vector g(pts.cols());
      values[r] = f(Vector(pts.row(r).transpose()), g);
      grads.row(r) = g.transpose();
    }
  };
  std::span<Rng> one(&rng, 1);
  Matrix x = sgld_chains(batch, bounds, sched, one, trace);
  const auto d = x.cols();
  return {x.row(0).head(d - 1).transpose(), x(0, d - 1)};
}

// ---------------------------------------------------------------------------
// Tilted inference

struct InferResult {
  Vector action;
  double ret = 0.0;
  double objective = 0.0;
  int chain = -1;
};

// Energy minus eta_inv * G; the last point coordinate is G.
inline void tilt_objective(double eta_inv, const Matrix& points, Vector& values, Matrix& grads) {
  if (eta_inv == 0.0) return;
  values -= eta_inv * points.col(points.cols() - 1);
  grads.col(grads.cols() - 1).array() -= eta_inv;
}

// `energy_fn(points, values, grads)` gives the raw energy and its gradient
// w.r.t. the points. Returns the terminal point with the lowest tilted
// objective; ties go to the larger G.
template <class BatchEnergy>
InferResult tilted_argmin(BatchEnergy&& energy_fn, const SamplerBounds& bounds, const TiltConfig& tilt,
                          const LangevinSchedule& sched, int n_chains, Rng& rng, ChainTrace* trace = nullptr) {
  tilt.validate();
  if (n_chains < 1) throw ArgumentError("inference needs at least one chain");
  auto objective = [&](const Matrix& pts, Vector& values, Matrix& grads) {
    energy_fn(pts, values, grads);
    tilt_objective(tilt.eta_inv, pts, values, grads);
  };
  std::vector<Rng> streams;
  streams.reserve(n_chains);
  const std::uint64_t base = rng();
  for (int c = 0; c < n_chains; ++c) streams.push_back(child_rng(base, c));
  Matrix x = sgld_chains(objective, bounds, sched, std::span<Rng>(streams), trace);
  Vector values(x.rows());
  Matrix grads(x.rows(), x.cols());
  objective(x, values, grads);
  const auto g_col = x.cols() - 1;
  int best = 0;
  for (int c = 1; c < n_chains; ++c) {
    if (values[c] < values[best] || (values[c] == values[best] && x(c, g_col) > x(best, g_col))) best = c;
  }
  if (tilt.select == ChainSelect::kSoftmax) {
    Vector w = (-(values.array() - values[best])).exp().matrix();
    double r = uniform(rng, 0.0, w.sum());
    int pick = 0;
    for (; pick + 1 < n_chains; ++pick) {
      r -= w[pick];
      if (r < 0.0) break;
    }
    best = pick;
  }
  return {x.row(best).head(g_col).transpose(), x(best, g_col), values[best], best};
}

// Energy values and (a, G)-gradients for points at a fixed state row (or one
// state row per point).
inline void energy_point_grads(const EnergyModel& m, const Matrix& states, const Matrix& points, Vector& values,
                               Matrix& grads) {
  Matrix inputs = energy_inputs(states, points);
  Matrix g = input_gradients(m.net, inputs, &values);
  grads = g.rightCols(m.point_dim());
}

// Objective evaluated by infer(): E(s, a, G) - eta_inv * G.
inline double tilted_energy(const EnergyModel& m, const Vector& s, const Vector& a, double G, const TiltConfig& tilt) {
  return energy(m, s, a, G) - tilt.eta_inv * G;
}

inline InferResult infer(const EnergyModel& m, const Vector& s, const TiltConfig& tilt, const LangevinSchedule& sched,
                         int n_chains, Rng& rng, ChainTrace* trace = nullptr) {
  if (s.size() != m.state_dim) throw ShapeError("state dim mismatch in infer");
  Matrix state = s.transpose();
  auto fn = [&](const Matrix& pts, Vector& values, Matrix& grads) { energy_point_grads(m, state, pts, values, grads); };
  return tilted_argmin(fn, SamplerBounds::for_model(m), tilt, sched, n_chains, rng, trace);
}

}  // namespace irvs
