#pragma once

// Contrastive training of the joint energy E(s, a, G): InfoNCE against
// Langevin counter-examples plus a gradient-norm penalty on the final chain
// points.

#include <ostream>
#include <vector>

#include "irvs/dataset.hpp"
#include "irvs/langevin.hpp"

namespace irvs {

struct TrainConfig {
  int batch_size = 512;
  int n_neg = 8;
  double lr = 1e-3;
  double lr_decay = 0.99;
  int lr_decay_steps = 100;
  int steps = 0;
  double grad_margin = 1.0;
  double penalty_weight = 1.0;
  double boundary_buffer = 0.05;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;

  void validate() const {
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (n_neg < 1) throw ArgumentError("n_neg must be >= 1");
    if (!(lr > 0.0)) throw ArgumentError("learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ArgumentError("lr_decay must be in (0, 1]");
    if (lr_decay_steps < 1) throw ArgumentError("lr_decay_steps must be >= 1");
    if (steps < 0) throw ArgumentError("steps must be >= 0");
    if (!(grad_margin > 0.0)) throw ArgumentError("gradient margin must be positive");
    if (boundary_buffer < 0.0) throw ArgumentError("boundary buffer must be >= 0");
  }
};

inline double learning_rate_at(const TrainConfig& cfg, int step) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(step / cfg.lr_decay_steps));
}

struct LossGrad {
  double value = 0.0;
  MlpGrad grads;
};

struct InfoNceTerms {
  double loss = 0.0;   // mean over rows
  Matrix d_energy;     // d loss / d energy, same shape as the input
};

// energies: one row per example, column 0 the positive, the rest negatives.
// loss_i = E_pos + log sum_j exp(-E_j), evaluated with the min energy
// factored out.
inline InfoNceTerms infonce_terms(const Matrix& energies) {
  if (energies.rows() == 0) throw ArgumentError("infonce: empty batch");
  if (energies.cols() < 2) throw ArgumentError("infonce: each example needs at least one negative");
  const auto b = energies.rows();
  InfoNceTerms t;
  t.d_energy.resize(b, energies.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double emin = energies.row(i).minCoeff();
    Eigen::RowVectorXd w = (-(energies.row(i).array() - emin)).exp().matrix();
    const double z = w.sum();
    total += energies(i, 0) - emin + std::log(z);
    t.d_energy.row(i) = -w / z;
    t.d_energy(i, 0) += 1.0;
  }
  t.loss = total / static_cast<double>(b);
  t.d_energy /= static_cast<double>(b);
  return t;
}

// positives: B x (ad+1); negatives: (B * n_neg) x (ad+1), grouped so that rows
// [i*n_neg, (i+1)*n_neg) belong to example i. Negatives are constants.
inline LossGrad infonce_loss(const EnergyModel& m, const Matrix& states, const Matrix& positives,
                             const Matrix& negatives, int n_neg) {
  const auto b = states.rows();
  if (b == 0) throw ArgumentError("infonce: empty batch");
  if (n_neg < 1) throw ArgumentError("infonce: n_neg must be >= 1");
  if (positives.rows() != b || negatives.rows() != b * n_neg) {
    throw ArgumentError("infonce: each example needs exactly n_neg negatives");
  }
  Matrix neg_states(b * n_neg, states.cols());
  for (Eigen::Index i = 0; i < b; ++i) neg_states.middleRows(i * n_neg, n_neg).rowwise() = states.row(i);
  Matrix inputs(b * (1 + n_neg), m.input_dim());
  inputs.topRows(b) = energy_inputs(states, positives);
  inputs.bottomRows(b * n_neg) = energy_inputs(neg_states, negatives);

  ForwardTape tape;
  Matrix out = forward_batch(m.net, inputs, &tape);
  Matrix e(b, 1 + n_neg);
  for (Eigen::Index i = 0; i < b; ++i) {
    e(i, 0) = out(i, 0);
    for (int j = 0; j < n_neg; ++j) e(i, 1 + j) = out(b + i * n_neg + j, 0);
  }
  auto terms = infonce_terms(e);
  Matrix d_out(inputs.rows(), 1);
  for (Eigen::Index i = 0; i < b; ++i) {
    d_out(i, 0) = terms.d_energy(i, 0);
    for (int j = 0; j < n_neg; ++j) d_out(b + i * n_neg + j, 0) = terms.d_energy(i, 1 + j);
  }
  auto r = backward_batch(m.net, tape, d_out);
  return {terms.loss, std::move(r.grads)};
}

// mean_n max(0, |grad_{a,G} E(x_n)| - margin)^2 over rows [s; a; G].
inline LossGrad gradient_penalty(const EnergyModel& m, const Matrix& inputs, double margin) {
  if (!(margin > 0.0)) throw ArgumentError("gradient margin must be positive");
  LossGrad out;
  out.grads = MlpGrad::zeros_like(m.net);
  const auto n = inputs.rows();
  if (n == 0) return out;
  ForwardTape tape;
  forward_batch(m.net, inputs, &tape);
  auto bw = backward_batch(m.net, tape, Matrix::Ones(n, 1), false, true);
  const int pd = m.point_dim();
  const int offset = m.state_dim;
  Matrix directions = Matrix::Zero(n, inputs.cols());
  bool any = false;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto g = bw.d_input.row(i).segment(offset, pd);
    const double norm = g.norm();
    const double excess = norm - margin;
    if (excess > 0.0) {
      total += excess * excess;
      directions.row(i).segment(offset, pd) = (2.0 * excess / (norm * n)) * g;
      any = true;
    }
  }
  out.value = total / static_cast<double>(n);
  if (any) out.grads = input_grad_param_grad(m.net, tape, bw.d_pre, directions);
  return out;
}

// One SGLD chain per (state row, negative) minimizing E(s, ., .). Chains are
// clipped to the action/return box widened by `buffer`.
inline Matrix sample_negatives(const EnergyModel& m, const Matrix& states, int n_neg, const LangevinSchedule& sched,
                               double buffer, Rng& rng) {
  if (n_neg < 1) throw ArgumentError("n_neg must be >= 1");
  const auto b = states.rows();
  Matrix chain_states(b * n_neg, states.cols());
  for (Eigen::Index i = 0; i < b; ++i) chain_states.middleRows(i * n_neg, n_neg).rowwise() = states.row(i);
  std::vector<Rng> streams;
  streams.reserve(b * n_neg);
  const std::uint64_t base = rng();
  for (Eigen::Index c = 0; c < b * n_neg; ++c) streams.push_back(child_rng(base, c));
  auto fn = [&](const Matrix& pts, Vector& values, Matrix& grads) {
    energy_point_grads(m, chain_states, pts, values, grads);
  };
  return sgld_chains(fn, SamplerBounds::for_model(m, buffer), sched, std::span<Rng>(streams));
}

struct StepMetrics {
  int step = 0;
  double loss = 0.0;
  double penalty = 0.0;
  double lr = 0.0;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<StepMetrics>& trace) {
  auto prec = os.precision(17);
  os << "step,loss,penalty,lr\n";
  for (const auto& m : trace) os << m.step << ',' << m.loss << ',' << m.penalty << ',' << m.lr << '\n';
  os.precision(prec);
}

struct EbmTrainResult {
  EnergyModel model;
  std::vector<StepMetrics> trace;
};

inline EbmTrainResult train(EnergyModel model, const NormalizedData& data, const TrainConfig& cfg,
                            const LangevinSchedule& sched) {
  cfg.validate();
  model.validate();
  if (data.size() == 0) throw ArgumentError("train: empty dataset");
  if (data.state_dim() != model.state_dim || data.action_dim() != model.action_dim) {
    throw ShapeError("train: dataset dims do not match the energy model");
  }
  EbmTrainResult res;
  res.trace.reserve(cfg.steps);
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.size() - 1);
  const int b = cfg.batch_size;
  Matrix states(b, model.state_dim);
  Matrix positives(b, model.point_dim());
  for (int step = 0; step < cfg.steps; ++step) {
    const double lr = learning_rate_at(cfg, step);
    for (int i = 0; i < b; ++i) {
      const auto k = pick(rng);
      states.row(i) = data.states.row(k);
      positives.row(i).head(model.action_dim) = data.actions.row(k);
      positives(i, model.action_dim) = data.returns[k];
    }
    Matrix negatives = sample_negatives(model, states, cfg.n_neg, sched, cfg.boundary_buffer, rng);
    auto nce = infonce_loss(model, states, positives, negatives, cfg.n_neg);

    Matrix neg_states(negatives.rows(), model.state_dim);
    for (int i = 0; i < b; ++i) neg_states.middleRows(i * cfg.n_neg, cfg.n_neg).rowwise() = states.row(i);
    auto pen = gradient_penalty(model, energy_inputs(neg_states, negatives), cfg.grad_margin);

    nce.grads.add_scaled(pen.grads, cfg.penalty_weight);
    opt.step(model.net, nce.grads, lr);
    if (model.net.spectral_norm) refresh_spectral(model.net, 1);
    res.trace.push_back({step, nce.value, pen.value, lr});
  }
  res.model = std::move(model);
  return res;
}

}  // namespace irvs
