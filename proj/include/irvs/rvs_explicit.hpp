#pragma once

// Explicit baselines: a categorical return model p(G | s) over a fixed atom
// grid, the exponential tilt of that distribution, and a (return-conditioned)
// regression policy. With conditioning off the policy is plain behavior
// cloning.

#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "irvs/dataset.hpp"
#include "irvs/ebm.hpp"

namespace irvs {

struct CategoricalReturnHead {
  Vector atoms;  // evenly spaced over [-1, 1]
  MlpParams net;  // state -> atom logits

  int n_atoms() const { return static_cast<int>(atoms.size()); }
  int state_dim() const { return net.input_dim(); }
};

inline Vector atom_grid(int n_atoms) {
  if (n_atoms < 2) throw ArgumentError("need at least two atoms");
  return Vector::LinSpaced(n_atoms, -1.0, 1.0);
}

inline CategoricalReturnHead make_return_head(int state_dim, int n_atoms, int width, int depth, Rng& rng) {
  CategoricalReturnHead h;
  h.atoms = atom_grid(n_atoms);
  auto sizes = mlp_sizes(state_dim, width, depth, n_atoms);
  h.net = make_mlp(std::span<const int>(sizes), rng);
  return h;
}

// Nearest atom; an exact midpoint goes to the larger atom.
inline int nearest_atom(const Vector& atoms, double g) {
  int best = 0;
  double best_d = std::abs(atoms[0] - g);
  for (int i = 1; i < atoms.size(); ++i) {
    const double d = std::abs(atoms[i] - g);
    if (d <= best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd w = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    p.row(i) = w / w.sum();
  }
  return p;
}

inline Vector return_probabilities(const CategoricalReturnHead& h, const Vector& s) {
  Matrix x = s.transpose();
  return softmax_rows(forward_batch(h.net, x)).row(0).transpose();
}

// q_i = p_i exp(eta_inv G_i) / sum_j p_j exp(eta_inv G_j). The denominator is
// the discrete exp(kappa(eta)).
inline Vector tilt_distribution(const Vector& p, const Vector& atoms, double eta_inv) {
  if (p.size() != atoms.size()) throw ShapeError("tilt: probabilities and atoms differ in size");
  if (!(eta_inv >= 0.0) || !std::isfinite(eta_inv)) throw ArgumentError("tilt: eta_inv must be finite and >= 0");
  if ((p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > 1e-6) {
    throw ArgumentError("tilt: probabilities must be non-negative and sum to 1");
  }
  Vector logw(p.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    logw[i] = p[i] > 0.0 ? std::log(p[i]) + eta_inv * atoms[i] : -std::numeric_limits<double>::infinity();
    mx = std::max(mx, logw[i]);
  }
  Vector q = (logw.array() - mx).exp().matrix();
  return q / q.sum();
}

// argmax_i log p_i + eta_inv * G_i, ties to the larger atom.
inline double select_from_log_probs(const Vector& log_p, const Vector& atoms, double eta_inv) {
  if (log_p.size() != atoms.size()) throw ShapeError("select: size mismatch");
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < atoms.size(); ++i) {
    const double score = log_p[i] + eta_inv * atoms[i];
    if (best < 0 || score > best_score || (score == best_score && atoms[i] > atoms[best])) {
      best = static_cast<int>(i);
      best_score = score;
    }
  }
  return atoms[best];
}

inline double select_from_probs(const Vector& p, const Vector& atoms, double eta_inv) {
  Vector log_p(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i)
    log_p[i] = p[i] > 0.0 ? std::log(p[i]) : -std::numeric_limits<double>::infinity();
  return select_from_log_probs(log_p, atoms, eta_inv);
}

inline double select_target_return(const CategoricalReturnHead& h, const Vector& s, double eta_inv) {
  if (s.size() != h.state_dim()) throw ShapeError("return head state dim mismatch");
  Matrix x = s.transpose();
  Matrix logits = forward_batch(h.net, x);
  // Log-softmax normalizer is shared by all atoms, so logits rank the same.
  return select_from_log_probs(logits.row(0).transpose(), h.atoms, eta_inv);
}

// Cross-entropy against the one-hot nearest atom of each transition's G.
inline std::vector<double> train_return_head(CategoricalReturnHead& h, const NormalizedData& data,
                                             const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ArgumentError("train_return_head: empty dataset");
  if (data.state_dim() != h.state_dim()) throw ShapeError("train_return_head: state dim mismatch");
  std::vector<int> labels(data.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) labels[i] = nearest_atom(h.atoms, data.returns[i]);
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.size() - 1);
  const int b = cfg.batch_size;
  Matrix x(b, h.state_dim());
  std::vector<int> y(b);
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      const auto k = pick(rng);
      x.row(i) = data.states.row(k);
      y[i] = labels[k];
    }
    ForwardTape tape;
    Matrix p = softmax_rows(forward_batch(h.net, x, &tape));
    double loss = 0.0;
    Matrix d = p;
    for (int i = 0; i < b; ++i) {
      loss -= std::log(std::max(p(i, y[i]), 1e-300));
      d(i, y[i]) -= 1.0;
    }
    d /= static_cast<double>(b);
    auto r = backward_batch(h.net, tape, d);
    opt.step(h.net, r.grads, learning_rate_at(cfg, step));
    losses.push_back(loss / b);
  }
  return losses;
}

struct PolicyHead {
  MlpParams net;  // (s, G) -> action, or s -> action when unconditioned
  int state_dim = 0;
  int action_dim = 0;
  bool conditioned = true;

  int input_dim() const { return state_dim + (conditioned ? 1 : 0); }
};

inline PolicyHead make_policy_head(int state_dim, int action_dim, bool conditioned, int width, int depth, Rng& rng) {
  PolicyHead h;
  h.state_dim = state_dim;
  h.action_dim = action_dim;
  h.conditioned = conditioned;
  auto sizes = mlp_sizes(h.input_dim(), width, depth, action_dim);
  h.net = make_mlp(std::span<const int>(sizes), rng);
  return h;
}

inline Vector policy_mean(const PolicyHead& h, const Vector& s, double G) {
  if (s.size() != h.state_dim) throw ShapeError("policy head state dim mismatch");
  Matrix x(1, h.input_dim());
  x.row(0).head(h.state_dim) = s.transpose();
  if (h.conditioned) x(0, h.state_dim) = G;
  return forward_batch(h.net, x).row(0).transpose();
}

// Mean squared error between predicted mean and dataset action.
inline std::vector<double> train_policy_head(PolicyHead& h, const NormalizedData& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ArgumentError("train_policy_head: empty dataset");
  if (data.state_dim() != h.state_dim || data.action_dim() != h.action_dim) {
    throw ShapeError("train_policy_head: dataset dims do not match the head");
  }
  Rng rng(cfg.seed);
  Optimizer opt(cfg.optimizer);
  std::uniform_int_distribution<Eigen::Index> pick(0, data.size() - 1);
  const int b = cfg.batch_size;
  Matrix x(b, h.input_dim());
  Matrix target(b, h.action_dim);
  std::vector<double> losses;
  losses.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      const auto k = pick(rng);
      x.row(i).head(h.state_dim) = data.states.row(k);
      if (h.conditioned) x(i, h.state_dim) = data.returns[k];
      target.row(i) = data.actions.row(k);
    }
    ForwardTape tape;
    Matrix diff = forward_batch(h.net, x, &tape) - target;
    const double denom = static_cast<double>(b) * h.action_dim;
    auto r = backward_batch(h.net, tape, (2.0 / denom) * diff);
    opt.step(h.net, r.grads, learning_rate_at(cfg, step));
    losses.push_back(diff.squaredNorm() / denom);
  }
  return losses;
}

// Target return from the tilted return model, then the policy mean at it.
// Unconditioned heads ignore the return model entirely.
inline Vector act(const CategoricalReturnHead* return_head, const PolicyHead& policy, const Vector& s, double eta_inv) {
  if (!policy.conditioned) return policy_mean(policy, s, 0.0);
  if (!return_head) throw ArgumentError("conditioned policy needs a return head");
  return policy_mean(policy, s, select_target_return(*return_head, s, eta_inv));
}

inline void write_return_head(std::ostream& os, const CategoricalReturnHead& h) { write_checkpoint(os, h.net, "return_head"); }

inline CategoricalReturnHead read_return_head(std::istream& is) {
  std::string role;
  CategoricalReturnHead h;
  h.net = read_checkpoint(is, &role);
  if (role != "return_head") throw FormatError("checkpoint role is '" + role + "', expected return_head");
  h.atoms = atom_grid(h.net.output_dim());
  return h;
}

inline void write_policy_head(std::ostream& os, const PolicyHead& h) {
  write_checkpoint(os, h.net, h.conditioned ? "policy_head" : "bc");
}

inline PolicyHead read_policy_head(std::istream& is, int state_dim) {
  std::string role;
  PolicyHead h;
  h.net = read_checkpoint(is, &role);
  if (role != "policy_head" && role != "bc") throw FormatError("checkpoint role is '" + role + "', expected policy_head|bc");
  h.conditioned = role == "policy_head";
  h.state_dim = state_dim;
  h.action_dim = h.net.output_dim();
  if (h.net.input_dim() != h.input_dim()) throw FormatError("policy checkpoint input dim does not match state_dim");
  return h;
}

}  // namespace irvs
