#pragma once

// Offline datasets of (s, a, G) transitions: return-to-go labels,
// normalization, generation from the synthetic benchmarks, and a text file
// format.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irvs/envs.hpp"

namespace irvs {

struct Transition {
  Vector s;
  Vector a;
  double G = 0.0;
};

enum class ReturnMode { kSum, kAverage };

inline std::string to_string(ReturnMode m) { return m == ReturnMode::kSum ? "sum" : "average"; }

inline ReturnMode parse_return_mode(const std::string& s) {
  if (s == "sum") return ReturnMode::kSum;
  if (s == "average") return ReturnMode::kAverage;
  throw ArgumentError("unknown return mode '" + s + "' (expected sum|average)");
}

// G_i = sum_{t >= i} r_t, or that sum divided by the number of remaining steps.
inline std::vector<double> compute_returns(std::span<const double> rewards, ReturnMode mode) {
  if (rewards.empty()) throw ArgumentError("compute_returns: empty trajectory");
  const std::size_t n = rewards.size();
  std::vector<double> g(n);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    acc = rewards[i] + acc;
    g[i] = acc;
  }
  if (mode == ReturnMode::kAverage) {
    for (std::size_t i = 0; i < n; ++i) g[i] /= static_cast<double>(n - i);
  }
  return g;
}

inline std::vector<double> compute_returns(const Trajectory& traj, ReturnMode mode) {
  std::vector<double> r;
  r.reserve(traj.steps.size());
  for (const auto& s : traj.steps) r.push_back(s.reward);
  return compute_returns(std::span<const double>(r), mode);
}

// ---------------------------------------------------------------------------
// Normalization: states to zero mean / unit std, actions and returns to [-1, 1]
// by min-max. Constant coordinates map to 0.

inline constexpr double kStdFloor = 1e-6;

enum class Direction { kForward, kInverse };

struct Normalizer {
  Vector state_mean, state_std;
  Vector action_min, action_max;
  double return_min = 0.0, return_max = 0.0;

  int state_dim() const { return static_cast<int>(state_mean.size()); }
  int action_dim() const { return static_cast<int>(action_min.size()); }

  // Ranges at rounding-noise level count as constant.
  static bool degenerate(double lo, double hi) {
    return !(hi - lo > 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)}));
  }
  static double to_unit(double x, double lo, double hi) {
    if (degenerate(lo, hi)) return 0.0;
    return 2.0 * (x - lo) / (hi - lo) - 1.0;
  }
  static double from_unit(double y, double lo, double hi) {
    if (degenerate(lo, hi)) return lo;
    return lo + (y + 1.0) * 0.5 * (hi - lo);
  }

  Vector state(const Vector& s, Direction dir = Direction::kForward) const {
    if (s.size() != state_dim()) throw ShapeError("normalizer: state dim mismatch");
    const Vector sd = state_std.cwiseMax(kStdFloor);
    if (dir == Direction::kForward) return ((s - state_mean).array() / sd.array()).matrix();
    return (s.array() * sd.array()).matrix() + state_mean;
  }

  Vector action(const Vector& a, Direction dir = Direction::kForward) const {
    if (a.size() != action_dim()) throw ShapeError("normalizer: action dim mismatch");
    Vector out(a.size());
    for (int i = 0; i < a.size(); ++i) {
      out[i] = dir == Direction::kForward ? to_unit(a[i], action_min[i], action_max[i])
                                          : from_unit(a[i], action_min[i], action_max[i]);
    }
    return out;
  }

  double ret(double g, Direction dir = Direction::kForward) const {
    return dir == Direction::kForward ? to_unit(g, return_min, return_max) : from_unit(g, return_min, return_max);
  }
};

inline Normalizer fit_normalizer(std::span<const Transition> raw) {
  if (raw.empty()) throw ArgumentError("fit_normalizer: no transitions");
  const auto sd = raw.front().s.size();
  const auto ad = raw.front().a.size();
  Normalizer n;
  n.state_mean = Vector::Zero(sd);
  n.state_std = Vector::Zero(sd);
  n.action_min = raw.front().a;
  n.action_max = raw.front().a;
  n.return_min = n.return_max = raw.front().G;
  for (const auto& t : raw) {
    if (t.s.size() != sd || t.a.size() != ad) throw ShapeError("fit_normalizer: inconsistent transition dims");
    n.state_mean += t.s;
    n.action_min = n.action_min.cwiseMin(t.a);
    n.action_max = n.action_max.cwiseMax(t.a);
    n.return_min = std::min(n.return_min, t.G);
    n.return_max = std::max(n.return_max, t.G);
  }
  const double count = static_cast<double>(raw.size());
  n.state_mean /= count;
  for (const auto& t : raw) n.state_std += (t.s - n.state_mean).array().square().matrix();
  n.state_std = (n.state_std / count).cwiseSqrt().cwiseMax(kStdFloor);
  return n;
}

inline Transition apply(const Normalizer& n, const Transition& t, Direction dir) {
  return {n.state(t.s, dir), n.action(t.a, dir), n.ret(t.G, dir)};
}

// ---------------------------------------------------------------------------
// Dataset

struct DatasetMeta {
  std::string env = "unknown";
  ReturnMode return_mode = ReturnMode::kSum;
  std::uint64_t seed = 0;
  int episodes = 0;
  int dim = 0;
  double epsilon = 0.0;
  std::optional<double> delta;
};

struct Dataset {
  std::vector<Transition> transitions;  // raw (unnormalized) values
  Normalizer normalizer;
  DatasetMeta meta;

  int state_dim() const { return transitions.empty() ? 0 : static_cast<int>(transitions.front().s.size()); }
  int action_dim() const { return transitions.empty() ? 0 : static_cast<int>(transitions.front().a.size()); }
  std::size_t size() const { return transitions.size(); }
};

// Normalized training arrays, one row per transition.
struct NormalizedData {
  Matrix states;
  Matrix actions;
  Vector returns;

  Eigen::Index size() const { return states.rows(); }
  int state_dim() const { return static_cast<int>(states.cols()); }
  int action_dim() const { return static_cast<int>(actions.cols()); }
};

inline NormalizedData normalized(const Dataset& d) {
  if (d.transitions.empty()) throw ArgumentError("dataset is empty");
  NormalizedData out;
  const auto n = static_cast<Eigen::Index>(d.size());
  out.states.resize(n, d.state_dim());
  out.actions.resize(n, d.action_dim());
  out.returns.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto t = apply(d.normalizer, d.transitions[i], Direction::kForward);
    out.states.row(i) = t.s.transpose();
    out.actions.row(i) = t.a.transpose();
    out.returns[i] = t.G;
  }
  return out;
}

inline Dataset make_dataset(std::vector<Transition> transitions, DatasetMeta meta) {
  if (transitions.empty()) throw ArgumentError("dataset generation produced no transitions");
  Dataset d;
  d.normalizer = fit_normalizer(transitions);
  d.transitions = std::move(transitions);
  d.meta = std::move(meta);
  return d;
}

// Behavior episodes in the didactic room: each episode heads for a goal
// chosen uniformly at random, so a quarter of the data is optimal.
inline Dataset generate_didactic(const DidacticRoom& env, int episodes, std::uint64_t seed,
                                 ReturnMode mode = ReturnMode::kSum) {
  if (episodes < 1) throw ArgumentError("need at least one episode");
  std::vector<Transition> out;
  for (int e = 0; e < episodes; ++e) {
    Rng rng = child_rng(seed, e);
    auto traj = didactic_behavior_episode(env, rng);
    auto g = compute_returns(traj, mode);
    for (std::size_t i = 0; i < traj.steps.size(); ++i) out.push_back({traj.steps[i].state, traj.steps[i].action, g[i]});
  }
  DatasetMeta meta;
  meta.env = "didactic";
  meta.return_mode = mode;
  meta.seed = seed;
  meta.episodes = episodes;
  meta.dim = 2;
  return make_dataset(std::move(out), meta);
}

// Single-step optimal demonstrations. The return label is the negative
// distance between where the action lands and the left-most goal.
inline Dataset generate_nav(int size, int dim, double epsilon, std::optional<double> delta, std::uint64_t seed) {
  if (size < 1) throw ArgumentError("need at least one demonstration");
  std::vector<Transition> out;
  out.reserve(size);
  for (int e = 0; e < size; ++e) {
    Rng rng = child_rng(seed, e);
    auto task = nav_sample_task(dim, epsilon, delta, rng);
    Vector a = nav_optimal_action(task);
    // -|s + a - g*| written as -|a - a*| so the optimal label is exactly 0.
    double G = -(a - nav_optimal_action(task)).norm();
    out.push_back({task.state(), a, G});
  }
  DatasetMeta meta;
  meta.env = "nav";
  meta.return_mode = ReturnMode::kSum;
  meta.seed = seed;
  meta.episodes = size;
  meta.dim = dim;
  meta.epsilon = epsilon;
  meta.delta = delta;
  return make_dataset(std::move(out), meta);
}

// ---------------------------------------------------------------------------
// File format
//
//   # irvs-dataset v1
//   # key=value            (env, state_dim, action_dim, return_mode, seed,
//   # ...                   episodes, dim, epsilon, delta, transitions,
//                           and the normalizer vectors, space separated)
//   s_1 ... s_k a_1 ... a_m G      one transition per line
//
// Numbers are written with 17 significant digits.

namespace detail {

inline std::string join(const Vector& v) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

inline std::string num(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

}  // namespace detail

inline void save(const Dataset& d, std::ostream& os) {
  os << "# irvs-dataset v1\n";
  os << "# env=" << d.meta.env << '\n';
  os << "# state_dim=" << d.state_dim() << '\n';
  os << "# action_dim=" << d.action_dim() << '\n';
  os << "# return_mode=" << to_string(d.meta.return_mode) << '\n';
  os << "# seed=" << d.meta.seed << '\n';
  os << "# episodes=" << d.meta.episodes << '\n';
  os << "# dim=" << d.meta.dim << '\n';
  os << "# epsilon=" << detail::num(d.meta.epsilon) << '\n';
  os << "# delta=" << (d.meta.delta ? detail::num(*d.meta.delta) : std::string("none")) << '\n';
  os << "# transitions=" << d.size() << '\n';
  const auto& n = d.normalizer;
  os << "# state_mean=" << detail::join(n.state_mean) << '\n';
  os << "# state_std=" << detail::join(n.state_std) << '\n';
  os << "# action_min=" << detail::join(n.action_min) << '\n';
  os << "# action_max=" << detail::join(n.action_max) << '\n';
  os << "# return_min=" << detail::num(n.return_min) << '\n';
  os << "# return_max=" << detail::num(n.return_max) << '\n';
  auto prec = os.precision(17);
  for (const auto& t : d.transitions) {
    bool first = true;
    auto put = [&](double x) {
      if (!first) os << ' ';
      os << x;
      first = false;
    };
    for (double x : t.s) put(x);
    for (double x : t.a) put(x);
    put(t.G);
    os << '\n';
  }
  os.precision(prec);
}

inline void save(const Dataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  save(d, os);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

namespace detail {

inline std::vector<double> parse_numbers(const std::string& text, int line_no, const std::string& what) {
  std::vector<double> out;
  const char* c = text.c_str();
  while (true) {
    while (*c == ' ' || *c == '\t') ++c;
    if (*c == '\0') break;
    char* end = nullptr;
    double v = std::strtod(c, &end);
    if (end == c) throw FormatError("line " + std::to_string(line_no) + ": bad number in " + what);
    out.push_back(v);
    c = end;
  }
  return out;
}

}  // namespace detail

// Normalizer on its own, for evaluating checkpoints without the dataset.
inline void write_normalizer(std::ostream& os, const Normalizer& n) {
  os << "# irvs-normalizer v1\n";
  os << "state_mean=" << detail::join(n.state_mean) << '\n';
  os << "state_std=" << detail::join(n.state_std) << '\n';
  os << "action_min=" << detail::join(n.action_min) << '\n';
  os << "action_max=" << detail::join(n.action_max) << '\n';
  os << "return_min=" << detail::num(n.return_min) << '\n';
  os << "return_max=" << detail::num(n.return_max) << '\n';
}

inline Normalizer read_normalizer(std::istream& is) {
  std::string line;
  int line_no = 1;
  if (!std::getline(is, line) || line != "# irvs-normalizer v1") throw FormatError("line 1: not an irvs normalizer");
  std::map<std::string, std::vector<double>> kv;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("line " + std::to_string(line_no) + ": expected key=value");
    kv[line.substr(0, eq)] = detail::parse_numbers(line.substr(eq + 1), line_no, line.substr(0, eq));
  }
  auto vec = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end() || it->second.empty()) throw FormatError(std::string("normalizer is missing '") + key + "'");
    return Vector(Eigen::Map<Vector>(it->second.data(), static_cast<Eigen::Index>(it->second.size())));
  };
  Normalizer n;
  n.state_mean = vec("state_mean");
  n.state_std = vec("state_std");
  n.action_min = vec("action_min");
  n.action_max = vec("action_max");
  n.return_min = vec("return_min")[0];
  n.return_max = vec("return_max")[0];
  if (n.state_std.size() != n.state_mean.size() || n.action_max.size() != n.action_min.size()) {
    throw FormatError("normalizer vectors have inconsistent sizes");
  }
  return n;
}

inline Dataset load(std::istream& is) {
  std::map<std::string, std::pair<std::string, int>> header;
  std::string line;
  int line_no = 0;
  std::vector<std::pair<std::string, int>> rows;
  bool seen_magic = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (!rows.empty()) throw FormatError("line " + std::to_string(line_no) + ": header line after data rows");
      if (!seen_magic) {
        if (line != "# irvs-dataset v1") throw FormatError("line " + std::to_string(line_no) + ": not an irvs dataset");
        seen_magic = true;
        continue;
      }
      auto body = line.substr(1);
      auto start = body.find_first_not_of(' ');
      auto eq = body.find('=');
      if (start == std::string::npos || eq == std::string::npos || eq < start) {
        throw FormatError("line " + std::to_string(line_no) + ": malformed header, expected '# key=value'");
      }
      header[body.substr(start, eq - start)] = {body.substr(eq + 1), line_no};
      continue;
    }
    if (!seen_magic) throw FormatError("line " + std::to_string(line_no) + ": missing dataset header");
    rows.emplace_back(line, line_no);
  }
  if (!seen_magic) throw FormatError("line 1: empty file");

  auto get = [&](const std::string& key) -> std::pair<std::string, int> {
    auto it = header.find(key);
    if (it == header.end()) throw FormatError("line " + std::to_string(line_no) + ": header is missing '" + key + "'");
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    auto [v, ln] = get(key);
    try {
      std::size_t pos = 0;
      long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(ln) + ": '" + key + "' is not an integer");
    }
  };
  auto get_u64 = [&](const std::string& key) {
    auto [v, ln] = get(key);
    try {
      std::size_t pos = 0;
      auto x = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return static_cast<std::uint64_t>(x);
    } catch (const std::exception&) {
      throw FormatError("line " + std::to_string(ln) + ": '" + key + "' is not an unsigned integer");
    }
  };
  auto get_vec = [&](const std::string& key, int expect) {
    auto [v, ln] = get(key);
    auto xs = detail::parse_numbers(v, ln, key);
    if (static_cast<int>(xs.size()) != expect) {
      throw FormatError("line " + std::to_string(ln) + ": '" + key + "' needs " + std::to_string(expect) + " values");
    }
    return Vector(Eigen::Map<Vector>(xs.data(), expect));
  };
  auto get_num = [&](const std::string& key) { return get_vec(key, 1)[0]; };

  Dataset d;
  d.meta.env = get("env").first;
  const int sd = static_cast<int>(get_int("state_dim"));
  const int ad = static_cast<int>(get_int("action_dim"));
  if (sd < 1 || ad < 1) throw FormatError("line " + std::to_string(get("state_dim").second) + ": dims must be >= 1");
  try {
    d.meta.return_mode = parse_return_mode(get("return_mode").first);
  } catch (const ArgumentError& e) {
    throw FormatError("line " + std::to_string(get("return_mode").second) + ": " + e.what());
  }
  d.meta.seed = get_u64("seed");
  d.meta.episodes = static_cast<int>(get_int("episodes"));
  d.meta.dim = static_cast<int>(get_int("dim"));
  d.meta.epsilon = get_num("epsilon");
  if (get("delta").first != "none") d.meta.delta = get_num("delta");
  const auto expected_rows = get_int("transitions");
  d.normalizer.state_mean = get_vec("state_mean", sd);
  d.normalizer.state_std = get_vec("state_std", sd);
  d.normalizer.action_min = get_vec("action_min", ad);
  d.normalizer.action_max = get_vec("action_max", ad);
  d.normalizer.return_min = get_num("return_min");
  d.normalizer.return_max = get_num("return_max");

  const int width = sd + ad + 1;
  d.transitions.reserve(rows.size());
  for (const auto& [text, ln] : rows) {
    auto xs = detail::parse_numbers(text, ln, "transition");
    if (static_cast<int>(xs.size()) != width) {
      throw FormatError("line " + std::to_string(ln) + ": expected " + std::to_string(width) + " values, got " +
                        std::to_string(xs.size()));
    }
    Transition t;
    t.s = Eigen::Map<Vector>(xs.data(), sd);
    t.a = Eigen::Map<Vector>(xs.data() + sd, ad);
    t.G = xs[sd + ad];
    d.transitions.push_back(std::move(t));
  }
  if (static_cast<long long>(d.transitions.size()) != expected_rows) {
    throw FormatError("line " + std::to_string(line_no + 1) + ": file truncated, header declares " +
                      std::to_string(expected_rows) + " transitions but found " + std::to_string(d.transitions.size()));
  }
  return d;
}

inline Dataset load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset '" + path + "'");
  return load(is);
}

}  // namespace irvs
