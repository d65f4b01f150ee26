#pragma once

// Experiment plumbing: config registry, dataset -> train -> evaluate pipeline,
// sweeps over one axis, and the tidy metrics CSV.

#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "irvs/dataset.hpp"
#include "irvs/ebm.hpp"
#include "irvs/envs.hpp"
#include "irvs/langevin.hpp"
#include "irvs/rvs_explicit.hpp"

namespace irvs {

namespace fs = std::filesystem;

// Failure inside a named pipeline stage (config, dataset, train, eval, sweep,
// report, io).
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error(what), stage(std::move(stage_name)) {}
};

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// Shortest round-trip text for a double.
inline std::string fmt_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string fmt_opt(const std::optional<double>& x) { return x ? fmt_num(*x) : "none"; }

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  double x = 0.0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), x);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ArgumentError(key + ": expected a number, got '" + v + "'");
  }
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  long long x = 0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), x);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ArgumentError(key + ": expected an integer, got '" + v + "'");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  if (t == "1" || t == "true" || t == "on" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "off" || t == "no") return false;
  throw ArgumentError(key + ": expected a boolean, got '" + v + "'");
}

inline std::optional<double> parse_opt_double(const std::string& key, const std::string& v) {
  if (trim(v) == "none" || trim(v).empty()) return std::nullopt;
  return parse_double(key, v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config

struct ExperimentConfig {
  std::string env = "nav";  // nav | didactic
  std::string algorithm = "irvs";  // irvs | rvs | bc | ibc
  double eta_inv = 0.0;
  int dataset_size = 5000;  // nav demonstrations or didactic episodes
  int dim = 2;
  double train_epsilon = 0.1;
  double epsilon = 0.1;  // goal radius at evaluation
  std::optional<double> delta;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int eval_episodes = 200;
  std::string output_dir = "runs";
  std::string dataset_path;  // load this dataset instead of generating one
  ReturnMode return_mode = ReturnMode::kSum;

  int ebm_width = 64;
  int ebm_depth = 3;
  bool spectral_norm = false;
  int head_width = 256;
  int head_depth = 2;
  int n_atoms = 101;

  int steps = 10000;
  int batch_size = 64;
  int head_batch_size = 256;
  int n_neg = 8;
  double lr = 1e-3;
  double lr_decay = 0.99;
  int lr_decay_steps = 100;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double grad_margin = 1.0;
  double penalty_weight = 1.0;
  double boundary_buffer = 0.05;
  int train_chain_iters = 20;

  int infer_chains = 64;
  int infer_iters = 100;
  ChainSelect chain_select = ChainSelect::kArgmin;
  double success_scale = kNavSuccessScale;

  bool record_wall_time = false;
  int jobs = 1;

  // Named starting points; "nav" and "didactic" carry the step counts of the
  // original experiments. Navigation returns are constant (every
  // demonstration is optimal), so nav runs untilted.
  static ExperimentConfig preset(const std::string& env) {
    ExperimentConfig c;
    if (env == "nav") return c;
    if (env == "didactic") {
      c.env = "didactic";
      c.eta_inv = 3.0;
      c.steps = 2000;
      c.chain_select = ChainSelect::kSoftmax;
      return c;
    }
    throw ArgumentError("env must be nav or didactic, got '" + env + "'");
  }

  bool is_nav() const { return env == "nav"; }
  bool energy_based() const { return algorithm == "irvs" || algorithm == "ibc"; }
  double effective_eta() const { return algorithm == "ibc" ? 0.0 : eta_inv; }

  void validate() const {
    if (env != "nav" && env != "didactic") throw ArgumentError("env must be nav or didactic");
    if (algorithm != "irvs" && algorithm != "rvs" && algorithm != "bc" && algorithm != "ibc") {
      throw ArgumentError("algorithm must be one of irvs, rvs, bc, ibc");
    }
    if (!std::isfinite(eta_inv) || eta_inv < 0.0) throw ArgumentError("eta_inv must be finite and >= 0");
    if (dataset_size < 1) throw ArgumentError("dataset_size must be >= 1");
    if (dim < 1) throw ArgumentError("dim must be >= 1");
    if (!(train_epsilon > 0.0) || !(epsilon > 0.0)) throw ArgumentError("goal radii must be positive");
    if (delta && !(*delta >= 0.0)) throw ArgumentError("delta must be >= 0");
    if (seeds.empty()) throw ArgumentError("seeds must be non-empty");
    if (eval_episodes < 1) throw ArgumentError("eval_episodes must be >= 1");
    if (ebm_width < 1 || ebm_depth < 1 || head_width < 1 || head_depth < 1) {
      throw ArgumentError("network widths and depths must be >= 1");
    }
    if (n_atoms < 2) throw ArgumentError("n_atoms must be >= 2");
    if (head_batch_size < 1) throw ArgumentError("head_batch_size must be >= 1");
    if (train_chain_iters < 0 || infer_iters < 0) throw ArgumentError("chain iterations must be >= 0");
    if (infer_chains < 1) throw ArgumentError("infer_chains must be >= 1");
    if (!(success_scale > 0.0)) throw ArgumentError("success_scale must be positive");
    if (jobs < 1) throw ArgumentError("jobs must be >= 1");
    train_config(0).validate();
  }

  TrainConfig train_config(std::uint64_t seed, bool head = false) const {
    TrainConfig t;
    t.batch_size = head ? head_batch_size : batch_size;
    t.n_neg = n_neg;
    t.lr = lr;
    t.lr_decay = lr_decay;
    t.lr_decay_steps = lr_decay_steps;
    t.steps = steps;
    t.grad_margin = grad_margin;
    t.penalty_weight = penalty_weight;
    t.boundary_buffer = boundary_buffer;
    t.seed = seed;
    t.optimizer = optimizer;
    return t;
  }

  LangevinSchedule train_schedule() const {
    LangevinSchedule s;
    s.iterations = train_chain_iters;
    return s;
  }

  LangevinSchedule infer_schedule() const {
    LangevinSchedule s;
    s.iterations = infer_iters;
    return s;
  }
};

struct ConfigField {
  std::string name;
  std::string help;
  bool training;  // changes the trained model
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  using C = ExperimentConfig;
  using namespace detail;
  auto num = [](auto C::*m) {
    return [m](const C& c) { return fmt_num(static_cast<double>(c.*m)); };
  };
  auto set_int = [](int C::*m, const char* k) {
    return [m, k](C& c, const std::string& v) { c.*m = static_cast<int>(parse_int(k, v)); };
  };
  auto set_dbl = [](double C::*m, const char* k) {
    return [m, k](C& c, const std::string& v) { c.*m = parse_double(k, v); };
  };
  static const std::vector<ConfigField> fields = {
      {"env", "nav | didactic", true, [](const C& c) { return c.env; }, [](C& c, const std::string& v) { c.env = trim(v); }},
      {"algorithm", "irvs | rvs | bc | ibc", true, [](const C& c) { return c.algorithm; },
       [](C& c, const std::string& v) { c.algorithm = trim(v); }},
      {"eta_inv", "return tilt strength", false, num(&C::eta_inv), set_dbl(&C::eta_inv, "eta_inv")},
      {"dataset_size", "demonstrations (nav) or episodes (didactic)", true, num(&C::dataset_size),
       set_int(&C::dataset_size, "dataset_size")},
      {"dim", "navigation dimension D", true, num(&C::dim), set_int(&C::dim, "dim")},
      {"train_epsilon", "goal radius in the training data", true, num(&C::train_epsilon),
       set_dbl(&C::train_epsilon, "train_epsilon")},
      {"epsilon", "goal radius at evaluation", false, num(&C::epsilon), set_dbl(&C::epsilon, "epsilon")},
      {"delta", "first-coordinate goal gap, or none", true, [](const C& c) { return fmt_opt(c.delta); },
       [](C& c, const std::string& v) { c.delta = parse_opt_double("delta", v); }},
      {"seeds", "comma separated seed list", false,
       [](const C& c) {
         std::string s;
         for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
         return s;
       },
       [](C& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& p : split(v, ',')) {
           auto x = parse_int("seeds", p);
           if (x < 0) throw ArgumentError("seeds must be non-negative");
           c.seeds.push_back(static_cast<std::uint64_t>(x));
         }
       }},
      {"eval_episodes", "evaluation episodes per seed", false, num(&C::eval_episodes),
       set_int(&C::eval_episodes, "eval_episodes")},
      {"output_dir", "artifact directory", false, [](const C& c) { return c.output_dir; },
       [](C& c, const std::string& v) { c.output_dir = trim(v); }},
      {"dataset_path", "load a saved dataset instead of generating", true, [](const C& c) { return c.dataset_path; },
       [](C& c, const std::string& v) { c.dataset_path = trim(v); }},
      {"return_mode", "sum | average", true, [](const C& c) { return to_string(c.return_mode); },
       [](C& c, const std::string& v) { c.return_mode = parse_return_mode(trim(v)); }},
      {"ebm_width", "energy net width", true, num(&C::ebm_width), set_int(&C::ebm_width, "ebm_width")},
      {"ebm_depth", "energy net hidden layers", true, num(&C::ebm_depth), set_int(&C::ebm_depth, "ebm_depth")},
      {"spectral_norm", "spectral normalization on the energy net", true,
       [](const C& c) { return std::string(c.spectral_norm ? "1" : "0"); },
       [](C& c, const std::string& v) { c.spectral_norm = parse_bool("spectral_norm", v); }},
      {"head_width", "return/policy head width", true, num(&C::head_width), set_int(&C::head_width, "head_width")},
      {"head_depth", "return/policy head hidden layers", true, num(&C::head_depth),
       set_int(&C::head_depth, "head_depth")},
      {"n_atoms", "return atoms", true, num(&C::n_atoms), set_int(&C::n_atoms, "n_atoms")},
      {"steps", "gradient steps", true, num(&C::steps), set_int(&C::steps, "steps")},
      {"batch_size", "energy model batch size", true, num(&C::batch_size), set_int(&C::batch_size, "batch_size")},
      {"head_batch_size", "explicit head batch size", true, num(&C::head_batch_size),
       set_int(&C::head_batch_size, "head_batch_size")},
      {"n_neg", "counter-examples per positive", true, num(&C::n_neg), set_int(&C::n_neg, "n_neg")},
      {"lr", "learning rate", true, num(&C::lr), set_dbl(&C::lr, "lr")},
      {"lr_decay", "learning rate decay factor", true, num(&C::lr_decay), set_dbl(&C::lr_decay, "lr_decay")},
      {"lr_decay_steps", "steps between decays", true, num(&C::lr_decay_steps),
       set_int(&C::lr_decay_steps, "lr_decay_steps")},
      {"optimizer", "adam | sgd", true, [](const C& c) { return to_string(c.optimizer); },
       [](C& c, const std::string& v) { c.optimizer = parse_optimizer(trim(v)); }},
      {"grad_margin", "gradient penalty margin", true, num(&C::grad_margin), set_dbl(&C::grad_margin, "grad_margin")},
      {"penalty_weight", "gradient penalty weight", true, num(&C::penalty_weight),
       set_dbl(&C::penalty_weight, "penalty_weight")},
      {"boundary_buffer", "clip box widening for training chains", true, num(&C::boundary_buffer),
       set_dbl(&C::boundary_buffer, "boundary_buffer")},
      {"train_chain_iters", "Langevin steps for counter-examples", true, num(&C::train_chain_iters),
       set_int(&C::train_chain_iters, "train_chain_iters")},
      {"infer_chains", "parallel chains at inference", false, num(&C::infer_chains),
       set_int(&C::infer_chains, "infer_chains")},
      {"infer_iters", "Langevin steps at inference", false, num(&C::infer_iters),
       set_int(&C::infer_iters, "infer_iters")},
      {"chain_select", "argmin | softmax", false,
       [](const C& c) { return std::string(c.chain_select == ChainSelect::kArgmin ? "argmin" : "softmax"); },
       [](C& c, const std::string& v) {
         if (trim(v) == "argmin") c.chain_select = ChainSelect::kArgmin;
         else if (trim(v) == "softmax") c.chain_select = ChainSelect::kSoftmax;
         else throw ArgumentError("chain_select must be argmin or softmax");
       }},
      {"success_scale", "nav success radius per sqrt(D)", false, num(&C::success_scale),
       set_dbl(&C::success_scale, "success_scale")},
      {"record_wall_time", "write real wall times (breaks byte-identical CSVs)", false,
       [](const C& c) { return std::string(c.record_wall_time ? "1" : "0"); },
       [](C& c, const std::string& v) { c.record_wall_time = parse_bool("record_wall_time", v); }},
      {"jobs", "worker threads for sweeps", false, num(&C::jobs), set_int(&C::jobs, "jobs")},
  };
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.name == key) return f;
  throw ArgumentError("unknown config key '" + key + "'");
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline void apply(ExperimentConfig& c, const KeyValues& kv) {
  for (const auto& [k, v] : kv) config_field(k).set(c, v);
}

// Flat key=value text; '#' starts a comment.
inline KeyValues parse_config_text(std::istream& is) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = detail::trim(line.substr(0, eq));
    config_field(key);
    kv.emplace_back(key, detail::trim(line.substr(eq + 1)));
  }
  return kv;
}

inline KeyValues read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config file " + path);
  return parse_config_text(in);
}

// Preset chosen by env (command line, then file, then nav), then the file,
// then the command line.
inline ExperimentConfig build_config(const KeyValues& file, const KeyValues& cli) {
  std::string env = "nav";
  for (const auto* src : {&file, &cli})
    for (const auto& [k, v] : *src)
      if (k == "env") env = detail::trim(v);
  auto c = ExperimentConfig::preset(env);
  apply(c, file);
  apply(c, cli);
  c.validate();
  return c;
}

inline std::string to_text(const ExperimentConfig& c) {
  std::string s;
  for (const auto& f : config_fields()) s += f.name + "=" + f.get(c) + "\n";
  return s;
}

// Every field that changes the trained model.
inline std::string training_key(const ExperimentConfig& c) {
  std::string s;
  for (const auto& f : config_fields())
    if (f.training) s += f.name + "=" + f.get(c) + ";";
  return s;
}

inline std::string hex_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// Relative output dirs live under $IRVS_OUTPUT_ROOT when it is set.
inline fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("IRVS_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  }
  return p;
}

// Per-stage seeds derived from one experiment seed.
enum class Stage : std::uint64_t { kDataset = 0, kInit = 1, kTrain = 2, kEval = 3, kHead = 4 };

inline std::uint64_t stage_seed(std::uint64_t seed, Stage s) { return mix_seed(seed, static_cast<std::uint64_t>(s)); }

// ---------------------------------------------------------------------------
// Data and agents

inline Dataset make_experiment_dataset(const ExperimentConfig& c, std::uint64_t seed) {
  return in_stage("dataset", [&] {
    if (!c.dataset_path.empty()) return load(c.dataset_path);
    if (c.is_nav()) return generate_nav(c.dataset_size, c.dim, c.train_epsilon, c.delta, stage_seed(seed, Stage::kDataset));
    return generate_didactic(DidacticRoom{}, c.dataset_size, stage_seed(seed, Stage::kDataset), c.return_mode);
  });
}

struct TrainedAgent {
  std::string algorithm;
  Normalizer normalizer;
  std::optional<EnergyModel> energy;
  std::optional<CategoricalReturnHead> return_head;
  std::optional<PolicyHead> policy;
  std::vector<StepMetrics> ebm_trace;
  std::vector<double> return_losses;
  std::vector<double> policy_losses;
};

inline TrainedAgent train_agent(const ExperimentConfig& c, const Dataset& d, std::uint64_t seed) {
  return in_stage("train", [&] {
    TrainedAgent a;
    a.algorithm = c.algorithm;
    a.normalizer = d.normalizer;
    NormalizedData nd = normalized(d);
    Rng init = child_rng(seed, static_cast<std::uint64_t>(Stage::kInit));
    if (c.energy_based()) {
      auto m = make_energy_model(d.state_dim(), d.action_dim(), c.ebm_width, c.ebm_depth, c.spectral_norm, init);
      auto res = train(std::move(m), nd, c.train_config(stage_seed(seed, Stage::kTrain)), c.train_schedule());
      a.energy = std::move(res.model);
      a.ebm_trace = std::move(res.trace);
      return a;
    }
    const bool conditioned = c.algorithm == "rvs";
    if (conditioned) {
      auto h = make_return_head(d.state_dim(), c.n_atoms, c.head_width, c.head_depth, init);
      a.return_losses = train_return_head(h, nd, c.train_config(stage_seed(seed, Stage::kHead), true));
      a.return_head = std::move(h);
    }
    auto p = make_policy_head(d.state_dim(), d.action_dim(), conditioned, c.head_width, c.head_depth, init);
    a.policy_losses = train_policy_head(p, nd, c.train_config(stage_seed(seed, Stage::kTrain), true));
    a.policy = std::move(p);
    return a;
  });
}

namespace detail {

inline void write_file(const fs::path& p, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  body(out);
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open " + p.string());
  return in;
}

}  // namespace detail

inline void save_agent(const TrainedAgent& a, const fs::path& dir) {
  in_stage("io", [&] {
    fs::create_directories(dir);
    detail::write_file(dir / "agent.txt", [&](std::ostream& os) {
      os << "algorithm=" << a.algorithm << "\nstate_dim=" << a.normalizer.state_dim() << '\n';
    });
    detail::write_file(dir / "normalizer.txt", [&](std::ostream& os) { write_normalizer(os, a.normalizer); });
    if (a.energy) {
      detail::write_file(dir / "energy.txt", [&](std::ostream& os) { write_energy_model(os, *a.energy); });
      detail::write_file(dir / "train_metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, a.ebm_trace); });
    }
    if (a.return_head) {
      detail::write_file(dir / "return_head.txt", [&](std::ostream& os) { write_return_head(os, *a.return_head); });
    }
    if (a.policy) detail::write_file(dir / "policy.txt", [&](std::ostream& os) { write_policy_head(os, *a.policy); });
    if (a.return_head || a.policy) {
      detail::write_file(dir / "head_losses.csv", [&](std::ostream& os) {
        os.precision(17);
        os << "step,return_loss,policy_loss\n";
        for (std::size_t i = 0; i < a.policy_losses.size(); ++i) {
          os << i << ',' << (i < a.return_losses.size() ? fmt_num(a.return_losses[i]) : "") << ','
             << fmt_num(a.policy_losses[i]) << '\n';
        }
      });
    }
  });
}

inline TrainedAgent load_agent(const fs::path& dir) {
  return in_stage("io", [&] {
    TrainedAgent a;
    auto meta_in = detail::open_in(dir / "agent.txt");
    KeyValues meta;
    std::string line;
    while (std::getline(meta_in, line)) {
      auto eq = line.find('=');
      if (eq != std::string::npos) meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    int state_dim = -1;
    for (const auto& [k, v] : meta) {
      if (k == "algorithm") a.algorithm = v;
      if (k == "state_dim") state_dim = static_cast<int>(detail::parse_int("state_dim", v));
    }
    if (a.algorithm.empty() || state_dim < 1) throw FormatError(dir.string() + "/agent.txt is incomplete");
    {
      auto in = detail::open_in(dir / "normalizer.txt");
      a.normalizer = read_normalizer(in);
    }
    if (a.algorithm == "irvs" || a.algorithm == "ibc") {
      auto in = detail::open_in(dir / "energy.txt");
      a.energy = read_energy_model(in);
    } else {
      if (a.algorithm == "rvs") {
        auto in = detail::open_in(dir / "return_head.txt");
        a.return_head = read_return_head(in);
      }
      auto in = detail::open_in(dir / "policy.txt");
      a.policy = read_policy_head(in, state_dim);
    }
    return a;
  });
}

// Inference settings that do not touch the trained weights.
struct ActSettings {
  double eta_inv = 0.0;
  LangevinSchedule schedule;
  int chains = 64;
  ChainSelect select = ChainSelect::kArgmin;

  static ActSettings from(const ExperimentConfig& c) {
    return {c.effective_eta(), c.infer_schedule(), c.infer_chains, c.chain_select};
  }
};

// Raw state -> raw action.
inline Vector agent_act(const TrainedAgent& a, const Vector& raw_state, const ActSettings& s, Rng& rng,
                        ChainTrace* trace = nullptr) {
  Vector sn = a.normalizer.state(raw_state);
  Vector an;
  if (a.energy) {
    an = infer(*a.energy, sn, TiltConfig{s.eta_inv, s.select}, s.schedule, s.chains, rng, trace).action;
  } else if (a.policy) {
    an = act(a.return_head ? &*a.return_head : nullptr, *a.policy, sn, s.eta_inv);
  } else {
    throw ArgumentError("agent has no trained model");
  }
  return a.normalizer.action(an, Direction::kInverse);
}

// ---------------------------------------------------------------------------
// Rollout evaluation

struct EpisodeRecord {
  int episode = 0;
  double value = 0.0;  // success (0/1) or episode return
  int goal = -1;
};

struct EvalResult {
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<EpisodeRecord> episodes;
};

struct NavEvalSpec {
  int dim = 2;
  double epsilon = 0.1;
  std::optional<double> delta;
  double success_scale = kNavSuccessScale;
};

// Episode e samples its task from child_rng(seed, e) and gives the policy
// child_rng(mix_seed(seed, 1), e), so every policy sees the same tasks.
template <class Policy>
EvalResult rollout_eval_nav(Policy&& policy, const NavEvalSpec& spec, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ArgumentError("episodes must be >= 1");
  EvalResult r;
  const std::uint64_t policy_seed = mix_seed(seed, 1);
  int wins = 0;
  for (int e = 0; e < episodes; ++e) {
    Rng task_rng = child_rng(seed, e);
    Rng act_rng = child_rng(policy_seed, e);
    NavTask task = nav_sample_task(spec.dim, spec.epsilon, spec.delta, task_rng);
    Vector action = policy(task.state(), act_rng);
    const bool ok = nav_success(task, nav_step(task, action), spec.success_scale);
    wins += ok;
    r.episodes.push_back({e, ok ? 1.0 : 0.0, ok ? task.target() : -1});
  }
  r.metrics.emplace_back("success_rate", static_cast<double>(wins) / episodes);
  return r;
}

template <class Policy>
EvalResult rollout_eval_didactic(Policy&& policy, const DidacticRoom& env, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ArgumentError("episodes must be >= 1");
  EvalResult r;
  const std::uint64_t policy_seed = mix_seed(seed, 1);
  double total = 0.0;
  std::array<int, 5> counts{};
  for (int e = 0; e < episodes; ++e) {
    Rng start_rng = child_rng(seed, e);
    Rng act_rng = child_rng(policy_seed, e);
    auto traj = didactic_rollout(
        env, [&](const Point2& p) { return policy(Vector(p), act_rng)[0]; }, start_rng);
    const double ret = traj.total_reward();
    total += ret;
    ++counts[traj.goal + 1];
    r.episodes.push_back({e, ret, traj.goal});
  }
  const double n = episodes;
  r.metrics.emplace_back("mean_return", total / n);
  for (int g = 0; g < 4; ++g) r.metrics.emplace_back("goal_" + std::to_string(g) + "_rate", counts[g + 1] / n);
  r.metrics.emplace_back("no_goal_rate", counts[0] / n);
  return r;
}

// ---------------------------------------------------------------------------
// Metrics rows

inline constexpr const char* kMetricsHeader = "algorithm,eta_inv,D,epsilon,delta,seed,metric_name,metric_value,wall_time_s";

struct MetricsRow {
  std::string algorithm;
  double eta_inv = 0.0;
  int D = 0;
  std::optional<double> epsilon;
  std::optional<double> delta;
  std::uint64_t seed = 0;
  std::string metric_name;
  double metric_value = 0.0;
  double wall_time_s = 0.0;
};

inline void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  os << r.algorithm << ',' << fmt_num(r.eta_inv) << ',' << r.D << ',' << fmt_opt(r.epsilon) << ','
     << fmt_opt(r.delta) << ',' << r.seed << ',' << r.metric_name << ',' << fmt_num(r.metric_value) << ','
     << fmt_num(r.wall_time_s) << '\n';
}

inline void write_metrics_rows(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) write_metrics_row(os, r);
}

inline void write_metrics_file(const fs::path& p, const std::vector<MetricsRow>& rows) {
  in_stage("io", [&] {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    detail::write_file(p, [&](std::ostream& os) { write_metrics_rows(os, rows); });
  });
}

inline MetricsRow row_stub(const ExperimentConfig& c, std::uint64_t seed) {
  MetricsRow r;
  r.algorithm = c.algorithm;
  r.eta_inv = c.effective_eta();
  r.D = c.is_nav() ? c.dim : 2;
  if (c.is_nav()) {
    r.epsilon = c.epsilon;
    r.delta = c.delta;
  }
  r.seed = seed;
  return r;
}

inline EvalResult evaluate_agent(const TrainedAgent& a, const ExperimentConfig& c, std::uint64_t seed,
                                 ChainTrace* trace = nullptr) {
  return in_stage("eval", [&] {
    const ActSettings s = ActSettings::from(c);
    bool traced = false;
    auto policy = [&](const Vector& state, Rng& rng) {
      ChainTrace* t = trace && !traced ? trace : nullptr;
      traced = traced || t;
      return agent_act(a, state, s, rng, t);
    };
    const std::uint64_t es = stage_seed(seed, Stage::kEval);
    if (c.is_nav()) return rollout_eval_nav(policy, {c.dim, c.epsilon, c.delta, c.success_scale}, c.eval_episodes, es);
    return rollout_eval_didactic(policy, DidacticRoom{}, c.eval_episodes, es);
  });
}

inline std::vector<MetricsRow> to_rows(const EvalResult& r, const ExperimentConfig& c, std::uint64_t seed,
                                       double wall) {
  std::vector<MetricsRow> rows;
  for (const auto& [name, value] : r.metrics) {
    auto row = row_stub(c, seed);
    row.metric_name = name;
    row.metric_value = value;
    row.wall_time_s = c.record_wall_time ? wall : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline fs::path agent_dir(const ExperimentConfig& c, std::uint64_t seed) {
  return resolve_output_dir(c.output_dir) / "agents" /
         (c.algorithm + "-" + hex_hash(training_key(c)) + "-seed" + std::to_string(seed));
}

inline TrainedAgent obtain_agent(const ExperimentConfig& c, std::uint64_t seed) {
  Dataset d = make_experiment_dataset(c, seed);
  TrainedAgent a = train_agent(c, d, seed);
  const auto dir = agent_dir(c, seed);
  save_agent(a, dir);
  in_stage("io", [&] { detail::write_file(dir / "config.txt", [&](std::ostream& os) { os << to_text(c); }); });
  return a;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Dataset -> train -> evaluate for every seed. Artifacts go under the output
// dir; rows come back in seed order.
inline std::vector<MetricsRow> run_experiment(const ExperimentConfig& c) {
  in_stage("config", [&] { c.validate(); });
  std::vector<MetricsRow> rows;
  for (auto seed : c.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainedAgent a = obtain_agent(c, seed);
    auto ev = evaluate_agent(a, c, seed);
    auto r = to_rows(ev, c, seed, seconds_since(t0));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Sweeps

inline const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"eta_inv", "epsilon", "dim", "delta"};
  return axes;
}

struct SweepCell {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  std::string value;
};

// One cell per (value, seed), values outer. Cells that share a training key
// share one trained agent. Rows come back in cell order, so permuting the
// values only permutes rows.
inline std::vector<MetricsRow> sweep(const ExperimentConfig& base, const std::string& axis,
                                     const std::vector<std::string>& values, std::ostream* log = nullptr) {
  in_stage("sweep", [&] {
    base.validate();
    if (std::find(sweep_axes().begin(), sweep_axes().end(), axis) == sweep_axes().end()) {
      throw ArgumentError("sweep axis must be eta_inv, epsilon, dim or delta, got '" + axis + "'");
    }
    if (values.empty()) throw ArgumentError("sweep needs at least one value");
  });
  std::vector<SweepCell> cells;
  for (const auto& v : values) {
    ExperimentConfig c = base;
    in_stage("config", [&] {
      config_field(axis).set(c, v);
      c.validate();
    });
    for (auto seed : base.seeds) cells.push_back({c, seed, v});
  }
  std::map<std::string, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto key = training_key(cells[i].cfg) + "seed=" + std::to_string(cells[i].seed);
    auto [it, fresh] = group_of.emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }

  std::vector<std::vector<MetricsRow>> out(cells.size());
  std::mutex log_mu;
  auto note = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mu);
    *log << msg << std::endl;
  };
  auto fail_rows = [&](std::size_t i, const std::string& what) {
    auto row = row_stub(cells[i].cfg, cells[i].seed);
    row.metric_name = "error";
    row.metric_value = std::numeric_limits<double>::quiet_NaN();
    out[i] = {row};
    note("cell " + axis + "=" + cells[i].value + " seed=" + std::to_string(cells[i].seed) + " failed: " + what);
  };
  auto run_group = [&](const std::vector<std::size_t>& g) {
    const auto& first = cells[g.front()];
    std::optional<TrainedAgent> agent;
    double train_time = 0.0;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      agent = obtain_agent(first.cfg, first.seed);
      train_time = seconds_since(t0);
    } catch (const std::exception& e) {
      for (auto i : g) fail_rows(i, e.what());
      return;
    }
    for (auto i : g) {
      try {
        const auto t0 = std::chrono::steady_clock::now();
        auto ev = evaluate_agent(*agent, cells[i].cfg, cells[i].seed);
        out[i] = to_rows(ev, cells[i].cfg, cells[i].seed, train_time + seconds_since(t0));
        note("cell " + axis + "=" + cells[i].value + " seed=" + std::to_string(cells[i].seed) + " done");
      } catch (const std::exception& e) {
        fail_rows(i, e.what());
      }
    }
  };

  const int jobs = std::min<int>(base.jobs, static_cast<int>(groups.size()));
  if (jobs <= 1) {
    for (const auto& g : groups) run_group(g);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back([&] {
        for (std::size_t k; (k = next++) < groups.size();) run_group(groups[k]);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::vector<MetricsRow> rows;
  for (auto& r : out) rows.insert(rows.end(), r.begin(), r.end());
  return rows;
}

}  // namespace irvs
