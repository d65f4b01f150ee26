// irvs: gen-data / train / eval / sweep / report.
//
// Every config key is also a flag (--eta_inv or --eta-inv). Values from
// --config FILE are applied first and flags override them.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "irvs/harness.hpp"
#include "irvs/report.hpp"

using namespace irvs;

namespace {

int exit_code(const std::string& stage) {
  static const std::map<std::string, int> codes{{"config", 2}, {"dataset", 3}, {"train", 4}, {"eval", 5},
                                                {"sweep", 6},  {"report", 7},  {"io", 8}};
  auto it = codes.find(stage);
  return it == codes.end() ? 1 : it->second;
}

std::string dashed(std::string s) {
  for (auto& c : s)
    if (c == '_') c = '-';
  return s;
}

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    for (const auto& f : config_fields()) {
      std::string names = "--" + f.name;
      if (dashed(f.name) != f.name) names += ",--" + dashed(f.name);
      app->add_option(names, values[f.name], f.help);
    }
  }

  ExperimentConfig build(CLI::App* app) const {
    return in_stage("config", [&] {
      KeyValues file = config_path.empty() ? KeyValues{} : read_config_file(config_path);
      KeyValues cli;
      for (const auto& f : config_fields()) {
        if (app->count("--" + f.name) > 0) cli.emplace_back(f.name, values.at(f.name));
      }
      return build_config(file, cli);
    });
  }
};

void print_rows(const std::vector<MetricsRow>& rows) {
  for (const auto& r : rows) {
    std::cout << r.algorithm << " seed=" << r.seed << " eta_inv=" << fmt_num(r.eta_inv) << " D=" << r.D
              << " epsilon=" << fmt_opt(r.epsilon) << " delta=" << fmt_opt(r.delta) << "  " << r.metric_name << " = "
              << fmt_num(r.metric_value) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Implicit return-conditioned policies on synthetic tasks"};
  app.require_subcommand(1);

  ConfigFlags gen_flags, train_flags, eval_flags, sweep_flags, report_flags;

  auto* gen = app.add_subcommand("gen-data", "generate and save a dataset");
  gen_flags.attach(gen);
  std::string gen_out;
  std::int64_t gen_seed = -1;
  gen->add_option("--out", gen_out, "dataset file")->required();
  gen->add_option("--seed", gen_seed, "experiment seed (default: first of seeds)");

  auto* tr = app.add_subcommand("train", "train one agent and save its checkpoints");
  train_flags.attach(tr);
  std::int64_t train_seed = -1;
  std::string train_dir;
  tr->add_option("--seed", train_seed, "experiment seed (default: first of seeds)");
  tr->add_option("--agent-dir", train_dir, "checkpoint directory (default under output_dir/agents)");

  auto* ev = app.add_subcommand("eval", "evaluate a saved agent");
  eval_flags.attach(ev);
  std::string eval_agent, eval_metrics, eval_trace, eval_episodes_csv;
  std::int64_t eval_seed = -1;
  ev->add_option("--agent", eval_agent, "checkpoint directory from train")->required();
  ev->add_option("--seed", eval_seed, "evaluation seed (default: first of seeds)");
  ev->add_option("--metrics", eval_metrics, "metrics CSV (default output_dir/metrics.csv)");
  ev->add_option("--trace-dump", eval_trace, "write the Langevin chains of the first inference call as CSV");
  ev->add_option("--episodes-csv", eval_episodes_csv, "write per-episode records");

  auto* sw = app.add_subcommand("sweep", "run the pipeline over one axis (or once without --axis)");
  sweep_flags.attach(sw);
  std::string sweep_axis, sweep_values, sweep_metrics;
  sw->add_option("--axis", sweep_axis, "eta_inv | epsilon | dim | delta");
  sw->add_option("--values", sweep_values, "comma separated values for the axis");
  sw->add_option("--metrics", sweep_metrics, "metrics CSV (default output_dir/metrics.csv)");

  auto* rep = app.add_subcommand("report", "summarize metrics CSVs and plot them");
  report_flags.attach(rep);
  std::vector<std::string> report_inputs;
  std::string report_out;
  rep->add_option("csv", report_inputs, "metrics CSV files");
  rep->add_option("--out", report_out, "report directory (default output_dir/report)");

  CLI11_PARSE(app, argc, argv);

  auto pick_seed = [](std::int64_t s, const ExperimentConfig& c) {
    return s >= 0 ? static_cast<std::uint64_t>(s) : c.seeds.front();
  };
  auto default_metrics = [](const std::string& given, const ExperimentConfig& c) {
    return given.empty() ? resolve_output_dir(c.output_dir) / "metrics.csv" : fs::path(given);
  };

  try {
    if (gen->parsed()) {
      auto cfg = gen_flags.build(gen);
      Dataset d = make_experiment_dataset(cfg, pick_seed(gen_seed, cfg));
      in_stage("io", [&] {
        fs::path p(gen_out);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        save(d, gen_out);
      });
      std::cout << "wrote " << d.size() << " transitions to " << gen_out << '\n';
    } else if (tr->parsed()) {
      auto cfg = train_flags.build(tr);
      const auto seed = pick_seed(train_seed, cfg);
      Dataset d = make_experiment_dataset(cfg, seed);
      TrainedAgent a = train_agent(cfg, d, seed);
      fs::path dir = train_dir.empty() ? agent_dir(cfg, seed) : fs::path(train_dir);
      save_agent(a, dir);
      in_stage("io", [&] { detail::write_file(dir / "config.txt", [&](std::ostream& os) { os << to_text(cfg); }); });
      std::cout << dir.string() << '\n';
    } else if (ev->parsed()) {
      auto cfg = eval_flags.build(ev);
      TrainedAgent a = load_agent(eval_agent);
      if (!(cfg.algorithm == "ibc" && a.algorithm == "irvs")) cfg.algorithm = a.algorithm;
      const auto seed = pick_seed(eval_seed, cfg);
      ChainTrace trace;
      auto res = evaluate_agent(a, cfg, seed, eval_trace.empty() || !a.energy ? nullptr : &trace);
      auto rows = to_rows(res, cfg, seed, 0.0);
      write_metrics_file(default_metrics(eval_metrics, cfg), rows);
      if (!eval_trace.empty()) {
        in_stage("io", [&] { detail::write_file(eval_trace, [&](std::ostream& os) { write_trace_csv(os, trace); }); });
      }
      if (!eval_episodes_csv.empty()) {
        in_stage("io", [&] {
          detail::write_file(eval_episodes_csv, [&](std::ostream& os) {
            os << "episode,value,goal\n";
            for (const auto& e : res.episodes) os << e.episode << ',' << fmt_num(e.value) << ',' << e.goal << '\n';
          });
        });
      }
      print_rows(rows);
    } else if (sw->parsed()) {
      auto cfg = sweep_flags.build(sw);
      std::vector<MetricsRow> rows;
      if (sweep_axis.empty()) {
        if (!sweep_values.empty()) throw StageError("sweep", "--values needs --axis");
        rows = run_experiment(cfg);
      } else {
        rows = sweep(cfg, sweep_axis, detail::split(sweep_values, ','), &std::cerr);
      }
      write_metrics_file(default_metrics(sweep_metrics, cfg), rows);
      print_rows(rows);
    } else if (rep->parsed()) {
      auto cfg = report_flags.build(rep);
      fs::path out = report_out.empty() ? resolve_output_dir(cfg.output_dir) / "report" : fs::path(report_out);
      auto files = report(report_inputs, out);
      std::ifstream in(files.summary);
      std::cout << in.rdbuf();
      for (const auto& p : files.plots) std::cout << "plot: " << p.string() << '\n';
    }
  } catch (const StageError& e) {
    std::cerr << "irvs: error [" << e.stage << "]: " << e.what() << '\n';
    return exit_code(e.stage);
  } catch (const std::exception& e) {
    std::cerr << "irvs: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
