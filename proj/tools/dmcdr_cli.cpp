#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmcdr/dmcdr.hpp"

namespace fs = std::filesystem;
using namespace dmcdr;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::string variant;
  std::uint64_t seed = 0;
  double fraction = 0.0;
  bool has_seed = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value run config");
  cmd->add_option("--out", c.out, "output directory (overrides config 'out')");
  cmd->add_option("--variant", c.variant, "dmcdr, wo_tf, wo_gs, wo_dm or variant1..6");
  cmd->add_option("--seed", c.seed, "RNG seed (overrides config 'seed')");
  cmd->add_option("--fraction", c.fraction, "cold-start test fraction, e.g. 0.2, 0.5, 0.8");
}

RunConfig resolve(const Common& c, CLI::App* cmd) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (!c.out.empty()) rc.out_dir = c.out;
  if (!c.variant.empty()) rc.pipeline = c.variant;
  if (cmd->count("--seed")) rc.train.seed = c.seed;
  if (cmd->count("--fraction")) rc.fraction = c.fraction;
  validate(rc);
  for (const auto& w : lint(rc.pipeline_spec(), rc.train.schedule.eta)) {
    std::cerr << "warning: " << w << '\n';
  }
  return rc;
}

std::ofstream open_out(const fs::path& path) { return detail::open_output(path); }

void echo_config(const RunConfig& rc) {
  auto out = open_out(fs::path(rc.out_dir) / "config.txt");
  write_config(out, rc);
}

int cmd_ingest(const std::string& source, const std::string& target, const std::string& out_dir) {
  DomainData src, tgt;
  try {
    src = load_ratings(source);
  } catch (const Error& e) {
    throw Error(source + ": " + e.what());
  }
  try {
    tgt = load_ratings(target);
  } catch (const Error& e) {
    throw Error(target + ": " + e.what());
  }
  const ScenarioStats st = scenario_stats(src, tgt);
  std::ostringstream tsv;
  tsv << "domain\tusers\titems\tratings\toverlap\n"
      << "source\t" << st.source.users << '\t' << st.source.items << '\t' << st.source.ratings << '\t'
      << st.overlap << '\n'
      << "target\t" << st.target.users << '\t' << st.target.items << '\t' << st.target.ratings << '\t'
      << st.overlap << '\n';
  std::cout << tsv.str();
  if (st.overlap == 0) std::cerr << "warning: the two domains share no users\n";
  auto out = open_out(fs::path(out_dir) / "stats.tsv");
  out << tsv.str();
  return 0;
}

int cmd_train(const RunConfig& rc) {
  const Scenario s = make_scenario(rc);
  std::cerr << "training " << rc.pipeline << " on " << s.train.examples.size() << " ratings from "
            << s.split.overlap_train.size() << " users\n";
  train_to_directory(rc, s, [](const EpochLoss& e) {
    std::cerr << "epoch " << e.epoch << "  L_rec " << e.rec << "  L_diff " << e.diff << '\n';
  });
  return 0;
}

void write_eval(const RunConfig& rc, const EvalReport& r) {
  auto report = open_out(fs::path(rc.out_dir) / "report.tsv");
  write_report_tsv(report, r);
  auto users = open_out(fs::path(rc.out_dir) / "per_user.tsv");
  write_per_user_tsv(users, r);
  write_summary(std::cout, r);
}

int cmd_eval(const RunConfig& rc, const std::string& checkpoint) {
  const auto params = load_checkpoint<float>(checkpoint);
  if (params.config().pipeline.name != rc.pipeline_spec().name) {
    std::cerr << "note: checkpoint pipeline is " << params.config().pipeline.name << '\n';
  }
  Scenario s = make_scenario(rc);
  write_eval(rc, evaluate_model(rc, s, params));
  return 0;
}

int cmd_schedule_dump(const ScheduleParams& sp, const std::string& out_path) {
  const Schedule s = build_schedule(sp);
  std::ostringstream tsv;
  tsv.precision(17);
  tsv << "t\tbeta\talpha_bar\tbeta_tilde\n";
  for (int t = 1; t <= s.T(); ++t) {
    tsv << t << '\t' << s.beta(t) << '\t' << s.alpha_bar(t) << '\t' << s.beta_tilde(t) << '\n';
  }
  if (out_path.empty()) {
    std::cout << tsv.str();
  } else {
    auto out = open_out(out_path);
    out << tsv.str();
  }
  return 0;
}

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("--sweep-values is empty");
  return out;
}

int cmd_sweep(RunConfig rc, const std::string& axis, const std::string& values) {
  const std::vector<std::string> vals = split_values(values);
  const bool inference_axis = axis == "T_prime" || axis == "omega";
  if (!inference_axis && axis != "eta" && axis != "T" && axis != "history_len") {
    throw ConfigError("unknown sweep axis '" + axis + "' (T_prime, omega, eta, T, history_len)");
  }
  const std::string key = axis == "history_len" ? "max_history_len" : axis;
  auto with_value = [&](const std::string& v) {
    std::istringstream in(key + " = " + v + "\n");
    RunConfig c = parse_config(in, rc);
    validate(c);
    return c;
  };
  for (const auto& v : vals) with_value(v);  // fail early on any bad value

  std::ostringstream tsv;
  tsv.precision(10);
  tsv << axis << "\tmae\trmse\tn\n";
  if (inference_axis) {
    Scenario s = make_scenario(rc);
    const auto params = train_model(rc, s);
    for (const auto& v : vals) {
      const EvalReport r = evaluate_model(with_value(v), s, params);
      tsv << v << '\t' << r.mae << '\t' << r.rmse << '\t' << r.n_predictions << '\n';
    }
  } else {
    for (const auto& v : vals) {
      const RunConfig c = with_value(v);
      if (axis == "T" && c.infer.T_prime > c.train.schedule.T) {
        throw ConfigError("T_prime exceeds swept T = " + v);
      }
      Scenario s = make_scenario(c);
      const RunResult r = run_experiment(c, s);
      tsv << v << '\t' << r.report.mae << '\t' << r.report.rmse << '\t' << r.report.n_predictions
          << '\n';
    }
  }
  std::cout << tsv.str();
  echo_config(rc);
  auto out = open_out(fs::path(rc.out_dir) / ("sweep_" + axis + ".tsv"));
  out << tsv.str();
  return 0;
}

int cmd_variant_bench(RunConfig rc) {
  Scenario s = make_scenario(rc);
  std::ostringstream tsv;
  tsv.precision(10);
  tsv << "variant\tmae\trmse\n";
  for (int id = 1; id <= 6; ++id) {
    rc.pipeline = "variant" + std::to_string(id);
    const RunResult r = run_experiment(rc, s);
    tsv << id << '\t' << r.report.mae << '\t' << r.report.rmse << '\n';
    std::cerr << "variant " << id << " done\n";
  }
  std::cout << tsv.str();
  auto out = open_out(fs::path(rc.out_dir) / "variants.tsv");
  out << tsv.str();
  return 0;
}

int cmd_synth(const RunConfig& rc) {
  SyntheticData d = make_synthetic(rc.synth);
  auto src = open_out(fs::path(rc.out_dir) / "source.tsv");
  write_ratings(src, d.source);
  auto tgt = open_out(fs::path(rc.out_dir) / "target.tsv");
  write_ratings(tgt, d.target);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-guided diffusion for cold-start cross-domain recommendation"};
  app.require_subcommand(1);

  std::string ingest_src, ingest_tgt, ingest_out = ".";
  auto* ingest = app.add_subcommand("ingest", "summarize a source/target ratings pair");
  ingest->add_option("source", ingest_src, "source-domain ratings TSV")->required();
  ingest->add_option("target", ingest_tgt, "target-domain ratings TSV")->required();
  ingest->add_option("--out", ingest_out, "directory for stats.tsv");

  Common train_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint and loss.tsv");
  add_common(train_cmd, train_opts);

  Common eval_opts;
  std::string checkpoint;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the cold-start users");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint manifest")->required();
  double omega = 0.0;
  int t_prime = 0;
  eval_cmd->add_option("--omega", omega, "guidance strength");
  eval_cmd->add_option("--T-prime", t_prime, "reverse steps at inference (default: all T)");

  ScheduleParams sp;
  std::string sched_out;
  auto* sched = app.add_subcommand("schedule-dump", "write t, beta, alpha_bar, beta_tilde");
  sched->add_option("--T", sp.T);
  sched->add_option("--eta", sp.eta);
  sched->add_option("--alpha-min", sp.alpha_min);
  sched->add_option("--alpha-max", sp.alpha_max);
  sched->add_option("--out", sched_out, "output file (default stdout)");

  Common sweep_opts;
  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "evaluate over a grid of one hyper-parameter");
  add_common(sweep, sweep_opts);
  sweep->add_option("--sweep-axis", axis, "T_prime, omega, eta, T or history_len")->required();
  sweep->add_option("--sweep-values", values, "comma-separated values")->required();

  Common bench_opts;
  auto* bench = app.add_subcommand("variant-bench", "train and evaluate comparison variants 1..6");
  add_common(bench, bench_opts);

  Common synth_opts;
  auto* synth = app.add_subcommand("synth", "write a synthetic source/target pair");
  add_common(synth, synth_opts);

  CLI11_PARSE(app, argc, argv);
  try {
    if (ingest->parsed()) return cmd_ingest(ingest_src, ingest_tgt, ingest_out);
    if (sched->parsed()) {
      validate(sp);
      return cmd_schedule_dump(sp, sched_out);
    }
    if (train_cmd->parsed()) return cmd_train(resolve(train_opts, train_cmd));
    if (eval_cmd->parsed()) {
      RunConfig rc = resolve(eval_opts, eval_cmd);
      if (eval_cmd->count("--omega")) rc.infer.omega = omega;
      if (eval_cmd->count("--T-prime")) rc.infer.T_prime = t_prime;
      validate(rc);
      return cmd_eval(rc, checkpoint);
    }
    if (sweep->parsed()) return cmd_sweep(resolve(sweep_opts, sweep), axis, values);
    if (bench->parsed()) return cmd_variant_bench(resolve(bench_opts, bench));
    if (synth->parsed()) {
      RunConfig rc = synth_opts.config.empty() ? RunConfig{} : load_config(synth_opts.config);
      if (!synth_opts.out.empty()) rc.out_dir = synth_opts.out;
      if (synth->count("--seed")) rc.synth.seed = synth_opts.seed;
      return cmd_synth(rc);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
