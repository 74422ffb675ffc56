#pragma once

// End-to-end experiment plumbing shared by the command-line tool and tests.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmcdr/config.hpp"
#include "dmcdr/data.hpp"
#include "dmcdr/eval.hpp"
#include "dmcdr/params.hpp"
#include "dmcdr/schedule.hpp"
#include "dmcdr/synthetic.hpp"
#include "dmcdr/trainer.hpp"

namespace dmcdr {

struct Scenario {
  DomainData source;
  DomainData target;
  ColdStartSplit split;
  TrainingSet train;
  std::vector<TestCase> test;
};

inline std::pair<DomainData, DomainData> load_domains(const RunConfig& c) {
  if (c.synthetic) {
    SyntheticData s = make_synthetic(c.synth);
    return {std::move(s.source), std::move(s.target)};
  }
  return {load_ratings(c.source_path), load_ratings(c.target_path)};
}

// Builds the split and the train/test views. Training examples are gathered
// before any test-user target record is read.
inline Scenario make_scenario(DomainData source, DomainData target, double fraction,
                              std::uint64_t seed, int max_history_len) {
  Scenario s{std::move(source), std::move(target), {}, {}, {}};
  s.split = split_cold_start(s.source, s.target, fraction, seed);
  s.train = build_training_set(s.source, s.target, s.split, max_history_len);
  s.test = build_test_cases(s.source, s.target, s.split, max_history_len);
  return s;
}

inline Scenario make_scenario(const RunConfig& c) {
  auto [src, tgt] = load_domains(c);
  return make_scenario(std::move(src), std::move(tgt), c.fraction, c.train.seed,
                       c.train.max_history_len);
}

inline ModelConfig model_config(const RunConfig& c, const Scenario& s) {
  return model_config(c.train, s.source.num_users(), s.source.num_items(), s.target.num_items(),
                      c.pipeline_spec());
}

struct RunResult {
  ModelParams<float> params;
  std::vector<EpochLoss> losses;
  EvalReport report;
};

inline ModelParams<float> train_model(const RunConfig& c, const Scenario& s,
                                      std::vector<EpochLoss>* losses = nullptr,
                                      const EpochCallback& on_epoch = {}) {
  const Schedule sched = build_schedule(c.train.schedule);
  auto init = init_params<float>(model_config(c, s), c.train.seed, c.train.init_scale);
  auto result = train(s.train, std::move(init), c.train, sched, on_epoch);
  if (losses) *losses = std::move(result.history);
  return std::move(result.params);
}

inline EvalReport evaluate_model(const RunConfig& c, const Scenario& s,
                                 const ModelParams<float>& params) {
  const Schedule sched = build_schedule(c.train.schedule);
  InferenceConfig ic = c.infer;
  ic.seed = c.train.seed;
  return evaluate(params, sched, s.test, ic);
}

inline RunResult run_experiment(const RunConfig& c, const Scenario& s) {
  validate(c);
  std::vector<EpochLoss> losses;
  RunResult r{train_model(c, s, &losses), std::move(losses), {}};
  r.report = evaluate_model(c, s, r.params);
  return r;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  return out;
}

}  // namespace detail

// Train on `s` and write config.txt, split.tsv, checkpoint.txt(.bin) and
// loss.tsv into c.out_dir.
inline ModelParams<float> train_to_directory(const RunConfig& c, const Scenario& s,
                                             const EpochCallback& on_epoch = {}) {
  const std::filesystem::path dir(c.out_dir);
  {
    auto out = detail::open_output(dir / "config.txt");
    write_config(out, c);
    auto split = detail::open_output(dir / "split.tsv");
    write_split_manifest(split, s.split);
  }
  std::vector<EpochLoss> losses;
  auto params = train_model(c, s, &losses, on_epoch);
  save_checkpoint(params, (dir / "checkpoint.txt").string());
  auto loss = detail::open_output(dir / "loss.tsv");
  write_loss_tsv(loss, losses);
  return params;
}

}  // namespace dmcdr
