#pragma once

// Flat `key = value` run configuration. Parsing collects every problem before
// failing; write_config emits the canonical normalized form.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <locale>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dmcdr/error.hpp"
#include "dmcdr/eval.hpp"
#include "dmcdr/synthetic.hpp"
#include "dmcdr/trainer.hpp"
#include "dmcdr/variants.hpp"

namespace dmcdr {

struct RunConfig {
  TrainConfig train;
  InferenceConfig infer;
  std::string source_path;
  std::string target_path;
  double fraction = 0.2;  // cold-start test share of overlapping users
  std::string pipeline = "dmcdr";
  std::string out_dir = "out";
  bool synthetic = false;  // generate data instead of reading the paths
  SyntheticConfig synth;

  PipelineSpec pipeline_spec() const { return pipeline_by_name(pipeline); }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
bool parse_value(const std::string& s, T& out) {
  if constexpr (std::is_same_v<T, std::string>) {
    out = s;
    return true;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1") out = true;
    else if (s == "false" || s == "0") out = false;
    else return false;
    return true;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::istringstream in(s);
    in.imbue(std::locale::classic());
    in >> out;
    return in && in.peek() == std::char_traits<char>::eof();
  } else {
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
  }
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    out.precision(17);
    out << v;
    return out.str();
  } else {
    return std::to_string(v);
  }
}

struct Field {
  std::string key;
  std::function<bool(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field field(std::string key, T RunConfig::*outer) {
  return {std::move(key), [outer](RunConfig& c, const std::string& v) { return parse_value(v, c.*outer); },
          [outer](const RunConfig& c) { return format_value(c.*outer); }};
}

template <class Member, class T>
Field field(std::string key, Member RunConfig::*outer, T Member::*inner) {
  return {std::move(key),
          [outer, inner](RunConfig& c, const std::string& v) { return parse_value(v, (c.*outer).*inner); },
          [outer, inner](const RunConfig& c) { return format_value((c.*outer).*inner); }};
}

inline Field schedule_field(std::string key, double ScheduleParams::*m) {
  return {std::move(key),
          [m](RunConfig& c, const std::string& v) { return parse_value(v, c.train.schedule.*m); },
          [m](const RunConfig& c) { return format_value(c.train.schedule.*m); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(field("source", &RunConfig::source_path));
    f.push_back(field("target", &RunConfig::target_path));
    f.push_back(field("synthetic", &RunConfig::synthetic));
    f.push_back(field("out", &RunConfig::out_dir));
    f.push_back(field("pipeline", &RunConfig::pipeline));
    f.push_back(field("fraction", &RunConfig::fraction));
    f.push_back(field("seed", &RunConfig::train, &TrainConfig::seed));
    f.push_back(field("batch_size", &RunConfig::train, &TrainConfig::batch_size));
    f.push_back(field("learning_rate", &RunConfig::train, &TrainConfig::learning_rate));
    f.push_back(field("epochs", &RunConfig::train, &TrainConfig::epochs));
    f.push_back(field("lambda", &RunConfig::train, &TrainConfig::lambda));
    f.push_back(field("p_uncond", &RunConfig::train, &TrainConfig::p_uncond));
    f.push_back({"T",
                 [](RunConfig& c, const std::string& v) { return parse_value(v, c.train.schedule.T); },
                 [](const RunConfig& c) { return format_value(c.train.schedule.T); }});
    f.push_back(schedule_field("eta", &ScheduleParams::eta));
    f.push_back(schedule_field("alpha_min", &ScheduleParams::alpha_min));
    f.push_back(schedule_field("alpha_max", &ScheduleParams::alpha_max));
    f.push_back(field("d1", &RunConfig::train, &TrainConfig::d1));
    f.push_back(field("max_history_len", &RunConfig::train, &TrainConfig::max_history_len));
    f.push_back({"loss_weighting",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "simplified") c.train.loss_weighting = LossWeighting::Simplified;
                   else if (v == "posterior_weighted") c.train.loss_weighting = LossWeighting::PosteriorWeighted;
                   else return false;
                   return true;
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.loss_weighting == LossWeighting::Simplified
                                          ? "simplified"
                                          : "posterior_weighted");
                 }});
    f.push_back(field("init_scale", &RunConfig::train, &TrainConfig::init_scale));
    f.push_back(field("encoder_layers", &RunConfig::train, &TrainConfig::encoder_layers));
    f.push_back(field("heads", &RunConfig::train, &TrainConfig::heads));
    f.push_back(field("ff_dim", &RunConfig::train, &TrainConfig::ff_dim));
    f.push_back(field("mlp_layers", &RunConfig::train, &TrainConfig::mlp_layers));
    f.push_back(field("hidden", &RunConfig::train, &TrainConfig::hidden));
    f.push_back(field("lazy_embeddings", &RunConfig::train, &TrainConfig::lazy_embeddings));
    f.push_back(field("encoder_lr_scale", &RunConfig::train, &TrainConfig::encoder_lr_scale));
    f.push_back(field("omega", &RunConfig::infer, &InferenceConfig::omega));
    f.push_back({"T_prime",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "T") {
                     c.infer.T_prime = kFullRollout;
                     return true;
                   }
                   return parse_value(v, c.infer.T_prime) && c.infer.T_prime >= 0;
                 },
                 [](const RunConfig& c) {
                   return c.infer.T_prime == kFullRollout ? std::string("T") : format_value(c.infer.T_prime);
                 }});
    f.push_back(field("synth.users", &RunConfig::synth, &SyntheticConfig::users));
    f.push_back(field("synth.latent_dim", &RunConfig::synth, &SyntheticConfig::latent_dim));
    f.push_back(field("synth.source_items", &RunConfig::synth, &SyntheticConfig::source_items));
    f.push_back(field("synth.target_items", &RunConfig::synth, &SyntheticConfig::target_items));
    f.push_back(field("synth.source_per_user", &RunConfig::synth, &SyntheticConfig::source_per_user));
    f.push_back(field("synth.target_per_user", &RunConfig::synth, &SyntheticConfig::target_per_user));
    f.push_back(field("synth.rating_offset", &RunConfig::synth, &SyntheticConfig::rating_offset));
    f.push_back(field("synth.rating_scale", &RunConfig::synth, &SyntheticConfig::rating_scale));
    f.push_back(field("synth.noise_std", &RunConfig::synth, &SyntheticConfig::noise_std));
    f.push_back(field("synth.affinity", &RunConfig::synth, &SyntheticConfig::affinity));
    f.push_back(field("synth.seed", &RunConfig::synth, &SyntheticConfig::seed));
    return f;
  }();
  return all;
}

}  // namespace config_detail

// Checks cross-field constraints, reporting every offending key at once.
inline void validate(const RunConfig& c) {
  std::vector<std::string> bad;
  const auto& t = c.train;
  if (t.batch_size < 1) bad.push_back("batch_size (must be >= 1)");
  if (!(t.learning_rate >= 0.0)) bad.push_back("learning_rate (must be >= 0)");
  if (t.epochs < 0) bad.push_back("epochs (must be >= 0)");
  if (!(t.lambda >= 0.0 && t.lambda <= 1.0)) bad.push_back("lambda (must lie in [0, 1])");
  if (!(t.p_uncond >= 0.0 && t.p_uncond <= 1.0)) bad.push_back("p_uncond (must lie in [0, 1])");
  if (t.schedule.T < 1) bad.push_back("T (must be >= 1)");
  if (!(t.schedule.eta > 0.0 && t.schedule.eta <= 1.0)) bad.push_back("eta (must lie in (0, 1])");
  if (!(t.schedule.alpha_min > 0.0)) bad.push_back("alpha_min (must be > 0)");
  if (!(t.schedule.alpha_max >= t.schedule.alpha_min)) bad.push_back("alpha_max (must be >= alpha_min)");
  if (t.d1 < 1) bad.push_back("d1 (must be >= 1)");
  if (t.max_history_len < 1) bad.push_back("max_history_len (must be >= 1)");
  if (!(t.init_scale >= 0.0)) bad.push_back("init_scale (must be >= 0)");
  if (!(t.encoder_lr_scale >= 0.0)) bad.push_back("encoder_lr_scale (must be >= 0)");
  if (t.encoder_layers < 1 || t.encoder_layers > 6) bad.push_back("encoder_layers (must lie in 1..6)");
  if (t.heads < 1 || t.d1 % t.heads != 0) bad.push_back("heads (must divide d1)");
  if (t.ff_dim < 1) bad.push_back("ff_dim (must be >= 1)");
  if (t.mlp_layers < 1) bad.push_back("mlp_layers (must be >= 1)");
  if (t.hidden < 1) bad.push_back("hidden (must be >= 1)");
  if (!(c.infer.omega >= 0.0)) bad.push_back("omega (must be >= 0)");
  if (c.infer.T_prime != kFullRollout && (c.infer.T_prime < 0 || c.infer.T_prime > t.schedule.T)) {
    bad.push_back("T_prime (must lie in [0, T] or be 'T')");
  }
  if (!(c.fraction > 0.0 && c.fraction < 1.0)) bad.push_back("fraction (must lie in (0, 1))");
  try {
    pipeline_by_name(c.pipeline);
  } catch (const ConfigError&) {
    bad.push_back("pipeline (unknown name '" + c.pipeline + "')");
  }
  if (!c.synthetic && (c.source_path.empty() || c.target_path.empty())) {
    bad.push_back("source/target (paths required unless synthetic = true)");
  }
  if (!bad.empty()) {
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ConfigError(msg);
  }
}

// Applies `key = value` lines on top of `base`. Blank lines and lines starting
// with '#' are ignored.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  std::vector<std::string> problems;
  std::string line;
  int line_no = 0;
  const auto& fs = config_detail::fields();
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = config_detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      problems.push_back("line " + std::to_string(line_no) + ": expected 'key = value'");
      continue;
    }
    const std::string key = config_detail::trim(std::string_view(s).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(s).substr(eq + 1));
    const auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.key == key; });
    if (it == fs.end()) {
      problems.push_back("unknown key '" + key + "'");
    } else if (!it->set(base, value)) {
      problems.push_back("bad value for '" + key + "': '" + value + "'");
    }
  }
  if (!problems.empty()) {
    std::string msg = "config errors:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  return parse_config(in, std::move(base));
}

// Canonical form: every key, fixed order, full precision.
inline void write_config(std::ostream& out, const RunConfig& c) {
  for (const auto& f : config_detail::fields()) out << f.key << " = " << f.get(c) << '\n';
}

inline std::string to_string(const RunConfig& c) {
  std::ostringstream out;
  write_config(out, c);
  return out.str();
}

}  // namespace dmcdr
