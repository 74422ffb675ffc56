#pragma once

// Training: per-example corruption at a uniformly sampled step, one-shot u0
// prediction, and the joint objective L = L_rec + lambda * L_diff optimized
// with bias-corrected adaptive moments.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dmcdr/autograd.hpp"
#include "dmcdr/data.hpp"
#include "dmcdr/diffusion.hpp"
#include "dmcdr/encoder.hpp"
#include "dmcdr/error.hpp"
#include "dmcdr/params.hpp"
#include "dmcdr/pipeline.hpp"
#include "dmcdr/rng.hpp"
#include "dmcdr/schedule.hpp"

namespace dmcdr {

enum class LossWeighting { Simplified, PosteriorWeighted };

struct TrainConfig {
  int batch_size = 128;
  double learning_rate = 0.01;
  int epochs = 10;
  double lambda = 0.01;
  double p_uncond = 0.1;
  ScheduleParams schedule;
  int d1 = 64;
  int max_history_len = 20;
  LossWeighting loss_weighting = LossWeighting::Simplified;
  std::uint64_t seed = 0;
  double init_scale = 0.1;
  int encoder_layers = 2;
  int heads = 1;
  int ff_dim = 64;
  int mlp_layers = 3;
  int hidden = 64;
  bool lazy_embeddings = false;  // row-sparse optimizer updates for embedding tables
  double encoder_lr_scale = 1.0;  // step-size multiplier for the preference encoder
};

inline void validate(const TrainConfig& c) {
  std::string bad;
  if (c.batch_size < 1) bad += " batch_size must be >= 1;";
  if (c.epochs < 0) bad += " epochs must be >= 0;";
  if (!(c.learning_rate >= 0.0)) bad += " learning_rate must be >= 0;";
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) bad += " lambda must lie in [0, 1];";
  if (!(c.p_uncond >= 0.0 && c.p_uncond <= 1.0)) bad += " p_uncond must lie in [0, 1];";
  if (!(c.encoder_lr_scale >= 0.0)) bad += " encoder_lr_scale must be >= 0;";
  if (!bad.empty()) throw ConfigError("invalid training config:" + bad);
  validate(c.schedule);
}

inline ModelConfig model_config(const TrainConfig& c, int n_users, int n_src_items,
                                int n_tgt_items, PipelineSpec pipeline) {
  ModelConfig m;
  m.n_users = n_users;
  m.n_src_items = n_src_items;
  m.n_tgt_items = n_tgt_items;
  m.d1 = c.d1;
  m.max_history_len = c.max_history_len;
  m.encoder_layers = c.encoder_layers;
  m.heads = c.heads;
  m.ff_dim = c.ff_dim;
  m.mlp_layers = c.mlp_layers;
  m.hidden = c.hidden;
  m.pipeline = std::move(pipeline);
  return m;
}

// Mean squared error.
inline double rec_loss(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty() || pred.size() != truth.size()) {
    throw ConfigError("rec_loss needs equal, non-zero lengths");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    sum += e * e;
  }
  return sum / static_cast<double>(pred.size());
}

// Per-step weight on ||u0 - u0_hat||^2. The posterior-weighted form is
// abar_{t-1} / (2 max(beta_tilde_t, floor)) with floor = beta_tilde_2, since
// beta_tilde_1 = 0.
inline double diffusion_weight(int t, const Schedule& s, LossWeighting w) {
  s.posterior(t);
  if (w == LossWeighting::Simplified) return 1.0;
  const double floor = s.T() >= 2 ? s.beta_tilde(2) : s.beta(1);
  return s.alpha_bar(t - 1) / (2.0 * std::max(s.beta_tilde(t), floor));
}

template <class S>
double diffusion_loss(const RowVector<S>& u0, const RowVector<S>& u0_hat, int t, const Schedule& s,
                      LossWeighting w) {
  const double weight = diffusion_weight(t, s, w);
  return weight * (u0.template cast<double>() - u0_hat.template cast<double>()).squaredNorm();
}

// Randomness consumed by one training example.
struct ExampleDraws {
  int t = 1;
  bool masked = false;  // guidance replaced by the null token
  RowVector<double> eps;
};

inline ExampleDraws draw_example(CounterRng& rng, const PipelineSpec& p, int d1, int T,
                                 double p_uncond) {
  ExampleDraws d;
  const double r = rng.uniform();
  d.masked = p.conditioning == Conditioning::Null ||
             (p.conditioning == Conditioning::Guided && masks_guidance(r, p_uncond));
  d.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(T)));
  const int dim = p.state_dim(d1);
  d.eps.resize(dim);
  for (int k = 0; k < dim; ++k) d.eps(k) = rng.normal();
  return d;
}

struct ExampleTerms {
  ad::Var squared_error;  // (y - y_hat)^2
  std::optional<ad::Var> diffusion;  // weighted ||x0 - x0_hat||^2
};

// Graph for one example. Returns the two loss terms as 1 x 1 nodes.
template <class S>
ExampleTerms build_example(Graph<S>& g, const TrainExample& ex, const std::vector<int>& history,
                           const ExampleDraws& draws, const Schedule& s, LossWeighting weighting) {
  auto& tape = g.tape();
  const ModelParams<S>& params = g.params();
  const PipelineSpec& p = params.config().pipeline;
  const int d = params.d1();

  const ad::Var u = g.row(params.ids().user_emb, ex.user);
  // Guidance-only use of h is skipped when the example is masked.
  const bool guidance_only = p.conditioning == Conditioning::Guided && p.layout == StateLayout::User &&
                             p.scoring != Scoring::ProjectWithHistory;
  std::optional<ad::Var> h;
  if (p.needs_history() && !(guidance_only && draws.masked)) h = encode_history(g, history);

  ad::Var score;
  std::optional<ad::Var> diff;
  if (!p.diffusion) {
    score = score_vector(g, u, u, h);
  } else {
    const ad::Var x0 = compose_state(tape, p, u, h);
    const auto signal = static_cast<S>(std::sqrt(s.alpha_bar(draws.t)));
    const auto noise = static_cast<S>(std::sqrt(s.one_minus_alpha_bar(draws.t)));
    const ad::Var x_t = noise_state(tape, p, d, x0, RowVector<S>(draws.eps.template cast<S>()),
                                    signal, noise);
    std::optional<ad::Var> cond;
    if (p.conditioning == Conditioning::Guided && !draws.masked) {
      cond = *h;
    } else if (p.conditioning != Conditioning::None) {
      cond = g.param(params.ids().null_token);
    }
    const ad::Var x0_hat = denoise(g, x_t, cond, draws.t);
    score = score_vector(g, x0_hat, u, h);
    const auto w = static_cast<S>(diffusion_weight(draws.t, s, weighting));
    diff = tape.scale(tape.sum_squares(tape.sub(x0, x0_hat)), w);
  }
  const ad::Var v = g.row(params.ids().tgt_item_emb, ex.item);
  Matrix<S> y(1, 1);
  y(0, 0) = static_cast<S>(ex.rating);
  const ad::Var err = tape.sub(tape.dot(score, v), tape.constant(std::move(y)));
  return {tape.sum_squares(err), diff};
}

struct LossReport {
  double rec = 0.0;    // mean squared rating error over the batch
  double diff = 0.0;   // mean weighted diffusion term
  double total = 0.0;  // rec + lambda * diff
  std::size_t examples = 0;
  std::size_t masked = 0;
};

// Deterministic batch objective for fixed draws. When `grads` is non-null the
// gradient of `total` is accumulated into it.
template <class S>
LossReport batch_loss(const ModelParams<S>& params, std::span<const TrainExample> batch,
                      const std::vector<std::vector<int>>& histories,
                      std::span<const ExampleDraws> draws, const Schedule& s, double lambda,
                      LossWeighting weighting, ModelParams<S>* grads) {
  if (batch.empty()) throw ConfigError("empty batch");
  LossReport r;
  r.examples = batch.size();
  const S inv_b = static_cast<S>(1.0 / static_cast<double>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ad::Tape<S> tape;
    Graph<S> g(tape, params, grads);
    const ExampleTerms terms =
        build_example(g, batch[i], histories[batch[i].history], draws[i], s, weighting);
    r.rec += tape.scalar(terms.squared_error);
    r.masked += draws[i].masked ? 1 : 0;
    ad::Var objective = terms.squared_error;
    if (terms.diffusion) {
      r.diff += tape.scalar(*terms.diffusion);
      objective = tape.add(objective, tape.scale(*terms.diffusion, static_cast<S>(lambda)));
    }
    if (grads) tape.backward(objective, inv_b);
  }
  r.rec /= static_cast<double>(batch.size());
  r.diff /= static_cast<double>(batch.size());
  r.total = r.rec + lambda * r.diff;
  return r;
}

// Bias-corrected first/second moment estimation. With `lazy_rows`, embedding
// table rows that received no gradient in a step keep their moments and values.
template <class S>
struct AdamState {
  ModelParams<S> m;
  ModelParams<S> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool lazy_rows = false;
  std::vector<double> lr_scale;  // per array; empty means 1

  AdamState() = default;
  explicit AdamState(const ModelParams<S>& like, bool lazy = false)
      : m(like.zeros_like()), v(like.zeros_like()), lazy_rows(lazy) {}

  void update(ModelParams<S>& params, const ModelParams<S>& grads, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    const S b1 = static_cast<S>(beta1);
    const S b2 = static_cast<S>(beta2);
    const S base_step = static_cast<S>(lr / c1);
    const S inv_c2 = static_cast<S>(1.0 / c2);
    const S eps = static_cast<S>(epsilon);
    const ParamIds& ids = params.ids();
    for (std::size_t i = 0; i < params.arrays().size(); ++i) {
      auto& w = params.arrays()[i].value;
      const auto& g = grads.arrays()[i].value;
      auto& m1 = m.arrays()[i].value;
      auto& m2 = v.arrays()[i].value;
      const int id = static_cast<int>(i);
      const S step_size = lr_scale.empty() ? base_step : base_step * static_cast<S>(lr_scale[i]);
      const bool table = id == ids.user_emb || id == ids.src_item_emb || id == ids.tgt_item_emb;
      if (lazy_rows && table) {
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
          if ((g.row(r).array() == S(0)).all()) continue;
          m1.row(r) = b1 * m1.row(r) + (S(1) - b1) * g.row(r);
          m2.row(r) = (b2 * m2.row(r).array() + (S(1) - b2) * g.row(r).array().square()).matrix();
          w.row(r).array() -= step_size * m1.row(r).array() / ((m2.row(r).array() * inv_c2).sqrt() + eps);
        }
        continue;
      }
      m1 = b1 * m1 + (S(1) - b1) * g;
      m2 = (b2 * m2.array() + (S(1) - b2) * g.array().square()).matrix();
      w.array() -= step_size * m1.array() / ((m2.array() * inv_c2).sqrt() + eps);
    }
  }
};

struct EpochLoss {
  int epoch = 0;
  double rec = 0.0;
  double diff = 0.0;
  double total = 0.0;
  std::size_t masked = 0;
  std::size_t examples = 0;
};

template <class S>
struct TrainerState {
  AdamState<S> optimizer;
  CounterRng rng;
  std::int64_t steps = 0;
  int epoch = 0;
  std::vector<EpochLoss> log;
};

template <class S>
TrainerState<S> make_trainer_state(const ModelParams<S>& params, std::uint64_t seed,
                                   bool lazy_rows = false, double encoder_lr_scale = 1.0) {
  AdamState<S> opt(params, lazy_rows);
  if (encoder_lr_scale != 1.0) {
    for (const auto& a : params.arrays()) {
      opt.lr_scale.push_back(a.name.rfind("enc.", 0) == 0 ? encoder_lr_scale : 1.0);
    }
  }
  return {std::move(opt), CounterRng(seed, 0x7EA1), 0, 0, {}};
}

inline void check_finite(const LossReport& r) {
  if (!std::isfinite(r.rec)) throw NumericError("non-finite loss term L_rec = " + std::to_string(r.rec));
  if (!std::isfinite(r.diff)) {
    throw NumericError("non-finite loss term L_diff (diffusion) = " + std::to_string(r.diff));
  }
}

// One optimizer update on a batch; draws come from the trainer RNG.
template <class S>
LossReport train_step(std::span<const TrainExample> batch,
                      const std::vector<std::vector<int>>& histories, ModelParams<S>& params,
                      TrainerState<S>& state, const TrainConfig& cfg, const Schedule& s) {
  const PipelineSpec& p = params.config().pipeline;
  std::vector<ExampleDraws> draws;
  draws.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    draws.push_back(draw_example(state.rng, p, params.d1(), s.T(), cfg.p_uncond));
  }
  ModelParams<S> grads = params.zeros_like();
  const LossReport r =
      batch_loss(params, batch, histories, draws, s, cfg.lambda, cfg.loss_weighting, &grads);
  check_finite(r);
  state.optimizer.update(params, grads, cfg.learning_rate);
  ++state.steps;
  return r;
}

template <class S>
struct TrainResult {
  ModelParams<S> params;
  std::vector<EpochLoss> history;
};

using EpochCallback = std::function<void(const EpochLoss&)>;

// Full training loop over the training set; one shuffled pass per epoch.
template <class S = float>
TrainResult<S> train(const TrainingSet& data, ModelParams<S> params, const TrainConfig& cfg,
                     const Schedule& s, const EpochCallback& on_epoch = {}) {
  validate(cfg);
  if (s.T() != cfg.schedule.T) throw ConfigError("schedule T does not match training config");
  TrainerState<S> state = make_trainer_state(params, cfg.seed, cfg.lazy_embeddings, cfg.encoder_lr_scale);
  if (cfg.epochs > 0 && data.examples.empty()) throw DataError("no training examples");
  std::vector<TrainExample> order = data.examples;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    state.rng.shuffle(order);
    EpochLoss e;
    e.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      const std::span<const TrainExample> batch(order.data() + start, n);
      const LossReport r = train_step(batch, data.histories, params, state, cfg, s);
      e.rec += r.rec * n;
      e.diff += r.diff * n;
      e.masked += r.masked;
      e.examples += n;
    }
    e.rec /= static_cast<double>(e.examples);
    e.diff /= static_cast<double>(e.examples);
    e.total = e.rec + cfg.lambda * e.diff;
    state.epoch = epoch;
    state.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return {std::move(params), std::move(state.log)};
}

inline void write_loss_tsv(std::ostream& out, const std::vector<EpochLoss>& history) {
  out << "epoch\tL_rec\tL_diff\ttotal\n";
  const auto prec = out.precision(17);
  for (const auto& e : history) {
    out << e.epoch << '\t' << e.rec << '\t' << e.diff << '\t' << e.total << '\n';
  }
  out.precision(prec);
}

}  // namespace dmcdr
