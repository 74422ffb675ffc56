#pragma once

// Cold-start inference: a guided reverse rollout that starts from the user's
// own embedding, followed by inner-product rating prediction and MAE/RMSE.

#include <cmath>
#include <cstdint>
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

inline constexpr int kFullRollout = -1;

struct InferenceConfig {
  double omega = 2.0;
  int T_prime = kFullRollout;  // reverse steps; 0 returns the initial state, kFullRollout runs all T
  std::uint64_t seed = 0;
};

inline int reverse_steps(const InferenceConfig& c, const Schedule& s) {
  return c.T_prime == kFullRollout ? s.T() : c.T_prime;
}

inline void validate(const InferenceConfig& c, const Schedule& s) {
  if (c.T_prime != kFullRollout && (c.T_prime < 0 || c.T_prime > s.T())) {
    throw ConfigError("T_prime = " + std::to_string(c.T_prime) + " must lie in [0, " +
                      std::to_string(s.T()) + "]");
  }
  if (!(c.omega >= 0.0)) throw ConfigError("omega must be >= 0");
}

// Reverse rollout for t = T'..1 on a state whose non-noised blocks are held at
// their initial values. `noise` supplies z for t > 1.
template <class S>
RowVector<S> rollout(const ModelParams<S>& params, RowVector<S> x, const Guidance<S>& h,
                     const InferenceConfig& cfg, const Schedule& s, CounterRng& noise) {
  validate(cfg, s);
  const PipelineSpec& p = params.config().pipeline;
  const int d = params.d1();
  const RowVector<S> clean = x;
  const auto dim = x.size();
  RowVector<S> z = RowVector<S>::Zero(dim);
  for (int t = reverse_steps(cfg, s); t >= 1; --t) {
    for (Eigen::Index k = 0; k < dim; ++k) {
      const bool noised = p.noised_block(static_cast<int>(k / d));
      z(k) = t > 1 && noised ? static_cast<S>(noise.normal()) : S(0);
    }
    x = reverse_step(x, h, t, cfg.omega, z, s, params);
    for (int b = 0; b < p.state_blocks(); ++b) {
      if (!p.noised_block(b)) x.segment(b * d, d) = clean.segment(b * d, d);
    }
  }
  return x;
}

// Single-user rollout for the guided u-only pipeline.
template <class S>
RowVector<S> infer_user(const RowVector<S>& u_init, const Guidance<S>& h,
                        const InferenceConfig& cfg, const Schedule& s,
                        const ModelParams<S>& params, std::uint64_t user = 0) {
  CounterRng noise = CounterRng(cfg.seed, 0x1F3E).split(user);
  return rollout(params, u_init, h, cfg, s, noise);
}

template <class S>
double predict_rating(const RowVector<S>& u0, const RowVector<S>& v) {
  if (u0.size() != v.size()) throw ConfigError("predict_rating: dimension mismatch");
  return static_cast<double>(u0.template cast<double>().dot(v.template cast<double>()));
}

// Score vector for a cold-start user under any pipeline.
template <class S>
RowVector<S> user_score_vector(const ModelParams<S>& params, int user,
                               const std::vector<int>& history, const InferenceConfig& cfg,
                               const Schedule& s) {
  const PipelineSpec& p = params.config().pipeline;
  const RowVector<S> u = params[params.ids().user_emb].row(user);
  std::optional<RowVector<S>> h;
  if (p.needs_history()) h = encode_user(params, "", history).vector;

  RowVector<S> state = u;
  if (p.diffusion) {
    RowVector<S> x0;
    switch (p.layout) {
      case StateLayout::User: x0 = u; break;
      case StateLayout::History: x0 = *h; break;
      case StateLayout::UserHistory:
        x0.resize(2 * u.size());
        x0 << u, *h;
        break;
      case StateLayout::HistoryUser:
        x0.resize(2 * u.size());
        x0 << *h, u;
        break;
    }
    const Guidance<S> guide =
        p.conditioning == Conditioning::Guided ? Guidance<S>(*h) : Guidance<S>::null();
    CounterRng noise = CounterRng(cfg.seed, 0x1F3E).split(static_cast<std::uint64_t>(user));
    state = rollout(params, std::move(x0), guide, cfg, s, noise);
  }
  ad::Tape<S> tape;
  Graph<S> g(tape, params);
  std::optional<ad::Var> hv;
  if (h) hv = tape.constant(*h);
  const ad::Var out = score_vector(g, tape.constant(state), tape.constant(u), hv);
  return tape.value(out).row(0);
}

struct UserReport {
  std::string user_id;
  std::size_t n = 0;
  double mae = 0.0;
  double rmse = 0.0;
};

struct EvalReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n_predictions = 0;
  std::vector<UserReport> per_user;
};

// MAE and RMSE of predictions against truths.
inline EvalReport error_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw ConfigError("error_metrics: length mismatch");
  if (pred.empty()) throw DataError("no predictions to evaluate");
  EvalReport r;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  r.n_predictions = pred.size();
  r.mae = abs_sum / static_cast<double>(pred.size());
  r.rmse = std::sqrt(sq_sum / static_cast<double>(pred.size()));
  return r;
}

template <class S>
EvalReport evaluate(const ModelParams<S>& params, const Schedule& s,
                    const std::vector<TestCase>& cases, const InferenceConfig& cfg) {
  validate(cfg, s);
  const auto& items = params[params.ids().tgt_item_emb];
  std::vector<double> pred;
  std::vector<double> truth;
  std::vector<UserReport> users;
  for (const auto& tc : cases) {
    const RowVector<S> w = user_score_vector(params, tc.user, tc.history, cfg, s);
    UserReport ur{tc.user_id, tc.ratings.size(), 0.0, 0.0};
    for (const auto& [item, rating] : tc.ratings) {
      const double y = predict_rating<S>(w, items.row(item));
      const double e = y - rating;
      ur.mae += std::abs(e);
      ur.rmse += e * e;
      pred.push_back(y);
      truth.push_back(rating);
    }
    if (ur.n > 0) {
      ur.mae /= static_cast<double>(ur.n);
      ur.rmse = std::sqrt(ur.rmse / static_cast<double>(ur.n));
    }
    users.push_back(std::move(ur));
  }
  if (pred.empty()) throw DataError("evaluation produced zero predictions");
  EvalReport r = error_metrics(pred, truth);
  r.per_user = std::move(users);
  return r;
}

inline void write_report_tsv(std::ostream& out, const EvalReport& r) {
  const auto prec = out.precision(10);
  out << "mae\trmse\tn\n" << r.mae << '\t' << r.rmse << '\t' << r.n_predictions << '\n';
  out.precision(prec);
}

inline void write_per_user_tsv(std::ostream& out, const EvalReport& r) {
  const auto prec = out.precision(10);
  out << "user\tn\tmae\trmse\n";
  for (const auto& u : r.per_user) {
    out << u.user_id << '\t' << u.n << '\t' << u.mae << '\t' << u.rmse << '\n';
  }
  out.precision(prec);
}

inline void write_summary(std::ostream& out, const EvalReport& r) {
  const auto prec = out.precision(4);
  out << std::fixed << "MAE " << r.mae << "  RMSE " << r.rmse << "  over " << r.n_predictions
      << " ratings from " << r.per_user.size() << " users\n";
  out.unsetf(std::ios::floatfield);
  out.precision(prec);
}

}  // namespace dmcdr
