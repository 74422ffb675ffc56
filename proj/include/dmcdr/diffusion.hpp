#pragma once

// Forward corruption, the u0-predicting denoiser, classifier-free masking and
// guidance, and the guided reverse step.

#include <cmath>
#include <optional>
#include <utility>

#include "dmcdr/autograd.hpp"
#include "dmcdr/error.hpp"
#include "dmcdr/params.hpp"
#include "dmcdr/schedule.hpp"

namespace dmcdr {

// A guidance signal or the null token. The null case is a distinct state,
// never a magic value inside the vector.
template <class S>
class Guidance {
 public:
  Guidance() = default;
  explicit Guidance(RowVector<S> signal) : signal_(std::move(signal)) {}
  static Guidance null() { return Guidance(); }

  bool is_null() const { return !signal_.has_value(); }
  const RowVector<S>& signal() const { return *signal_; }

 private:
  std::optional<RowVector<S>> signal_;
};

template <class S>
struct NoisedState {
  RowVector<S> u_t;
  int t = 0;
  RowVector<S> eps;
};

struct GuidanceConfig {
  double omega = 2.0;
  double p_uncond = 0.1;
  int inference_steps = 0;  // T'
};

// u_t = sqrt(abar_t) u0 + sqrt(1 - abar_t) eps
template <class S>
NoisedState<S> forward_marginal(const RowVector<S>& u0, int t, const RowVector<S>& eps,
                                const Schedule& s) {
  s.posterior(t);  // range check: 1 <= t <= T
  const S a = static_cast<S>(std::sqrt(s.alpha_bar(t)));
  const S b = static_cast<S>(std::sqrt(s.one_minus_alpha_bar(t)));
  return {a * u0 + b * eps, t, eps};
}

// One step of the forward chain: sqrt(1 - beta_t) u_{t-1} + sqrt(beta_t) eps.
template <class S>
RowVector<S> forward_chain_step(const RowVector<S>& u_prev, int t, const RowVector<S>& eps,
                                const Schedule& s) {
  const double beta = s.beta(t);
  return static_cast<S>(std::sqrt(s.alpha(t))) * u_prev + static_cast<S>(std::sqrt(beta)) * eps;
}

// Classifier-free masking: the null token iff r < p_uncond.
template <class S>
Guidance<S> mask_guidance(const Guidance<S>& h, double r, double p_uncond) {
  return r < p_uncond ? Guidance<S>::null() : h;
}

inline bool masks_guidance(double r, double p_uncond) { return r < p_uncond; }

// (1 + omega) f(h) - omega f(null)
template <class S>
RowVector<S> guided_combine(const RowVector<S>& conditional, const RowVector<S>& unconditional,
                            double omega) {
  return static_cast<S>(1.0 + omega) * conditional - static_cast<S>(omega) * unconditional;
}

// Guidance applied to any denoiser f(u_t, guidance, t).
template <class S, class Denoiser>
RowVector<S> guided_predict_with(Denoiser&& f, const RowVector<S>& u_t, const Guidance<S>& h, int t,
                            double omega) {
  if (omega < 0.0) throw ConfigError("guidance strength must be >= 0");
  if (h.is_null() || omega == 0.0) return f(u_t, h, t);
  return guided_combine<S>(f(u_t, h, t), f(u_t, Guidance<S>::null(), t), omega);
}

// Posterior-mean update with an arbitrary u0 predictor:
//   u_{t-1} = c0_t u0_hat + ct_t u_t + sqrt(beta_tilde_t) z
template <class S>
RowVector<S> posterior_step(const RowVector<S>& u0_hat, const RowVector<S>& u_t, int t,
                            const RowVector<S>& z, const Schedule& s) {
  const PosteriorCoeffs c = s.posterior(t);
  RowVector<S> out = static_cast<S>(c.coef_u0) * u0_hat + static_cast<S>(c.coef_ut) * u_t;
  if (c.variance > 0.0) out += static_cast<S>(std::sqrt(c.variance)) * z;
  return out;
}

// ---------------------------------------------------------------------------
// The denoiser f_theta: an MLP on [x_t | conditioning | step_emb(t)] with tanh
// hidden activations, predicting the clean state.
// ---------------------------------------------------------------------------

template <class S>
ad::Var denoise(Graph<S>& g, ad::Var x_t, std::optional<ad::Var> cond, int t) {
  auto& tape = g.tape();
  const ModelParams<S>& p = g.params();
  const int d = p.d1();
  if (p.ids().den_w.empty()) throw ConfigError("pipeline has no denoiser");
  std::vector<ad::Var> parts{x_t};
  if (cond) parts.push_back(*cond);
  parts.push_back(tape.constant(step_embedding<S>(t, d)));
  ad::Var h = tape.concat_cols(std::move(parts));
  const auto& ws = p.ids().den_w;
  const auto& bs = p.ids().den_b;
  for (std::size_t k = 0; k < ws.size(); ++k) {
    h = tape.linear(h, g.param(ws[k]), g.param(bs[k]));
    if (k + 1 < ws.size()) h = tape.tanh(h);
  }
  return h;
}

// Conditioning input for a guidance value: h, the null token, or nothing.
template <class S>
std::optional<ad::Var> conditioning_input(Graph<S>& g, const Guidance<S>* h) {
  const ModelParams<S>& p = g.params();
  if (p.config().pipeline.conditioning == Conditioning::None) return std::nullopt;
  if (h == nullptr || h->is_null()) return g.param(p.ids().null_token);
  return g.tape().constant(h->signal());
}

// f_theta(x_t, h-or-null, t) for a fixed parameter set.
template <class S>
RowVector<S> predict_u0(const ModelParams<S>& params, const RowVector<S>& u_t,
                        const Guidance<S>& h, int t) {
  ad::Tape<S> tape;
  Graph<S> g(tape, params);
  const ad::Var x = tape.constant(u_t);
  return tape.value(denoise(g, x, conditioning_input(g, &h), t)).row(0);
}

template <class S>
RowVector<S> guided_predict(const ModelParams<S>& params, const RowVector<S>& u_t,
                            const Guidance<S>& h, int t, double omega) {
  auto f = [&](const RowVector<S>& x, const Guidance<S>& c, int step) {
    return predict_u0(params, x, c, step);
  };
  return guided_predict_with<S>(f, u_t, h, t, omega);
}

// One guided reverse step from u_t to u_{t-1}.
template <class S>
RowVector<S> reverse_step(const RowVector<S>& u_t, const Guidance<S>& h, int t, double omega,
                          const RowVector<S>& z, const Schedule& s, const ModelParams<S>& params) {
  s.posterior(t);  // range check before any network evaluation
  return posterior_step<S>(guided_predict(params, u_t, h, t, omega), u_t, t, z, s);
}

}  // namespace dmcdr
