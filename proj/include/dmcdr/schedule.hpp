#pragma once

// Exponential noise schedule over diffusion steps t = 1..T.
//
//   1 - abar_t = eta * (1 - exp(-alpha_min / T - S_t (alpha_max - alpha_min) / (2 T^2)))
//
// with S_t the T evenly spaced values from 1 to 2T+1 (S_1 = T+1 when T = 1)
// and the convention abar_0 = 1. All arrays are 64-bit and indexed by t, with
// slot 0 holding the t = 0 convention values.

#include <cmath>
#include <string>
#include <vector>

#include "dmcdr/error.hpp"

namespace dmcdr {

struct ScheduleParams {
  int T = 200;
  double eta = 0.1;
  double alpha_min = 0.1;
  double alpha_max = 10.0;
};

struct PosteriorCoeffs {
  double coef_u0;
  double coef_ut;
  double variance;
};

class Schedule {
 public:
  int T() const { return params_.T; }
  const ScheduleParams& params() const { return params_; }

  double one_minus_alpha_bar(int t) const { return one_minus_alpha_bar_[check(t, 0)]; }
  double alpha_bar(int t) const { return alpha_bar_[check(t, 0)]; }
  double alpha(int t) const { return alpha_[check(t)]; }
  double beta(int t) const { return beta_[check(t)]; }
  double beta_tilde(int t) const { return beta_tilde_[check(t)]; }
  double post_coef_u0(int t) const { return post_coef_u0_[check(t)]; }
  double post_coef_ut(int t) const { return post_coef_ut_[check(t)]; }
  double step_position(int t) const { return step_position_[check(t)]; }

  // Mean coefficients and variance of q(u_{t-1} | u_t, u_0).
  PosteriorCoeffs posterior(int t) const {
    check(t);
    return {post_coef_u0_[t], post_coef_ut_[t], beta_tilde_[t]};
  }

  friend Schedule build_schedule(const ScheduleParams& p);

 private:
  int check(int t, int lo = 1) const {
    if (t < lo || t > params_.T) {
      throw IndexError("diffusion step " + std::to_string(t) + " outside [" + std::to_string(lo) +
                       ", " + std::to_string(params_.T) + "]");
    }
    return t;
  }

  ScheduleParams params_;
  std::vector<double> step_position_;
  std::vector<double> one_minus_alpha_bar_;
  std::vector<double> alpha_bar_;
  std::vector<double> alpha_;
  std::vector<double> beta_;
  std::vector<double> beta_tilde_;
  std::vector<double> post_coef_u0_;
  std::vector<double> post_coef_ut_;
};

inline void validate(const ScheduleParams& p) {
  std::string bad;
  if (p.T < 1) bad += " T must be >= 1;";
  if (!(p.eta > 0.0 && p.eta <= 1.0)) bad += " eta must lie in (0, 1];";
  if (!(p.alpha_min > 0.0)) bad += " alpha_min must be > 0;";
  if (!(p.alpha_max > p.alpha_min)) bad += " alpha_max must exceed alpha_min;";
  if (!bad.empty()) throw ConfigError("invalid schedule:" + bad);
}

inline Schedule build_schedule(const ScheduleParams& p) {
  validate(p);
  const int T = p.T;
  const auto n = static_cast<std::size_t>(T) + 1;
  Schedule s;
  s.params_ = p;
  s.step_position_.assign(n, 0.0);
  s.one_minus_alpha_bar_.assign(n, 0.0);
  s.alpha_bar_.assign(n, 1.0);
  s.alpha_.assign(n, 1.0);
  s.beta_.assign(n, 0.0);
  s.beta_tilde_.assign(n, 0.0);
  s.post_coef_u0_.assign(n, 0.0);
  s.post_coef_ut_.assign(n, 0.0);

  const double Td = T;
  for (int t = 1; t <= T; ++t) {
    const double pos = T == 1 ? Td + 1.0 : 1.0 + (t - 1) * 2.0 * Td / (Td - 1.0);
    const double x = p.alpha_min / Td + pos * (p.alpha_max - p.alpha_min) / (2.0 * Td * Td);
    s.step_position_[t] = pos;
    // -expm1(-x) keeps full precision when x is small.
    s.one_minus_alpha_bar_[t] = p.eta * -std::expm1(-x);
    s.alpha_bar_[t] = 1.0 - s.one_minus_alpha_bar_[t];
  }
  for (int t = 1; t <= T; ++t) {
    const double ab = s.alpha_bar_[t];
    const double ab_prev = s.alpha_bar_[t - 1];
    const double oma = s.one_minus_alpha_bar_[t];
    const double oma_prev = s.one_minus_alpha_bar_[t - 1];
    s.alpha_[t] = ab / ab_prev;
    // beta_t = (abar_{t-1} - abar_t) / abar_{t-1}, written without cancellation.
    s.beta_[t] = (oma - oma_prev) / ab_prev;
    s.beta_tilde_[t] = oma_prev / oma * s.beta_[t];
    s.post_coef_u0_[t] = std::sqrt(ab_prev) * s.beta_[t] / oma;
    s.post_coef_ut_[t] = std::sqrt(s.alpha_[t]) * oma_prev / oma;
  }
  return s;
}

}  // namespace dmcdr
