#pragma once

// Synthetic two-domain rating data with a shared latent preference per user.
// Source interactions are drawn preferentially toward items the user likes, so
// the source history carries signal about the user's target-domain taste.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "dmcdr/data.hpp"
#include "dmcdr/error.hpp"
#include "dmcdr/rng.hpp"

namespace dmcdr {

struct SyntheticConfig {
  int users = 2000;
  int latent_dim = 8;
  int source_items = 300;
  int target_items = 300;
  int source_per_user = 20;
  int target_per_user = 10;
  double rating_offset = 2.5;  // rating = offset + scale * p.q + noise, clamped
  double rating_scale = 0.5;
  double noise_std = 0.1;
  double affinity = 4.0;  // sharpness of source item selection
  std::uint64_t seed = 0;
};

struct SyntheticData {
  DomainData source;
  DomainData target;
  std::vector<std::vector<double>> user_latent;
};

namespace detail {

inline std::string padded_id(char prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%05d", prefix, i);
  return buf;
}

inline std::vector<std::vector<double>> gaussian_latents(CounterRng& rng, int n, int dim) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(dim));
  for (auto& row : out) {
    for (auto& x : row) x = rng.normal();
  }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace detail

inline SyntheticData make_synthetic(const SyntheticConfig& c) {
  if (c.users < 1 || c.latent_dim < 1 || c.source_items < c.source_per_user ||
      c.target_items < c.target_per_user || c.source_per_user < 1 || c.target_per_user < 1) {
    throw ConfigError("invalid synthetic config");
  }
  CounterRng rng(c.seed, 0x5EED);
  CounterRng latent_rng = rng.split(0);
  auto users = detail::gaussian_latents(latent_rng, c.users, c.latent_dim);
  auto src = detail::gaussian_latents(latent_rng, c.source_items, c.latent_dim);
  auto tgt = detail::gaussian_latents(latent_rng, c.target_items, c.latent_dim);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.latent_dim));

  auto rate = [&](CounterRng& r, const std::vector<double>& p, const std::vector<double>& q) {
    const double y = c.rating_offset + c.rating_scale * detail::dot(p, q) + c.noise_std * r.normal();
    return std::clamp(y, 0.0, 5.0);
  };

  std::vector<RatingRecord> source_recs;
  std::vector<RatingRecord> target_recs;
  std::vector<std::pair<double, int>> keyed(static_cast<std::size_t>(c.source_items));
  std::vector<int> target_pool(static_cast<std::size_t>(c.target_items));
  for (int u = 0; u < c.users; ++u) {
    CounterRng r = rng.split(1 + static_cast<std::uint64_t>(u));
    const std::string uid = detail::padded_id('u', u);
    // Gumbel top-k: sampling without replacement with weights exp(affinity * score).
    for (int i = 0; i < c.source_items; ++i) {
      const double g = -std::log(-std::log(std::max(r.uniform(), 1e-300)));
      keyed[i] = {c.affinity * detail::dot(users[u], src[i]) * inv_sqrt + g, i};
    }
    std::partial_sort(keyed.begin(), keyed.begin() + c.source_per_user, keyed.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < c.source_per_user; ++k) {
      const int i = keyed[k].second;
      source_recs.push_back({uid, detail::padded_id('s', i), rate(r, users[u], src[i]), k});
    }
    for (int i = 0; i < c.target_items; ++i) target_pool[i] = i;
    r.shuffle(target_pool);
    for (int k = 0; k < c.target_per_user; ++k) {
      const int j = target_pool[k];
      target_recs.push_back({uid, detail::padded_id('t', j), rate(r, users[u], tgt[j]), k});
    }
  }
  return {DomainData(std::move(source_recs)), DomainData(std::move(target_recs)),
          std::move(users)};
}

}  // namespace dmcdr
