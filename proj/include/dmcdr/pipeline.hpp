#pragma once

// State assembly and scoring shared by the training graph and the inference
// rollout of every pipeline.

#include <optional>
#include <vector>

#include "dmcdr/autograd.hpp"
#include "dmcdr/params.hpp"
#include "dmcdr/variants.hpp"

namespace dmcdr {

// Clean state x0 from the user vector and (when the layout needs it) h.
template <class S>
ad::Var compose_state(ad::Tape<S>& tape, const PipelineSpec& p, ad::Var u,
                      std::optional<ad::Var> h) {
  switch (p.layout) {
    case StateLayout::User:
      return u;
    case StateLayout::UserHistory:
      return tape.concat_cols({u, h.value()});
    case StateLayout::HistoryUser:
      return tape.concat_cols({h.value(), u});
    case StateLayout::History:
      return h.value();
  }
  return u;
}

// Forward-noised state: noised blocks get sqrt(abar) x + sqrt(1 - abar) eps,
// the others pass through untouched.
template <class S>
ad::Var noise_state(ad::Tape<S>& tape, const PipelineSpec& p, int d1, ad::Var x0,
                    const RowVector<S>& eps, S signal_scale, S noise_scale) {
  const int blocks = p.state_blocks();
  std::vector<ad::Var> parts;
  for (int b = 0; b < blocks; ++b) {
    ad::Var block = blocks == 1 ? x0 : tape.slice_cols(x0, b * d1, d1);
    if (p.noised_block(b)) {
      Matrix<S> e = eps.segment(b * d1, d1) * noise_scale;
      block = tape.add(tape.scale(block, signal_scale), tape.constant(std::move(e)));
    }
    parts.push_back(block);
  }
  return blocks == 1 ? parts.front() : tape.concat_cols(std::move(parts));
}

// 1 x d1 vector whose inner product with an item embedding is the rating.
template <class S>
ad::Var score_vector(Graph<S>& g, ad::Var state, ad::Var u, std::optional<ad::Var> h) {
  auto& tape = g.tape();
  const ModelParams<S>& params = g.params();
  const PipelineSpec& p = params.config().pipeline;
  const ad::Var none{};
  switch (p.scoring) {
    case Scoring::Direct:
      return state;
    case Scoring::Project:
      return tape.linear(state, g.param(params.ids().projection), none);
    case Scoring::ProjectWithHistory:
      return tape.linear(tape.concat_cols({state, h.value()}), g.param(params.ids().projection),
                         none);
    case Scoring::ProjectWithUser:
      return tape.linear(tape.concat_cols({state, u}), g.param(params.ids().projection), none);
  }
  return state;
}

}  // namespace dmcdr
