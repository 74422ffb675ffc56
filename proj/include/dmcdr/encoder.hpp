#pragma once

// Preference encoder: pre-norm Transformer layers over the chronological
// source history, a final layer norm, then average pooling over real
// (unpadded) positions.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dmcdr/autograd.hpp"
#include "dmcdr/error.hpp"
#include "dmcdr/params.hpp"

namespace dmcdr {

template <class S>
struct GuidanceSignal {
  std::string user_id;
  RowVector<S> vector;
};

// Mean over rows with keep[r] != 0.
template <class S>
RowVector<S> ave_pool(const Matrix<S>& rows, const std::vector<std::uint8_t>& keep) {
  if (keep.size() != static_cast<std::size_t>(rows.rows())) {
    throw ConfigError("ave_pool: mask length does not match row count");
  }
  ad::Tape<S> tape;
  const ad::Var x = tape.constant(rows);
  return tape.value(tape.mean_rows(x, keep)).row(0);
}

// One Transformer layer; X is n x d1, `valid` marks real positions.
template <class S>
ad::Var encoder_layer(Graph<S>& g, const EncoderLayerIds& ids, ad::Var X,
                      const std::vector<std::uint8_t>& valid) {
  auto& tape = g.tape();
  const ModelConfig& cfg = g.config();
  const int d = cfg.d1;
  const int heads = cfg.heads;
  const int dh = d / heads;

  ad::Var A = cfg.layer_norm ? tape.layer_norm(X, g.param(ids.ln1_gain), g.param(ids.ln1_bias)) : X;
  const ad::Var Q = tape.linear(A, g.param(ids.wq), g.param(ids.bq));
  const ad::Var K = tape.linear(A, g.param(ids.wk), g.param(ids.bk));
  const ad::Var V = tape.linear(A, g.param(ids.wv), g.param(ids.bv));
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<ad::Var> ctx;
  for (int h = 0; h < heads; ++h) {
    const ad::Var q = heads == 1 ? Q : tape.slice_cols(Q, h * dh, dh);
    const ad::Var k = heads == 1 ? K : tape.slice_cols(K, h * dh, dh);
    const ad::Var v = heads == 1 ? V : tape.slice_cols(V, h * dh, dh);
    const ad::Var scores = tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt);
    const ad::Var weights = tape.masked_softmax(scores, valid);
    ctx.push_back(tape.matmul(weights, v));
  }
  const ad::Var C = heads == 1 ? ctx.front() : tape.concat_cols(ctx);
  X = tape.add(X, tape.linear(C, g.param(ids.wo), g.param(ids.bo)));

  ad::Var B = cfg.layer_norm ? tape.layer_norm(X, g.param(ids.ln2_gain), g.param(ids.ln2_bias)) : X;
  const ad::Var hidden = tape.gelu(tape.linear(B, g.param(ids.ff1_w), g.param(ids.ff1_b)));
  return tape.add(X, tape.linear(hidden, g.param(ids.ff2_w), g.param(ids.ff2_b)));
}

// Items (n x d1) -> pooled 1 x d1 guidance signal. Without the Transformer the
// raw item vectors are pooled directly.
template <class S>
ad::Var encode_sequence(Graph<S>& g, ad::Var items, const std::vector<std::uint8_t>& valid) {
  auto& tape = g.tape();
  const auto n = static_cast<int>(tape.value(items).rows());
  if (static_cast<int>(valid.size()) != n) throw ConfigError("encoder: mask length mismatch");
  bool any = false;
  for (auto v : valid) any = any || v;
  if (!any) throw DataError("empty history");
  const ModelParams<S>& p = g.params();
  if (!p.config().pipeline.use_transformer) return tape.mean_rows(items, valid);
  if (n > p.config().max_history_len) {
    throw ConfigError("encoder: sequence of length " + std::to_string(n) +
                      " exceeds max_history_len " + std::to_string(p.config().max_history_len));
  }
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) positions[i] = i;
  ad::Var X = tape.add(items, g.rows(p.ids().pos_emb, std::move(positions)));
  for (const auto& layer : p.ids().encoder) X = encoder_layer(g, layer, X, valid);
  if (p.config().layer_norm) {
    X = tape.layer_norm(X, g.param(p.ids().final_ln_gain), g.param(p.ids().final_ln_bias));
  }
  return tape.mean_rows(X, valid);
}

// Encode a history given as source-item indices (all positions real).
template <class S>
ad::Var encode_history(Graph<S>& g, const std::vector<int>& item_indices) {
  if (item_indices.empty()) throw DataError("empty history");
  const ad::Var items = g.rows(g.params().ids().src_item_emb, item_indices);
  return encode_sequence(g, items, std::vector<std::uint8_t>(item_indices.size(), 1));
}

// Encode explicit item vectors; pad_mask[i] != 0 flags padding.
template <class S>
RowVector<S> encode_history(const Matrix<S>& item_vectors, const ModelParams<S>& params,
                            const std::vector<std::uint8_t>& pad_mask) {
  std::vector<std::uint8_t> valid(pad_mask.size());
  for (std::size_t i = 0; i < pad_mask.size(); ++i) valid[i] = pad_mask[i] ? 0 : 1;
  ad::Tape<S> tape;
  Graph<S> g(tape, params);
  const ad::Var out = encode_sequence(g, tape.constant(item_vectors), valid);
  return tape.value(out).row(0);
}

template <class S>
GuidanceSignal<S> encode_user(const ModelParams<S>& params, const std::string& user_id,
                              const std::vector<int>& item_indices) {
  ad::Tape<S> tape;
  Graph<S> g(tape, params);
  return {user_id, tape.value(encode_history(g, item_indices)).row(0)};
}

}  // namespace dmcdr
