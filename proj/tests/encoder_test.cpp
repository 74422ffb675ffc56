#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "dmcdr/encoder.hpp"
#include "dmcdr/rng.hpp"
#include "reference.hpp"

using namespace dmcdr;
using Mat = Matrix<double>;
using Row = RowVector<double>;
using ref::random_matrix;

namespace {

ModelConfig encoder_config(int d1, int layers, bool layer_norm, int max_len = 8) {
  ModelConfig c;
  c.n_users = 2;
  c.n_src_items = 6;
  c.n_tgt_items = 2;
  c.d1 = d1;
  c.max_history_len = max_len;
  c.encoder_layers = layers;
  c.heads = d1 % 2 == 0 ? 2 : 1;
  c.ff_dim = 5;
  c.layer_norm = layer_norm;
  return c;
}

ModelParams<double> random_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = init_params<double>(c, seed, 0.6);
  CounterRng r(seed, 1);
  for (auto& a : p.arrays()) {
    if (a.name.find(".ln") == std::string::npos) continue;
    for (Eigen::Index k = 0; k < a.value.size(); ++k) a.value.data()[k] += r.uniform(-0.3, 0.3);
  }
  return p;
}

// Layers whose attention output and feed-forward output are zero pass X through.
ModelParams<double> passthrough_params(const ModelConfig& c) {
  auto p = random_params(c, 5);
  p[p.ids().pos_emb].setZero();
  for (const auto& l : p.ids().encoder) {
    p[l.wo].setZero();
    p[l.bo].setZero();
    p[l.ff2_w].setZero();
    p[l.ff2_b].setZero();
  }
  return p;
}

}  // namespace

TEST(AvePool, Examples) {
  Mat a(2, 2);
  a << 1, 1, 3, 3;
  EXPECT_EQ(ave_pool(a, {1, 1}), (Row(2) << 2, 2).finished());
  Mat b(1, 2);
  b << 5, 0;
  EXPECT_EQ(ave_pool(b, {1}), (Row(2) << 5, 0).finished());
}

TEST(AvePool, MatchesSummation) {
  const Mat m = random_matrix(7, 4, 3);
  const std::vector<std::uint8_t> keep = {1, 0, 1, 1, 0, 1, 1};
  Row want = Row::Zero(4);
  int count = 0;
  for (int r = 0; r < 7; ++r) {
    if (!keep[r]) continue;
    for (int c = 0; c < 4; ++c) want(c) += m(r, c);
    ++count;
  }
  want /= count;
  EXPECT_TRUE(ave_pool(m, keep).isApprox(want, 1e-14));
}

TEST(AvePool, AllMaskedThrows) {
  EXPECT_THROW(ave_pool(random_matrix(2, 2, 1), {0, 0}), DataError);
}

TEST(Encoder, PassthroughLayerReducesToAveragePool) {
  const auto p = passthrough_params(encoder_config(2, 1, false));
  Mat items(2, 2);
  items << 1, 2, 3, 4;
  const Row out = encode_history(items, p, {0, 0});
  EXPECT_DOUBLE_EQ(out(0), 2.0);
  EXPECT_DOUBLE_EQ(out(1), 3.0);
}

TEST(Encoder, SingleItemPassthroughIsIdentity) {
  const auto p = passthrough_params(encoder_config(4, 2, false));
  const Mat item = random_matrix(1, 4, 8);
  EXPECT_TRUE(encode_history(item, p, {0}).isApprox(Row(item.row(0)), 1e-15));
}

TEST(Encoder, MatchesStraightLineReference) {
  const auto p = random_params(encoder_config(4, 2, true), 17);
  const Mat items = random_matrix(3, 4, 18);
  const Row got = encode_history(items, p, {0, 0, 0});
  EXPECT_LT((got - ref::encode(p, items)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, PaddingDoesNotChangeOutput) {
  const auto p = random_params(encoder_config(4, 2, true), 21);
  const Mat items = random_matrix(3, 4, 22);
  Mat padded = Mat::Zero(5, 4);
  padded.topRows(3) = items;
  padded.bottomRows(2) = random_matrix(2, 4, 23);  // garbage in padded slots
  const Row a = encode_history(items, p, {0, 0, 0});
  const Row b = encode_history(padded, p, {0, 0, 0, 1, 1});
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Encoder, UniformAttentionWithoutPositionsIsOrderFree) {
  auto p = random_params(encoder_config(4, 1, true), 31);
  p[p.ids().pos_emb].setZero();
  for (const auto& l : p.ids().encoder) {
    p[l.wq].setZero();
    p[l.bq].setZero();
  }
  const Mat items = random_matrix(3, 4, 32);
  Mat shuffled(3, 4);
  shuffled << items.row(2), items.row(0), items.row(1);
  EXPECT_LT((encode_history(items, p, {0, 0, 0}) - encode_history(shuffled, p, {0, 0, 0}))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
}

TEST(Encoder, AllPaddingIsEmptyHistory) {
  const auto p = random_params(encoder_config(4, 1, true), 1);
  try {
    encode_history(random_matrix(2, 4, 2), p, {1, 1});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("empty history"), std::string::npos);
  }
}

TEST(Encoder, TooLongHistoryRejected) {
  const auto p = random_params(encoder_config(4, 1, true, 3), 1);
  EXPECT_THROW(encode_history(random_matrix(4, 4, 2), p, {0, 0, 0, 0}), ConfigError);
}

TEST(Encoder, UserSignalUsesSourceEmbeddings) {
  auto c = encoder_config(4, 1, true);
  c.pipeline = without_transformer();
  const auto p = random_params(c, 41);
  const auto sig = encode_user(p, "u", {1, 4});
  const Row want = (p[p.ids().src_item_emb].row(1) + p[p.ids().src_item_emb].row(4)) / 2.0;
  EXPECT_EQ(sig.user_id, "u");
  EXPECT_TRUE(sig.vector.isApprox(want, 1e-15));
}
