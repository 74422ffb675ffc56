#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "dmcdr/run.hpp"
#include "dmcdr/trainer.hpp"
#include "reference.hpp"

using namespace dmcdr;
using Mat = Matrix<double>;
using Row = RowVector<double>;

namespace {

ModelConfig tiny_config(const PipelineSpec& p = dmcdr_pipeline()) {
  ModelConfig c;
  c.n_users = 3;
  c.n_src_items = 5;
  c.n_tgt_items = 4;
  c.d1 = 4;
  c.max_history_len = 4;
  c.encoder_layers = 1;
  c.heads = 2;
  c.ff_dim = 6;
  c.mlp_layers = 2;
  c.hidden = 5;
  c.pipeline = p;
  return c;
}

struct Fixture {
  ModelParams<double> params;
  std::vector<std::vector<int>> histories = {{0, 2, 4}, {1, 3}};
  std::vector<TrainExample> batch = {{0, 0, 1, 3.0}, {2, 1, 3, 1.5}};
  std::vector<ExampleDraws> draws;
  Schedule schedule = build_schedule({5, 0.5, 0.1, 10.0});
};

Fixture make_fixture(const PipelineSpec& p = dmcdr_pipeline()) {
  Fixture f{init_params<double>(tiny_config(p), 7, 0.5)};
  f.params[f.params.ids().null_token] = ref::random_matrix(1, 4, 8);
  CounterRng rng(1);
  for (int i = 0; i < 2; ++i) f.draws.push_back(draw_example(rng, p, 4, 5, 0.0));
  f.draws[0].t = 3;
  f.draws[1].t = 5;
  f.draws[1].masked = p.conditioning == Conditioning::Guided;
  return f;
}

LossReport loss(const Fixture& f, double lambda, ModelParams<double>* grads = nullptr,
                LossWeighting w = LossWeighting::Simplified) {
  return batch_loss<double>(f.params, f.batch, f.histories, f.draws, f.schedule, lambda, w, grads);
}

RunConfig small_run() {
  RunConfig c;
  c.synthetic = true;
  c.synth.users = 300;
  c.synth.source_items = 60;
  c.synth.target_items = 60;
  c.synth.source_per_user = 8;
  c.synth.target_per_user = 5;
  c.train.d1 = 8;
  c.train.schedule.T = 20;
  c.train.batch_size = 32;
  c.train.epochs = 3;
  c.train.ff_dim = 16;
  c.train.hidden = 16;
  c.train.encoder_lr_scale = 0.1;
  c.train.lazy_embeddings = true;
  return c;
}

}  // namespace

TEST(RecLoss, Examples) {
  EXPECT_DOUBLE_EQ(rec_loss(std::vector<double>{1, 2}, std::vector<double>{1, 3}), 0.5);
  EXPECT_EQ(rec_loss(std::vector<double>{4, 2, 1}, std::vector<double>{4, 2, 1}), 0.0);
  EXPECT_THROW(rec_loss(std::vector<double>{}, std::vector<double>{}), ConfigError);
  EXPECT_THROW(rec_loss(std::vector<double>{1}, std::vector<double>{1, 2}), ConfigError);
}

TEST(RecLoss, MatchesSummation) {
  const Row a = ref::random_row(9, 1), b = ref::random_row(9, 2);
  double sum = 0.0;
  for (int i = 0; i < 9; ++i) sum += (a(i) - b(i)) * (a(i) - b(i));
  const std::vector<double> av(a.data(), a.data() + 9), bv(b.data(), b.data() + 9);
  EXPECT_NEAR(rec_loss(av, bv), sum / 9.0, 1e-15);
}

TEST(DiffusionLoss, Examples) {
  const Schedule s = build_schedule({50, 0.1, 0.1, 10.0});
  const Row u = ref::random_row(4, 3);
  EXPECT_EQ(diffusion_loss<double>(u, u, 5, s, LossWeighting::Simplified), 0.0);
  EXPECT_EQ(diffusion_loss<double>(u, u, 5, s, LossWeighting::PosteriorWeighted), 0.0);
  const Row one = (Row(2) << 1, 0).finished();
  EXPECT_EQ(diffusion_loss<double>(one, Row::Zero(2), 5, s, LossWeighting::Simplified), 1.0);
}

TEST(DiffusionLoss, PosteriorWeightingMatchesOracle) {
  // abar_4 and beta_tilde_5 for T=50, eta=0.1 from tests/oracles/schedule_oracle.py.
  const double ab4 = 0.99840265023799791624;
  const double var5 = 0.00031836834837935576449;
  const Schedule s = build_schedule({50, 0.1, 0.1, 10.0});
  const Row u0 = (Row(3) << 1.0, -2.0, 0.5).finished();
  const Row u0_hat = (Row(3) << 0.5, -1.0, 0.0).finished();
  const double want = ab4 / (2.0 * var5) * 1.5;
  EXPECT_NEAR(diffusion_loss<double>(u0, u0_hat, 5, s, LossWeighting::PosteriorWeighted), want,
              want * 1e-10);
}

TEST(DiffusionLoss, FirstStepWeightIsFinite) {
  const Schedule s = build_schedule({50, 0.1, 0.1, 10.0});
  EXPECT_DOUBLE_EQ(diffusion_weight(1, s, LossWeighting::PosteriorWeighted),
                   1.0 / (2.0 * s.beta_tilde(2)));
}

TEST(BatchLoss, MatchesStraightLineForwardPass) {
  const Fixture f = make_fixture();
  const auto& p = f.params;
  const double lambda = 0.3;
  double rec = 0.0, diff = 0.0;
  for (int i = 0; i < 2; ++i) {
    const TrainExample& ex = f.batch[i];
    const ExampleDraws& dr = f.draws[i];
    const Row u = p[p.ids().user_emb].row(ex.user);
    Mat items(static_cast<int>(f.histories[ex.history].size()), 4);
    for (int k = 0; k < items.rows(); ++k) {
      items.row(k) = p[p.ids().src_item_emb].row(f.histories[ex.history][k]);
    }
    const Row cond = dr.masked ? Row(p[p.ids().null_token].row(0)) : ref::encode(p, items);
    const Row x_t = std::sqrt(f.schedule.alpha_bar(dr.t)) * u +
                    std::sqrt(1.0 - f.schedule.alpha_bar(dr.t)) * dr.eps;
    const Row u0_hat = ref::denoise(p, x_t, cond, dr.t);
    const double y_hat = u0_hat.dot(p[p.ids().tgt_item_emb].row(ex.item));
    rec += (ex.rating - y_hat) * (ex.rating - y_hat);
    diff += (u - u0_hat).squaredNorm();
  }
  const LossReport r = loss(f, lambda);
  EXPECT_NEAR(r.rec, rec / 2, 1e-12);
  EXPECT_NEAR(r.diff, diff / 2, 1e-12);
  EXPECT_NEAR(r.total, rec / 2 + lambda * diff / 2, 1e-12);
  EXPECT_EQ(r.masked, 1u);
}

TEST(BatchLoss, GradientIsLinearInLambda) {
  const Fixture f = make_fixture();
  auto g0 = f.params.zeros_like(), g1 = f.params.zeros_like(), gh = f.params.zeros_like();
  const LossReport r0 = loss(f, 0.0, &g0);
  const LossReport r1 = loss(f, 1.0, &g1);
  const LossReport rh = loss(f, 0.5, &gh);
  EXPECT_NEAR(rh.total, 0.5 * (r0.total + r1.total), 1e-10);
  EXPECT_NEAR(rh.total, rh.rec + 0.5 * rh.diff, 1e-12);
  for (std::size_t k = 0; k < g0.arrays().size(); ++k) {
    const Mat want = 0.5 * (g0.arrays()[k].value + g1.arrays()[k].value);
    EXPECT_LT((gh.arrays()[k].value - want).cwiseAbs().maxCoeff(), 1e-10) << g0.arrays()[k].name;
  }
}

TEST(BatchLoss, LambdaZeroIsPureRatingRegression) {
  const Fixture f = make_fixture();
  auto g = f.params.zeros_like();
  const LossReport r = loss(f, 0.0, &g);
  EXPECT_EQ(r.total, r.rec);
  // Finite-difference check of d L_rec / d user_emb alone.
  auto p = f.params;
  Fixture moved = f;
  const int id = p.ids().user_emb;
  for (Eigen::Index k = 0; k < p[id].size(); ++k) {
    moved.params[id].data()[k] = f.params[id].data()[k] + 1e-6;
    const double up = loss(moved, 0.0).rec;
    moved.params[id].data()[k] = f.params[id].data()[k] - 1e-6;
    const double down = loss(moved, 0.0).rec;
    moved.params[id].data()[k] = f.params[id].data()[k];
    EXPECT_NEAR(g[id].data()[k], (up - down) / 2e-6, 1e-7);
  }
}

TEST(BatchLoss, MaskedExampleDoesNotTouchEncoder) {
  Fixture f = make_fixture();
  f.batch = {f.batch[1]};
  f.draws = {f.draws[1]};
  ASSERT_TRUE(f.draws[0].masked);
  auto g = f.params.zeros_like();
  loss(f, 1.0, &g);
  for (const auto& a : g.arrays()) {
    if (a.name.rfind("enc.", 0) == 0) EXPECT_TRUE(a.value.isZero()) << a.name;
  }
  EXPECT_FALSE(g[g.ids().null_token].isZero());
}

TEST(DrawExample, MaskRateWithinBand) {
  CounterRng rng(5);
  int masked = 0;
  for (int i = 0; i < 100000; ++i) {
    const ExampleDraws d = draw_example(rng, dmcdr_pipeline(), 2, 10, 0.1);
    masked += d.masked;
    ASSERT_GE(d.t, 1);
    ASSERT_LE(d.t, 10);
  }
  EXPECT_GE(masked, 9400);
  EXPECT_LE(masked, 10600);
  EXPECT_TRUE(draw_example(rng, without_guidance(), 2, 10, 0.1).masked);
}

TEST(TrainStep, ZeroLearningRateKeepsParameters) {
  Fixture f = make_fixture();
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.schedule = f.schedule.params();
  auto params = f.params;
  auto state = make_trainer_state(params, 3);
  const LossReport r = train_step<double>(f.batch, f.histories, params, state, cfg, f.schedule);
  EXPECT_GT(r.total, 0.0);
  for (std::size_t k = 0; k < params.arrays().size(); ++k) {
    EXPECT_EQ(params.arrays()[k].value, f.params.arrays()[k].value);
  }
}

TEST(TrainStep, LazyRowsAndEncoderScale) {
  Fixture f = make_fixture();
  TrainConfig cfg;
  cfg.schedule = f.schedule.params();
  auto params = f.params;
  auto state = make_trainer_state(params, 3, true, 0.0);
  train_step<double>(f.batch, f.histories, params, state, cfg, f.schedule);
  const int users = params.ids().user_emb;
  EXPECT_EQ(params[users].row(1), f.params[users].row(1));  // user 1 not in batch
  EXPECT_NE(params[users].row(0), f.params[users].row(0));
  for (std::size_t k = 0; k < params.arrays().size(); ++k) {
    if (params.arrays()[k].name.rfind("enc.", 0) == 0) {
      EXPECT_EQ(params.arrays()[k].value, f.params.arrays()[k].value);
    }
  }
}

TEST(TrainStep, NonFiniteLossNamesTerm) {
  Fixture f = make_fixture();
  f.params[f.params.ids().tgt_item_emb](1, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.schedule = f.schedule.params();
  auto state = make_trainer_state(f.params, 3);
  try {
    train_step<double>(f.batch, f.histories, f.params, state, cfg, f.schedule);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("L_rec"), std::string::npos);
  }
  LossReport bad;
  bad.diff = std::numeric_limits<double>::infinity();
  EXPECT_THROW(check_finite(bad), NumericError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(validate(c));
  c.batch_size = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.p_uncond = 1.5;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.lambda = -1;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Train, ZeroEpochsReturnsInitialParameters) {
  RunConfig c = small_run();
  c.train.epochs = 0;
  const Scenario s = make_scenario(c);
  const auto init = init_params<float>(model_config(c, s), c.train.seed, c.train.init_scale);
  const auto result = train(s.train, init, c.train, build_schedule(c.train.schedule));
  EXPECT_TRUE(result.history.empty());
  for (std::size_t k = 0; k < init.arrays().size(); ++k) {
    EXPECT_EQ(result.params.arrays()[k].value, init.arrays()[k].value);
  }
}

TEST(Train, LossDecreasesAndIsReproducible) {
  const RunConfig c = small_run();
  const Scenario s = make_scenario(c);
  std::vector<EpochLoss> a, b;
  train_model(c, s, &a);
  train_model(c, s, &b);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_LT(a[1].total, a[0].total);
  EXPECT_LT(a[2].total, a[1].total);
  std::ostringstream ta, tb;
  write_loss_tsv(ta, a);
  write_loss_tsv(tb, b);
  EXPECT_EQ(ta.str(), tb.str());
  // Masking over one epoch stays inside the 4-sigma binomial band.
  const double n = static_cast<double>(a[0].examples);
  EXPECT_NEAR(static_cast<double>(a[0].masked), 0.1 * n, 4.0 * std::sqrt(n * 0.09));
}
