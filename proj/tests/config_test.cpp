#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dmcdr/config.hpp"

using namespace dmcdr;

namespace {

RunConfig parse(const std::string& text, RunConfig base = {}) {
  std::istringstream in(text);
  return parse_config(in, base);
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsMatchTrainingSetup) {
  const RunConfig c;
  EXPECT_EQ(c.train.batch_size, 128);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.train.d1, 64);
  EXPECT_EQ(c.train.hidden, 64);
  EXPECT_DOUBLE_EQ(c.train.schedule.alpha_min, 0.1);
  EXPECT_DOUBLE_EQ(c.train.schedule.alpha_max, 10.0);
  EXPECT_DOUBLE_EQ(c.train.p_uncond, 0.1);
  EXPECT_DOUBLE_EQ(c.fraction, 0.2);
}

TEST(Config, ParsesKeysCommentsAndWhitespace) {
  const RunConfig c = parse(
      "# run\n"
      "  pipeline = variant3 \n"
      "\n"
      "T = 50\neta=0.25\nd1 = 16\nloss_weighting = posterior_weighted\n"
      "synthetic = true\nsynth.users = 100\nomega = 1.5\nT_prime = 7\nseed = 9\n");
  EXPECT_EQ(c.pipeline, "variant3");
  EXPECT_EQ(c.train.schedule.T, 50);
  EXPECT_DOUBLE_EQ(c.train.schedule.eta, 0.25);
  EXPECT_EQ(c.train.d1, 16);
  EXPECT_EQ(c.train.loss_weighting, LossWeighting::PosteriorWeighted);
  EXPECT_TRUE(c.synthetic);
  EXPECT_EQ(c.synth.users, 100);
  EXPECT_DOUBLE_EQ(c.infer.omega, 1.5);
  EXPECT_EQ(c.infer.T_prime, 7);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, CollectsEveryProblem) {
  const std::string what = error_of("bogus = 1\nT = ten\nno equals sign\nepochs = 3\n");
  EXPECT_NE(what.find("unknown key 'bogus'"), std::string::npos);
  EXPECT_NE(what.find("bad value for 'T'"), std::string::npos);
  EXPECT_NE(what.find("line 3"), std::string::npos);
}

TEST(Config, ValidateListsOffendingKeys) {
  RunConfig c;
  c.synthetic = true;
  c.train.lambda = 2.0;
  c.infer.T_prime = 500;
  c.pipeline = "variant9";
  try {
    validate(c);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("lambda"), std::string::npos);
    EXPECT_NE(what.find("T_prime"), std::string::npos);
    EXPECT_NE(what.find("pipeline"), std::string::npos);
  }
}

TEST(Config, PathsRequiredUnlessSynthetic) {
  RunConfig c;
  EXPECT_THROW(validate(c), ConfigError);
  c.source_path = "a.tsv";
  c.target_path = "b.tsv";
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, EtaUpperBoundInclusive) {
  RunConfig c;
  c.synthetic = true;
  c.train.schedule.eta = 1.0;
  EXPECT_NO_THROW(validate(c));
  c.train.schedule.eta = 1.01;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Config, CanonicalFormRoundTrips) {
  RunConfig c;
  c.train.learning_rate = 0.1 + 0.2;  // not exactly representable in short form
  c.pipeline = "wo_tf";
  c.synth.affinity = 3.25;
  const std::string text = to_string(c);
  EXPECT_EQ(to_string(parse(text)), text);
  EXPECT_EQ(parse(text).train.learning_rate, c.train.learning_rate);
  EXPECT_NE(text.find("pipeline = wo_tf\n"), std::string::npos);
}

TEST(Config, TPrimeDefaultsToFullRollout) {
  RunConfig c;
  EXPECT_EQ(c.infer.T_prime, kFullRollout);
  EXPECT_NE(to_string(c).find("T_prime = T\n"), std::string::npos);
  c.train.schedule.T = 40;
  EXPECT_EQ(reverse_steps(c.infer, build_schedule(c.train.schedule)), 40);
  EXPECT_EQ(parse("T_prime = 3\n").infer.T_prime, 3);
  EXPECT_EQ(parse("T_prime = 3\nT_prime = T\n").infer.T_prime, kFullRollout);
  EXPECT_NE(error_of("T_prime = -1\n").find("T_prime"), std::string::npos);
}
