// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "audiobook/checkpoint.hpp"
#include "audiobook/checks.hpp"
#include "audiobook/model.hpp"

using namespace audiobook;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 4;
  c.ff_mult = 2;
  return c;
}

TEST(ModelShape, ClosedFormParamCount) {
  for (ModelConfig c : {ModelConfig{}, tiny()}) {
    EXPECT_EQ(param_layout(c).total, param_count(c));
    EXPECT_EQ(init_parameters(c).size(), param_count(c));
  }
  // default config: L=2, d=64, F=256, V=128, P=64, R=5, D=16
  EXPECT_EQ(param_count(ModelConfig{}), 2u * (4 * 64 * 64 + 2 * 64 * 256 + 9 * 64 + 256) +
                                            64u * (2 * 128 + 64 + 5 + 16 + 3) + 128u);
}

TEST(ModelShape, ValidatesConfig) {
  ModelConfig c;
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = ModelConfig{};
  c.vocab = 20;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(Model(ModelConfig{}, std::vector<double>(3)), ValidationError);
}

TEST(ModelInit, SeededAndBounded) {
  const auto a = init_parameters(tiny());
  EXPECT_EQ(a, init_parameters(tiny()));
  ModelConfig other = tiny();
  other.seed = 2;
  EXPECT_NE(a, init_parameters(other));
  const auto L = param_layout(tiny());
  const auto& g = L.find("layer0.ln1.g");
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(a[g.offset + i], 1.0);
  const auto& b = L.find("head.b");
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(a[b.offset + i], 0.0);
  EXPECT_THROW(L.find("nope"), ValidationError);
}

TEST(ModelForward, CausalRows) {
  const auto cfg = tiny();
  const auto p = init_parameters(cfg);
  const Model m(cfg, p);
  const auto seq = gradcheck_sequence(WorldConfig{}, 1);
  ModelInput in = model_input(seq);
  const Mat full = m.logits(in);
  ASSERT_EQ(full.rows(), static_cast<Eigen::Index>(in.ids.size()) + 1);
  // changing the last token must not move any earlier row
  ModelInput changed = in;
  changed.ids.back() = changed.ids.back() == 70 ? 71 : 70;
  const Mat other = m.logits(changed);
  for (Eigen::Index r = 0; r + 1 < full.rows(); ++r)
    EXPECT_LT((full.row(r) - other.row(r)).cwiseAbs().maxCoeff(), 1e-12) << r;
  EXPECT_GT((full.row(full.rows() - 1) - other.row(full.rows() - 1)).cwiseAbs().maxCoeff(), 1e-9);
  // next_logits equals the last row
  EXPECT_LT((m.next_logits(in) - full.row(full.rows() - 1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ModelForward, SpeakerVectorMatters) {
  const auto cfg = tiny();
  const auto p = init_parameters(cfg);
  const Model m(cfg, p);
  const auto seq = gradcheck_sequence(WorldConfig{}, 1);
  ModelInput a = model_input(seq), b = a;
  b.speaker[0] += 0.5;
  EXPECT_NE(m.loss(a, loss_mask(seq)), m.loss(b, loss_mask(seq)));
}

TEST(ModelForward, InputChecks) {
  const auto cfg = tiny();
  const auto p = init_parameters(cfg);
  const Model m(cfg, p);
  const auto seq = gradcheck_sequence(WorldConfig{}, 1);
  ModelInput in = model_input(seq);
  in.speaker.pop_back();
  EXPECT_THROW(m.logits(in), ValidationError);
  in = model_input(seq);
  in.ids[0] = 500;
  EXPECT_THROW(m.logits(in), ValidationError);
  in = model_input(seq);
  EXPECT_THROW(m.loss(in, std::vector<std::uint8_t>(in.ids.size(), 0)), ValidationError);
  EXPECT_THROW(m.loss(in, std::vector<std::uint8_t>(2, 1)), ValidationError);
}

TEST(ModelGradient, MatchesFiniteDifferences) {
  const auto seq = gradcheck_sequence(WorldConfig{}, 3);
  const auto r = gradient_check(tiny(), seq, 60, 1e-4, 1e-4, 1e-7, 5);
  EXPECT_EQ(r.checked, 60u);
  EXPECT_EQ(r.failed, 0u) << "worst relative error " << r.worst_rel;
}

TEST(ModelGradient, ScaleAccumulates) {
  const auto cfg = tiny();
  const auto p = init_parameters(cfg);
  const Model m(cfg, p);
  const auto seq = gradcheck_sequence(WorldConfig{}, 1);
  const auto in = model_input(seq);
  const auto mask = loss_mask(seq);
  std::vector<double> g1(p.size(), 0.0), g2(p.size(), 0.0);
  m.loss(in, mask, g1, 1.0);
  m.loss(in, mask, g2, 0.5);
  m.loss(in, mask, g2, 0.5);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-12);
}

TEST(Checkpoint, BinaryRoundTrip) {
  ModelCheckpoint c = init_model(tiny());
  c.stage = 2;
  c.step = 17;
  c.rng_state = "1 2 3";
  c.log.push_back({2, 17, 0.5, std::numeric_limits<double>::quiet_NaN(), 1e-3});
  c.m[3] = 0.25;
  std::stringstream ss;
  write_checkpoint(c, ss);
  EXPECT_EQ(ss.str().substr(0, 6), "ABCKPT");
  EXPECT_EQ(read_checkpoint(ss), c);
}

TEST(Checkpoint, RejectsCorruption) {
  const ModelCheckpoint c = init_model(tiny());
  std::stringstream ss;
  write_checkpoint(c, ss);
  const std::string bytes = ss.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(cut), ParseError);
  std::stringstream bad("XXXXXXXXXXXX");
  EXPECT_THROW(read_checkpoint(bad), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

}  // namespace
