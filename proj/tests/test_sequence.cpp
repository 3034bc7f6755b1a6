// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "audiobook/checks.hpp"
#include "audiobook/config.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/sequence.hpp"

using namespace audiobook;

namespace {

const TokenIdMap kMap;  // text offset 32, speech offset 64

TEST(Layout, FullSequenceIds) {
  SequenceParts p;
  p.context = SequenceParts::Context{{1, 2}, {3}};
  p.instruction = render_attribute_tokens(InstructionAttributes::single(Emotion::sad, Intensity::low), kMap);
  p.text = {4, 5};
  p.speech = {6, 7};
  const auto s = assemble(p, {}, kMap);
  EXPECT_EQ(s.ids, (std::vector<TokenId>{3, 33, 34, 4, 5, 35, 6, 0, 7, 19, 24, 27, 30, 8, 36, 37, 1, 70, 71, 2}));
  EXPECT_EQ(s.context_block, (std::pair<std::size_t, std::size_t>{0, 7}));
  EXPECT_EQ(s.start, 7u);
  EXPECT_EQ(s.instruction_block, (std::pair<std::size_t, std::size_t>{8, 14}));
  EXPECT_EQ(s.text_block, (std::pair<std::size_t, std::size_t>{14, 16}));
  EXPECT_EQ(s.switch_index, 16u);
  EXPECT_EQ(s.speech_block, (std::pair<std::size_t, std::size_t>{17, 19}));
  EXPECT_TRUE(s.terminated());
  EXPECT_EQ(loss_mask(s), (std::vector<std::uint8_t>{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(block_positions(s.ids),
            (std::vector<int>{0, 1, 2, 0, 0, 1, 0, 0, 0, 1, 2, 3, 4, 0, 1, 2, 0, 1, 2, 0}));
}

TEST(Layout, PlainAndSkeleton) {
  SequenceParts p;
  p.text = {0};
  p.speech = {};
  EXPECT_EQ(assemble(p, {}, kMap).ids, (std::vector<TokenId>{0, 32, 1, 2}));
  EXPECT_EQ(assemble(p, {}, kMap, {true}).ids, (std::vector<TokenId>{3, 4, 5, 6, 0, 7, 8, 32, 1, 2}));
  // E right after T is still a target: an empty rendering is a valid prediction
  EXPECT_EQ(loss_mask(assemble(p, {}, kMap)), (std::vector<std::uint8_t>{0, 0, 0, 1}));
}

TEST(Layout, RejectsOutOfRangeTokens) {
  SequenceParts p;
  p.text = {32};
  EXPECT_THROW(assemble(p, {}, kMap), ValidationError);
  p.text = {1};
  p.speech = {64};
  EXPECT_THROW(assemble(p, {}, kMap), ValidationError);
  p.speech = {};
  p.instruction = std::vector<TokenId>{40};
  EXPECT_THROW(assemble(p, {}, kMap), ValidationError);
  EXPECT_THROW(build_instruction_block(std::vector<TokenId>{17, 2}, kMap), ValidationError);
}

TEST(Parse, RandomRoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const SequenceParts p = random_parts(rng, kMap);
    const auto s = assemble(p, {}, kMap);
    EXPECT_EQ(parse_sequence(s.ids, kMap), p);
  }
}

TEST(Parse, ReportsFirstBadIndex) {
  try {
    parse_sequence(std::vector<TokenId>{0, 33, 70, 1}, kMap);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("index 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_sequence(std::vector<TokenId>{}, kMap), ParseError);
  EXPECT_THROW(parse_sequence(std::vector<TokenId>{0, 33, 1, 70, 2, 70}, kMap), ParseError);
  EXPECT_THROW(parse_sequence(std::vector<TokenId>{3, 33, 0}, kMap), ParseError);
  const auto open = parse_sequence(std::vector<TokenId>{0, 33, 1, 70}, kMap);
  EXPECT_FALSE(open.terminated);
}

class CorpusSequences : public ::testing::Test {
 protected:
  Corpus corpus = make_corpus(CorpusShape{2, 10, 4, 0.5, 0.3, 0.2, 0.0, 3, 8, 0.1}, WorldConfig{});
  UtteranceIndex index = corpus.index();
};

TEST_F(CorpusSequences, TrainingSequenceUsesNeighbourTextAndPrompt) {
  const auto& ch = corpus.chapters[0];
  const auto windows = build_context_windows(ch, 1, 1);
  const Utterance& u = ch.utterances[4];
  const PromptAssignment pa{u.id, ch.utterances[2].id, 0.9, false};
  const auto s = build_training_sequence(u, windows[4], pa, std::nullopt, kMap, {true, true, {}}, index);
  const auto parts = parse_sequence(s.ids, kMap);
  EXPECT_EQ(parts.context->pre, ch.utterances[3].text);
  EXPECT_EQ(parts.context->post, ch.utterances[5].text);
  EXPECT_EQ(parse_attribute_tokens(*parts.instruction, kMap), u.attributes);
  EXPECT_EQ(parts.speech, u.speech);
  EXPECT_EQ(s.speaker, ch.utterances[2].embedding);
  EXPECT_THROW(build_training_sequence(u, windows[4], {u.id + 1, u.id, 1.0, false}, std::nullopt, kMap, {}, index),
               ValidationError);
  EXPECT_THROW(build_training_sequence(u, windows[4], {u.id, 999999, 1.0, false}, std::nullopt, kMap, {}, index),
               ValidationError);
}

TEST_F(CorpusSequences, InferencePrefixMatchesTrainingUpToT) {
  const auto& ch = corpus.chapters[1];
  const auto windows = build_context_windows(ch, 1, 1);
  for (std::size_t i = 0; i < ch.utterances.size(); ++i) {
    const Utterance& u = ch.utterances[i];
    const auto train =
        build_training_sequence(u, windows[i], {u.id, u.id, 1.0, false}, std::nullopt, kMap, {true, true, {}}, index);
    const auto prefix = build_inference_prefix(InferenceMode::ctx_inst,
                                               inference_inputs(u, windows[i], u.embedding, u.attributes, index), kMap);
    ASSERT_EQ(prefix.ids.size(), train.switch_index + 1);
    EXPECT_TRUE(std::equal(prefix.ids.begin(), prefix.ids.end(), train.ids.begin()));
  }
  InferenceInputs in;
  in.text = {1};
  EXPECT_THROW(build_inference_prefix(InferenceMode::ctx, in, kMap), ValidationError);
  EXPECT_THROW(build_inference_prefix(InferenceMode::inst, in, kMap), ValidationError);
  EXPECT_EQ(build_inference_prefix(InferenceMode::plain, in, kMap).ids, (std::vector<TokenId>{0, 33, 1}));
}

TEST_F(CorpusSequences, DatasetFileRoundTrip) {
  const auto& ch = corpus.chapters[0];
  const auto windows = build_context_windows(ch, 1, 1);
  std::vector<TokenSequence> data;
  for (std::size_t i = 0; i < ch.utterances.size(); ++i) {
    const Utterance& u = ch.utterances[i];
    data.push_back(build_training_sequence(u, windows[i], {u.id, u.id, 1.0, false}, std::nullopt, kMap,
                                           {i % 2 == 0, i % 3 == 0, {}}, index));
  }
  const auto path = std::filesystem::temp_directory_path() / "audiobook_dataset.jsonl";
  save_dataset(data, path);
  const auto back = load_dataset(path, kMap);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].ids, data[i].ids);
    EXPECT_EQ(back[i].roles, data[i].roles);
    EXPECT_EQ(back[i].speaker.values, data[i].speaker.values);
  }
  std::filesystem::remove(path);
}

TEST(ModeNames, ParseAndPrint) {
  for (auto m : {InferenceMode::plain, InferenceMode::ctx, InferenceMode::inst, InferenceMode::ctx_inst})
    EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_THROW(parse_mode("loud"), UsageError);
}

TEST(GoldenLayout, ReferenceCorpusMatchesCheckedInDump) {
  const auto cfg = load_config(std::filesystem::path(AUDIOBOOK_SOURCE_DIR) / "data/reference_config.json");
  std::ifstream is(std::filesystem::path(AUDIOBOOK_SOURCE_DIR) / "tests/golden/sequence_layout.txt");
  ASSERT_TRUE(is);
  const std::string golden((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string d = layout_dump(make_corpus(cfg.corpus, cfg.world));
  EXPECT_NE(d.find("## ctx_inst"), std::string::npos);
  EXPECT_EQ(d, golden);
}

}  // namespace
