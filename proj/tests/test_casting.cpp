// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "audiobook/casting.hpp"

using namespace audiobook;

namespace {

SpeakerEmbedding unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return {v, std::nullopt};
}

Utterance utt(int id, int chapter, SpeakerEmbedding e) {
  Utterance u;
  u.id = id;
  u.chapter_id = chapter;
  u.embedding = std::move(e);
  return u;
}

TEST(Similarity, CosineClampedAndChecked) {
  const auto x = unit({1, 0}), y = unit({0, 1}), z = unit({1, 1});
  EXPECT_DOUBLE_EQ(similarity(x, x), 1.0);
  EXPECT_DOUBLE_EQ(similarity(x, y), 0.0);
  EXPECT_NEAR(similarity(x, z), std::sqrt(0.5), 1e-12);
  EXPECT_THROW(similarity(x, unit({1, 0, 0})), ValidationError);
  EXPECT_THROW(similarity(x, SpeakerEmbedding{{2, 0}, {}}), ValidationError);
}

TEST(Clustering, GreedyCentroids) {
  const auto a = unit({1, 0.05}), b = unit({1, -0.05}), c = unit({0, 1});
  const std::vector<const SpeakerEmbedding*> e{&a, &c, &b, &c};
  std::vector<std::vector<double>> cents;
  EXPECT_EQ(cluster_embeddings(e, 0.9, &cents), (std::vector<int>{0, 1, 0, 1}));
  ASSERT_EQ(cents.size(), 2u);
  EXPECT_NEAR(cents[0][1], 0.0, 1e-12);  // mean of the two mirrored vectors
  EXPECT_EQ(cluster_embeddings(e, 0.0), (std::vector<int>{0, 0, 0, 0}));
  EXPECT_THROW(cluster_embeddings(e, 1.5), ValidationError);
}

class PromptSelection : public ::testing::Test {
 protected:
  // similarities to the target: 11 -> 0.95, 12 -> 0.85, 13 -> 0.6, 14 (other chapter) -> 0.99
  std::vector<Utterance> pool{
      utt(10, 0, unit({1, 0})),
      utt(11, 0, unit({0.95, std::sqrt(1 - 0.95 * 0.95)})),
      utt(12, 0, unit({0.85, std::sqrt(1 - 0.85 * 0.85)})),
      utt(13, 0, unit({0.6, 0.8})),
      utt(14, 1, unit({0.99, std::sqrt(1 - 0.99 * 0.99)})),
  };
};

TEST_F(PromptSelection, NonDecoupledUsesSelf) {
  EXPECT_EQ(select_prompt(pool[0], pool, PromptPolicy::non_decoupled()), (PromptAssignment{10, 10, 1.0, false}));
}

TEST_F(PromptSelection, LeastSimilarAboveThreshold) {
  const auto a = select_prompt(pool[0], pool, PromptPolicy::decoupled(0.8));
  EXPECT_EQ(a.prompt_utterance_id, 12);
  EXPECT_NEAR(a.similarity, 0.85, 1e-12);
  EXPECT_FALSE(a.fallback);
  EXPECT_EQ(select_prompt(pool[0], pool, PromptPolicy::decoupled(0.5)).prompt_utterance_id, 13);
  auto most = PromptPolicy::decoupled(0.5);
  most.pick = PromptPick::most_similar;
  EXPECT_EQ(select_prompt(pool[0], pool, most).prompt_utterance_id, 11);
}

TEST_F(PromptSelection, FallbackAndChapterScope) {
  const auto a = select_prompt(pool[0], pool, PromptPolicy::decoupled(0.97));
  EXPECT_TRUE(a.fallback);
  EXPECT_EQ(a.prompt_utterance_id, 11);
  auto wide = PromptPolicy::decoupled(0.97);
  wide.same_chapter_only = false;
  const auto b = select_prompt(pool[0], pool, wide);
  EXPECT_FALSE(b.fallback);
  EXPECT_EQ(b.prompt_utterance_id, 14);
  EXPECT_THROW(select_prompt(pool[0], std::span<const Utterance>(pool.data(), 1), PromptPolicy::decoupled(0.5)),
               ValidationError);
}

TEST_F(PromptSelection, LowerThresholdLowersMeanSimilarity) {
  CorpusShape sh{3, 30, 4, 0.4, 0.2, 0.15, 0.0, 3, 8, 0.1};
  const Corpus c = make_corpus(sh, WorldConfig{});
  double prev = 2.0;
  for (double t : {1.0, 0.9, 0.8, 0.68}) {
    const auto table = build_prompt_table(c, t == 1.0 ? PromptPolicy::non_decoupled() : PromptPolicy::decoupled(t));
    ASSERT_EQ(table.size(), c.utterance_count());
    const double s = mean_assignment_similarity(table, false);
    EXPECT_LE(s, prev) << t;
    prev = s;
  }
}

TEST(PromptTable, FileRoundTrip) {
  const std::vector<PromptAssignment> t{{1, 2, 0.8123456789012345, false}, {2, 1, 0.5, true}};
  const auto path = std::filesystem::temp_directory_path() / "audiobook_prompts.jsonl";
  save_prompt_table(t, path);
  EXPECT_EQ(load_prompt_table(path), t);
  std::filesystem::remove(path);
  EXPECT_EQ(prompt_record(t[1]), R"({"target":2,"prompt":1,"similarity":5.0000000000000000e-01,"fallback":true})");
  EXPECT_DOUBLE_EQ(mean_assignment_similarity(t, true), 0.8123456789012345);
}

TEST(EmotionalBank, PromptsComeFromMatchingCluster) {
  CorpusShape sh{1, 20, 4, 0.6, 0.0, 0.15, 0.0, 3, 8, 0.05};
  const Corpus c = make_corpus(sh, WorldConfig{});
  const auto bank = make_emotional_bank(c, 3, 1000000);
  ASSERT_EQ(bank.size(), 9u);
  PromptPolicy p = PromptPolicy::decoupled(0.95);
  p.include_emotional_bank = true;
  const auto table = build_prompt_table(c, p, bank);
  const auto index = c.index();
  for (const auto& a : table) {
    if (a.prompt_utterance_id < 1000000) continue;
    const auto& b = bank[static_cast<std::size_t>(a.prompt_utterance_id - 1000000)];
    EXPECT_EQ(b.speaker_id, index.at(a.target_utterance_id)->speaker_id);
  }
}

}  // namespace
