// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "audiobook/distill.hpp"
#include "audiobook/eval.hpp"

using namespace audiobook;

namespace {

const TokenIdMap kMap;

class Distill : public ::testing::Test {
 protected:
  Corpus corpus = make_corpus(CorpusShape{2, 30, 4, 0.6, 0.2, 0.15, 0.0, 3, 8, 0.1}, WorldConfig{});
  DistillSpec spec = [&] {
    DistillSpec s;
    for (const auto& ch : corpus.chapters)
      for (const auto& u : ch.utterances)
        if (u.kind == UtteranceKind::dialogue && s.source_utterances.size() < 12) s.source_utterances.push_back(u.id);
    s.grid = make_grid(kNonNeutralEmotions, kIntensities);
    s.seed = 4;
    return s;
  }();

  // Oracle with every seventh call corrupted in its first token (7 and the 6-cell
  // grid are coprime, so every cell sees clean and corrupted samples).
  SpeechGenerator noisy() const {
    auto base = oracle_generator(corpus.world, kMap);
    return [base, n = std::make_shared<int>(0)](const TokenSequence& p, const Sampling& s, int max_len) {
      auto out = base(p, s, max_len);
      if ((*n)++ % 7 == 0 && !out.empty()) out[0] = (out[0] + 1) % 64;
      return out;
    };
  }
};

TEST_F(Distill, OracleCandidatesAreClean) {
  const CorpusView view(corpus);
  const auto c = synthesize_candidates(oracle_generator(corpus.world, kMap), view, spec, kMap);
  ASSERT_EQ(c.size(), 12u * 6u);
  std::set<int> ids;
  for (const auto& s : c) {
    ids.insert(s.sample_id);
    EXPECT_EQ(s.per, 0.0);
    EXPECT_GT(s.ss, 0.85);  // jittered voiceprints stay close to the speaker base
    EXPECT_EQ(s.speaker_id, view.at(s.source_utterance).speaker_id);
    EXPECT_FALSE(s.attrs.mixed());
  }
  EXPECT_EQ(ids.size(), c.size());
  // only the pitch band can reject clean renderings
  const auto f = filter_candidates(c, FilterThresholds{}, pitch_statistics(c, &view));
  for (const auto& r : f.rejected) EXPECT_EQ(r.reason, RejectReason::pitch);
  EXPECT_TRUE(filter_candidates(c, FilterThresholds{0.0, 0.85, 100.0}, pitch_statistics(c, &view)).rejected.empty());
}

TEST_F(Distill, DetectSpeakerFindsRenderer) {
  const auto& u = corpus.chapters[0].utterances[0];
  const auto a = InstructionAttributes::single(Emotion::happy, Intensity::high);
  for (int spk = 0; spk < 4; ++spk)
    EXPECT_EQ(detect_speaker(oracle_speech_tokens(u.text, spk, a, false, corpus.world), u.text, a, false, corpus), spk);
}

TEST_F(Distill, FilterReasonsAndMonotonicity) {
  const CorpusView view(corpus);
  const auto c = synthesize_candidates(noisy(), view, spec, kMap);
  const auto stats = pitch_statistics(c, &view);
  const auto loose = filter_candidates(c, {1.0, 0.0, 100.0}, stats);
  const auto mid = filter_candidates(c, {0.05, 0.8, 2.0}, stats);
  const auto strict = filter_candidates(c, {0.0, 0.9, 1.0}, stats);
  EXPECT_EQ(loose.kept.size(), c.size());
  auto id_set = [](const FilterResult& f) {
    std::set<int> s;
    for (const auto& x : f.kept) s.insert(x.sample_id);
    return s;
  };
  const auto L = id_set(loose), M = id_set(mid), S = id_set(strict);
  EXPECT_TRUE(std::includes(L.begin(), L.end(), M.begin(), M.end()));
  EXPECT_TRUE(std::includes(M.begin(), M.end(), S.begin(), S.end()));
  EXPECT_LT(M.size(), L.size());
  for (const auto& s : mid.rejected) {
    EXPECT_NE(s.reason, RejectReason::none);
    if (s.reason == RejectReason::per) {
      EXPECT_GT(s.per, 0.05);
    }
  }
  for (const auto& s : mid.kept) EXPECT_LE(s.per, 0.05);
  EXPECT_EQ(mid.kept.size() + mid.rejected.size(), c.size());
  EXPECT_THROW(filter_candidates(c, {1.5, 0.0, 1.0}, stats), ValidationError);
}

TEST_F(Distill, BalanceHitsTargetsExactly) {
  const CorpusView view(corpus);
  const auto c = synthesize_candidates(oracle_generator(corpus.world, kMap), view, spec, kMap);
  CellTargets t = uniform_targets(spec.grid, 5);
  t[0].second = 20;  // more than the 12 available: duplicates
  const auto b = balance_intensity(c, t, 1);
  std::map<Cell, int> hist;
  std::set<int> ids;
  for (const auto& s : b) {
    ++hist[s.cell()];
    ids.insert(s.sample_id);
  }
  EXPECT_EQ(ids.size(), b.size());
  EXPECT_EQ(hist[t[0].first], 20);
  for (std::size_t k = 1; k < t.size(); ++k) EXPECT_EQ(hist[t[k].first], 5);
  int dups = 0;
  for (const auto& s : b)
    if (s.sample_id != s.parent_id) ++dups;
  EXPECT_EQ(dups, 8);
  // seeded subsampling
  const auto again = balance_intensity(c, t, 1);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(again[i].sample_id, b[i].sample_id);
  CellTargets missing{{Cell{Emotion::neutral, Intensity::low}, 1}};
  EXPECT_THROW(balance_intensity(c, missing, 1), ValidationError);
}

TEST_F(Distill, EndToEndDatasetAndAudit) {
  const auto r = run_distillation(noisy(), corpus, spec, FilterThresholds{}, uniform_targets(spec.grid, 6), kMap);
  EXPECT_EQ(r.dataset.size(), 36u);
  EXPECT_EQ(r.audit.total_candidates, 72u);
  EXPECT_EQ(r.audit.total_balanced, 36u);
  EXPECT_EQ(r.audit.total_kept + r.filtered.rejected.size(), 72u);
  for (std::size_t i = 0; i < r.dataset.size(); ++i) {
    const auto parts = parse_sequence(r.dataset[i].ids, kMap);
    ASSERT_TRUE(parts.instruction && parts.context);
    EXPECT_EQ(parse_attribute_tokens(*parts.instruction, kMap), r.balanced[i].attrs);
    EXPECT_EQ(parts.speech, r.balanced[i].speech);
  }
  EXPECT_NE(r.audit.table().find("angry/high"), std::string::npos);
  const auto dir = std::filesystem::temp_directory_path() / "audiobook_distill_test";
  write_distillation(r, dir);
  EXPECT_EQ(load_dataset(dir / "dataset.jsonl", kMap).size(), 36u);
  EXPECT_TRUE(std::filesystem::exists(dir / "audit.jsonl"));
  std::filesystem::remove_all(dir);
}

TEST_F(Distill, NeedsStageTwoCheckpoint) {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_heads = 1;
  mc.n_layers = 1;
  EXPECT_THROW(run_distillation(init_model(mc), corpus, spec, {}, uniform_targets(spec.grid, 1), kMap),
               ValidationError);
}

}  // namespace
