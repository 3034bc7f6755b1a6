// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "audiobook/eval.hpp"
#include "audiobook/pipeline.hpp"

using namespace audiobook;

namespace {

const WorldConfig kWorld{};

TEST(MiniNovel, SeededShape) {
  MiniNovelSpec spec;
  spec.lines_per_chapter = 10;
  const std::string a = make_mini_novel(spec);
  EXPECT_EQ(a, make_mini_novel(spec));
  EXPECT_EQ(a.rfind("Chapter 1\n", 0), 0u);
  EXPECT_NE(a.find("Chapter 2\n"), std::string::npos);
  spec.seed = 2;
  EXPECT_NE(a, make_mini_novel(spec));
}

TEST(Pipeline, VoiceCastingAndAttributionClause) {
  PipelineConfig cfg;
  EXPECT_EQ(cast_voice("NARRATOR", cfg), 0);
  EXPECT_EQ(cast_voice("mary", cfg), 2);
  EXPECT_EQ(cast_voice("UNKNOWN", cfg), 4);
  const auto ex = extract_utterances("Tom shouted angrily, \"Go. Now!\" The rain fell.", cfg.personas);
  ASSERT_EQ(ex.lines.size(), 4u);
  EXPECT_EQ(attribution_instruction(ex.lines, 1), "Tom shouted angrily,");
  EXPECT_EQ(attribution_instruction(ex.lines, 2), "Tom shouted angrily,");
  EXPECT_EQ(attribution_instruction(ex.lines, 3), "");
  EXPECT_EQ(attribution_instruction(ex.lines, 0), "");
}

TEST(Pipeline, OracleRunIsExact) {
  MiniNovelSpec spec;
  spec.lines_per_chapter = 20;
  const std::string novel = make_mini_novel(spec);
  PipelineConfig cfg;
  const auto r = pipeline_run(novel, cfg, oracle_generator(kWorld, TokenIdMap(kWorld)), kWorld);
  ASSERT_EQ(r.chapter_per.size(), 2u);
  EXPECT_EQ(r.mean_per, 0.0);
  EXPECT_EQ(r.unknown_lines, 2u);  // one unattributed opening per chapter
  bool saw_shout = false, saw_reserve = false;
  for (const auto& l : r.lines) {
    EXPECT_EQ(l.per, 0.0);
    EXPECT_FALSE(l.speech.empty());
    if (l.kind == UtteranceKind::narration) {
      EXPECT_EQ(l.voice, 0);
    }
    if (l.voice == 4) saw_reserve = true;
    if (l.instruction.find("shouted") != std::string::npos) {
      saw_shout = true;
      EXPECT_EQ(l.attrs.intensity, Intensity::high);
      EXPECT_EQ(l.attrs.volume, Volume::high);
    }
  }
  EXPECT_TRUE(saw_shout);
  EXPECT_TRUE(saw_reserve);
}

TEST(Pipeline, ScoresAgainstExtractedScript) {
  // a generator that always answers with silence scores PER 1 on every line
  const SpeechGenerator silent = [](const TokenSequence&, const Sampling&, int) { return SpeechTokens{}; };
  const auto r = pipeline_run("Chapter 1\nThe door. \"Go home,\" said Tom.\n", PipelineConfig{}, silent, kWorld);
  EXPECT_EQ(r.mean_per, 1.0);
  EXPECT_THROW(pipeline_run("", PipelineConfig{}, silent, kWorld), Error);
}

TEST(Pipeline, OutputFilesAreDeterministic) {
  MiniNovelSpec spec;
  spec.lines_per_chapter = 8;
  const auto gen = oracle_generator(kWorld, TokenIdMap(kWorld));
  const auto base = std::filesystem::temp_directory_path() / "audiobook_pipeline_test";
  for (const char* sub : {"a", "b"}) write_pipeline(pipeline_run(make_mini_novel(spec), {}, gen, kWorld), base / sub);
  for (const char* f : {"chapter_0.jsonl", "chapter_1.jsonl", "pipeline_report.txt", "pipeline_report.jsonl"}) {
    std::ifstream x(base / "a" / f), y(base / "b" / f);
    ASSERT_TRUE(x && y) << f;
    const std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
    EXPECT_EQ(sx, sy) << f;
    EXPECT_FALSE(sx.empty());
  }
  std::filesystem::remove_all(base);
}

}  // namespace
