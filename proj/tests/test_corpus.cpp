// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "audiobook/corpus.hpp"
#include "audiobook/oracle.hpp"

using namespace audiobook;

namespace {

Corpus small_corpus() {
  CorpusShape sh{2, 12, 4, 0.5, 0.2, 0.3, 0.2, 3, 8, 0.1, 0, 0, 0.1};
  return make_corpus(sh, WorldConfig{});
}

std::string dump(const Corpus& c) {
  std::ostringstream os;
  write_corpus(c, os);
  return os.str();
}

Corpus parse(const std::string& s) {
  std::istringstream is(s);
  return read_corpus(is);
}

TEST(CorpusFile, RoundTripIsBitExact) {
  const Corpus c = small_corpus();
  EXPECT_TRUE(validate_corpus(c).empty());
  const std::string text = dump(c);
  const Corpus back = parse(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(dump(back), text);
}

TEST(CorpusFile, SaveLoadThroughDisk) {
  const auto path = std::filesystem::temp_directory_path() / "audiobook_test_corpus.jsonl";
  const Corpus c = small_corpus();
  save_corpus(c, path);
  EXPECT_EQ(load_corpus(path), c);
  std::filesystem::remove(path);
  EXPECT_THROW(load_corpus(path), IoError);
}

TEST(CorpusFile, HeaderLayout) {
  const std::string text = dump(small_corpus());
  const std::string first = text.substr(0, text.find('\n'));
  EXPECT_EQ(first,
            R"({"record":"header","format":"audiobook-corpus/1","seed":1,"text_vocab":32,"speech_vocab":64,)"
            R"("embedding_dim":16,"ratio":1,"rule":[3,5,7,11],"laugh_marker":31,"emotion_index":[0,1,3,5],)"
            R"("intensity_index":[1,2],"personas":4,"chapters":2})");
}

TEST(CorpusFile, TruncationReportsParseError) {
  std::string text = dump(small_corpus());
  text.resize(text.rfind('\n', text.size() - 2) + 1);  // drop the last utterance
  EXPECT_THROW(parse(text), ParseError);
  EXPECT_THROW(parse(""), ParseError);
}

TEST(CorpusFile, MalformedLineCarriesLineNumber) {
  std::string text = dump(small_corpus());
  const auto pos = text.find('\n') + 1;
  text.insert(pos, "{not json\n");
  try {
    parse(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(CorpusFile, UnknownEnumIsParseError) {
  std::string text = dump(small_corpus());
  const auto pos = text.find("\"intensity\":\"");
  ASSERT_NE(pos, std::string::npos);
  const auto start = pos + 13;
  text.replace(start, text.find('"', start) - start, "mega");
  EXPECT_THROW(parse(text), ParseError);
}

TEST(CorpusValidation, FlagsEachBrokenInvariant) {
  Corpus c = small_corpus();
  auto& u = c.chapters[0].utterances[3];
  u.speaker_id = 99;
  u.text.push_back(40);
  u.embedding.values[0] += 0.5;
  u.attributes.emotions = {{Emotion::angry, 0.5}, {Emotion::neutral, 0.5}};
  c.chapters[1].utterances[0].id = c.chapters[0].utterances[0].id;
  c.chapters[1].utterances[2].index_in_chapter = 7;
  const auto v = validate_corpus(c);
  std::set<std::string> fields;
  for (const auto& x : v) fields.insert(x.field);
  for (const char* f : {"speaker_id", "text", "speech", "embedding", "attributes", "id", "index_in_chapter"})
    EXPECT_TRUE(fields.contains(f)) << f;
  EXPECT_THROW(throw_if_invalid(c), ValidationError);
}

TEST(CorpusValidation, AttributeRules) {
  InstructionAttributes a;
  EXPECT_EQ(attribute_violation(a), "");
  a.emotions = {{Emotion::angry, 0.75}, {Emotion::sad, 0.25}};
  EXPECT_EQ(attribute_violation(a), "");
  a.emotions = {{Emotion::angry, 0.75}, {Emotion::angry, 0.25}};
  EXPECT_NE(attribute_violation(a), "");
  a.emotions = {{Emotion::angry, 0.5}, {Emotion::sad, 0.25}};
  EXPECT_EQ(attribute_violation(a), "weights sum != 1");
  a.emotions = {};
  EXPECT_NE(attribute_violation(a), "");
}

TEST(CorpusPersona, DefaultCast) {
  const auto ps = default_personas(5);
  ASSERT_EQ(ps.size(), 5u);
  EXPECT_EQ(ps[0].name, "NARRATOR");
  EXPECT_EQ(ps[1].name, "Tom");
  EXPECT_EQ(ps[2].name, "Mary");
  EXPECT_TRUE(ps[3].traits.contains("elderly"));
  EXPECT_TRUE(ps[3].traits.contains("ill"));
}

TEST(CorpusLaugh, PreContextCarry) {
  Chapter ch;
  ch.utterances.resize(3);
  ch.utterances[0].text = {1, 31, 2};
  ch.utterances[1].text = {4};
  WorldConfig w;
  EXPECT_FALSE(pre_context_has_laugh(ch, 0, w));
  EXPECT_TRUE(pre_context_has_laugh(ch, 1, w));
  EXPECT_FALSE(pre_context_has_laugh(ch, 2, w));
}

}  // namespace
