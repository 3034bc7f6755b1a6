// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "audiobook/oracle.hpp"
#include "audiobook/script.hpp"

using namespace audiobook;

namespace {

std::vector<Persona> cast() { return default_personas(4); }  // NARRATOR Tom Mary Elias

TEST(Chapters, SplitOnHeadingsAndReassemble) {
  RawDocument doc{"Preface line.\nChapter 1\nIt was dark.\n\nChapter 2\n\"Hi,\" said Tom.\n"};
  const auto spans = segment_chapters(doc);
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_EQ(spans[0].heading, "");
  EXPECT_EQ(spans[0].text(), "Preface line.");
  EXPECT_EQ(spans[1].heading, "Chapter 1\n");
  EXPECT_EQ(spans[1].text(), "It was dark.");
  EXPECT_EQ(spans[2].text(), "\"Hi,\" said Tom.");
  std::string joined;
  for (const auto& s : spans) joined += s.heading + s.body;
  EXPECT_EQ(joined, doc.text);
}

TEST(Chapters, CjkHeadingAndNoHeading) {
  const auto cjk = segment_chapters({"第一章\n夜。\n第二章\n雨。\n"});
  ASSERT_EQ(cjk.size(), 2u);
  EXPECT_EQ(cjk[1].text(), "雨。");
  const auto none = segment_chapters({"just text"});
  ASSERT_EQ(none.size(), 1u);
  EXPECT_EQ(none[0].text(), "just text");
  EXPECT_THROW(segment_chapters({""}), ValidationError);
  EXPECT_THROW(segment_chapters({"x", "("}), UsageError);
}

TEST(Utterances, QuotesBecomeDialogue) {
  const auto ex = split_utterances("The door opened. \"Who is there? Speak!\" Tom waited.");
  ASSERT_EQ(ex.lines.size(), 4u);
  EXPECT_EQ(ex.lines[0].kind, UtteranceKind::narration);
  EXPECT_EQ(ex.lines[0].text, "The door opened.");
  EXPECT_EQ(ex.lines[1].kind, UtteranceKind::dialogue);
  EXPECT_EQ(ex.lines[1].text, "Who is there?");
  EXPECT_EQ(ex.lines[2].text, "Speak!");
  EXPECT_EQ(ex.lines[1].quote_group, ex.lines[2].quote_group);
  EXPECT_EQ(ex.lines[3].text, "Tom waited.");
  EXPECT_TRUE(ex.warnings.empty());
}

TEST(Utterances, CurlyAndCornerQuotes) {
  const auto ex = split_utterances("\xE2\x80\x9CHello.\xE2\x80\x9D \xE3\x80\x8C你好。\xE3\x80\x8D");
  ASSERT_EQ(ex.lines.size(), 2u);
  EXPECT_EQ(ex.lines[0].kind, UtteranceKind::dialogue);
  EXPECT_EQ(ex.lines[1].text, "你好。");
  EXPECT_NE(ex.lines[0].quote_group, ex.lines[1].quote_group);
}

TEST(Utterances, UnbalancedQuoteWarns) {
  const auto ex = split_utterances("He said \"never mind. It rained.");
  ASSERT_EQ(ex.warnings.size(), 1u);
  for (const auto& l : ex.lines) EXPECT_EQ(l.kind, UtteranceKind::narration);
}

TEST(Utterances, QuoteSpecParsing) {
  const auto q = parse_quote_spec("\",«»");
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q[0].open, q[0].close);
  EXPECT_EQ(q[1].open, "«");
  EXPECT_EQ(q[1].close, "»");
  EXPECT_THROW(parse_quote_spec("abc"), UsageError);
  EXPECT_THROW(parse_quote_spec(""), UsageError);
}

TEST(Attribution, NamedInPrecedingNarration) {
  const auto ex = extract_utterances("Mary turned to the window. \"It is late.\"", cast());
  ASSERT_EQ(ex.lines.size(), 2u);
  EXPECT_EQ(ex.lines[0].speaker, "NARRATOR");
  EXPECT_EQ(ex.lines[1].speaker, "Mary");
}

TEST(Attribution, TrailingSpeechTag) {
  const auto ex = extract_utterances("\"Go home,\" said Tom.", cast());
  ASSERT_EQ(ex.lines.size(), 2u);
  EXPECT_EQ(ex.lines[0].speaker, "Tom");
}

TEST(Attribution, AlternationThenUnknown) {
  const std::string text =
      "Tom looked up. \"Hello.\" Mary nodded. \"Hi.\" \"Are you well?\" \"Yes.\" The rain stopped. \"Who?\"";
  const auto ex = extract_utterances(text, cast());
  std::vector<std::string> dia;
  for (const auto& l : ex.lines)
    if (l.kind == UtteranceKind::dialogue) dia.push_back(l.speaker);
  EXPECT_EQ(dia, (std::vector<std::string>{"Tom", "Mary", "Tom", "Mary", "UNKNOWN"}));
}

TEST(Attribution, WholeWordMatchOnly) {
  const auto ex = extract_utterances("Tomas arrived. \"Here.\"", cast());
  EXPECT_EQ(ex.lines.back().speaker, "UNKNOWN");
}

TEST(ContextWindows, ClippedAtChapterEdges) {
  Chapter ch;
  for (int i = 0; i < 4; ++i) {
    Utterance u;
    u.id = 10 + i;
    u.index_in_chapter = i;
    ch.utterances.push_back(u);
  }
  const auto w = build_context_windows(ch, 2, 1);
  EXPECT_EQ(w[0], (ContextWindow{10, {}, {11}}));
  EXPECT_EQ(w[2], (ContextWindow{12, {11, 10}, {13}}));
  EXPECT_EQ(w[3], (ContextWindow{13, {12, 11}, {}}));
  EXPECT_EQ(context_window_record(w[2]), R"({"record":"context","utterance":12,"pre":[11,10],"post":[13]})");
  EXPECT_THROW(build_context_windows(ch, -1, 0), ValidationError);
}

TEST(Tokenizer, LexiconHashAndLaugh) {
  const TextTokenizer tok{WorldConfig{}};
  EXPECT_EQ(tok.encode("The door, the NIGHT!"), (TextTokens{0, 2, 0, 3}));
  EXPECT_EQ(tok.token("laughed"), 31);
  EXPECT_EQ(tok.word(31), "laughed");
  EXPECT_EQ(tok.word(2), "door");
  for (const char* w : {"zebra", "quantum", "x", "你"}) {
    const TokenId t = tok.token(w);
    EXPECT_GE(t, 0);
    EXPECT_LT(t, 31);
    EXPECT_EQ(t, tok.token(w));
  }
  EXPECT_EQ(tok.words("你好，world"), (std::vector<std::string>{"你", "好", "world"}));
}

}  // namespace
