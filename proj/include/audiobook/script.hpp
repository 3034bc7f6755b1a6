// SPDX-License-Identifier: Apache-2.0
//
// Fiction text -> chapters -> narration/dialogue sentences -> speakers -> context windows.
#pragma once

#include <algorithm>
#include <cctype>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "audiobook/corpus.hpp"
#include "audiobook/error.hpp"
#include "audiobook/rng.hpp"
#include "audiobook/types.hpp"

namespace audiobook {

inline constexpr std::string_view kNarrator = "NARRATOR";
inline constexpr std::string_view kUnknownSpeaker = "UNKNOWN";

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// ----------------------------------------------------------------------------
// Chapters

struct RawDocument {
  std::string text;
  std::string chapter_delimiter_pattern = R"(^\s*(Chapter\b|第.*章))";
};

/// One chapter: the delimiter line (possibly empty for a preamble) and the raw body.
/// heading + body over all spans reproduces the document exactly.
struct ChapterSpan {
  std::string heading;
  std::string body;
  std::string text() const { return trim(body); }
};

inline std::vector<ChapterSpan> segment_chapters(const RawDocument& doc) {
  if (doc.text.empty()) throw ValidationError("raw document is empty");
  std::regex delim;
  try {
    delim = std::regex(doc.chapter_delimiter_pattern);
  } catch (const std::regex_error& e) {
    throw UsageError("bad chapter pattern: " + std::string(e.what()));
  }
  std::vector<ChapterSpan> spans;
  ChapterSpan cur;
  bool any_delimiter = false;
  std::size_t pos = 0;
  while (pos < doc.text.size()) {
    std::size_t nl = doc.text.find('\n', pos);
    const std::size_t end = nl == std::string::npos ? doc.text.size() : nl + 1;
    std::string line = doc.text.substr(pos, end - pos);
    std::string bare = line;
    if (!bare.empty() && bare.back() == '\n') bare.pop_back();
    if (!bare.empty() && bare.back() == '\r') bare.pop_back();
    if (std::regex_search(bare, delim)) {
      // Text before the first heading is its own span when present.
      if (any_delimiter || !cur.body.empty()) spans.push_back(std::move(cur));
      cur = ChapterSpan{line, {}};
      any_delimiter = true;
    } else {
      cur.body += line;
    }
    pos = end;
  }
  spans.push_back(std::move(cur));
  return spans;
}

// ----------------------------------------------------------------------------
// Utterances

struct QuotePair {
  std::string open;
  std::string close;
};

inline std::vector<QuotePair> default_quotes() {
  return {{"\"", "\""}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"\xE3\x80\x8C", "\xE3\x80\x8D"}};
}

/// Parses "ab,“”,「」" style flag values: each comma-separated item is an
/// open/close pair of UTF-8 code points (a single code point means open = close).
inline std::vector<QuotePair> parse_quote_spec(std::string_view spec) {
  auto code_points = [](std::string_view s) {
    std::vector<std::string> cps;
    for (std::size_t i = 0; i < s.size();) {
      const auto c = static_cast<unsigned char>(s[i]);
      const std::size_t n = c < 0x80 ? 1 : (c >> 5) == 6 ? 2 : (c >> 4) == 14 ? 3 : 4;
      cps.emplace_back(s.substr(i, n));
      i += n;
    }
    return cps;
  };
  std::vector<QuotePair> out;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t comma = spec.find(',', start);
    const auto item = spec.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                          : comma - start);
    const auto cps = code_points(item);
    if (cps.size() == 1) out.push_back({cps[0], cps[0]});
    else if (cps.size() == 2) out.push_back({cps[0], cps[1]});
    else if (!cps.empty()) throw UsageError("quote pair '" + std::string(item) + "' must be 1 or 2 characters");
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw UsageError("empty quote specification");
  return out;
}

struct ScriptLine {
  UtteranceKind kind = UtteranceKind::narration;
  std::string text;
  std::string speaker;  // filled by attribution
  int quote_group = -1; // dialogue sentences from one quotation share a group
};

struct Extraction {
  std::vector<ScriptLine> lines;
  std::vector<std::string> warnings;
};

namespace detail {

inline const std::vector<std::string_view>& sentence_terminators() {
  static const std::vector<std::string_view> t{".", "!", "?", "\xE3\x80\x82", "\xEF\xBC\x81",
                                               "\xEF\xBC\x9F"};
  return t;
}

/// Splits after every terminator run; trailing text without a terminator is kept.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0, i = 0;
  auto terminator_at = [&](std::size_t p) -> std::size_t {
    for (auto t : sentence_terminators())
      if (text.substr(p, t.size()) == t) return t.size();
    return 0;
  };
  while (i < text.size()) {
    if (std::size_t n = terminator_at(i); n > 0) {
      i += n;
      while (i < text.size() && terminator_at(i) > 0) i += terminator_at(i);
      if (auto s = trim(text.substr(start, i - start)); !s.empty()) out.push_back(std::move(s));
      start = i;
    } else {
      ++i;
    }
  }
  if (auto s = trim(text.substr(start)); !s.empty()) out.push_back(std::move(s));
  return out;
}

}  // namespace detail

/// Quote-delimited text becomes dialogue, everything else narration; both are
/// sentence-split. An unmatched opening quote is reported and the remainder is narration.
inline Extraction split_utterances(std::string_view chapter_text,
                                   const std::vector<QuotePair>& quotes = default_quotes()) {
  Extraction ex;
  std::string narration;
  int group = 0;
  auto flush_narration = [&] {
    for (auto& s : detail::split_sentences(narration))
      ex.lines.push_back({UtteranceKind::narration, std::move(s), {}, -1});
    narration.clear();
  };
  std::size_t i = 0;
  while (i < chapter_text.size()) {
    const QuotePair* q = nullptr;
    for (const auto& p : quotes)
      if (chapter_text.substr(i, p.open.size()) == p.open) {
        q = &p;
        break;
      }
    if (q == nullptr) {
      narration += chapter_text[i++];
      continue;
    }
    const std::size_t body = i + q->open.size();
    const std::size_t close = chapter_text.find(q->close, body);
    if (close == std::string_view::npos) {
      ex.warnings.push_back("unbalanced quote at byte " + std::to_string(i) +
                            "; remainder treated as narration");
      narration += chapter_text.substr(i);
      i = chapter_text.size();
      break;
    }
    flush_narration();
    for (auto& s : detail::split_sentences(chapter_text.substr(body, close - body)))
      ex.lines.push_back({UtteranceKind::dialogue, std::move(s), {}, group});
    ++group;
    i = close + q->close.size();
  }
  flush_narration();
  return ex;
}

// ----------------------------------------------------------------------------
// Speaker attribution

/// Extension point for an external analyzer; the default is a rule cascade.
class SpeakerAttributor {
 public:
  virtual ~SpeakerAttributor() = default;
  /// Returns one speaker name per line: NARRATOR for narration, a persona name or UNKNOWN.
  virtual std::vector<std::string> attribute(const std::vector<ScriptLine>& lines,
                                             const std::vector<Persona>& personas) const = 0;
};

namespace detail {

inline bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || (static_cast<unsigned char>(c) & 0x80);
}

/// Position of the last whole-word occurrence of `name` in `text`, or npos.
inline std::size_t last_name_position(std::string_view text, std::string_view name) {
  std::size_t best = std::string_view::npos;
  if (name.empty()) return best;
  for (std::size_t p = text.find(name); p != std::string_view::npos; p = text.find(name, p + 1)) {
    const bool left = p == 0 || !is_word_char(text[p - 1]);
    const bool right = p + name.size() >= text.size() || !is_word_char(text[p + name.size()]);
    if (left && right) best = p;
  }
  return best;
}

/// Persona mentioned in `text` (the one nearest the end when several are).
inline std::optional<std::string> mentioned_persona(std::string_view text,
                                                    const std::vector<Persona>& personas,
                                                    bool prefer_last) {
  std::optional<std::string> hit;
  std::size_t hit_pos = 0;
  for (const auto& p : personas) {
    if (p.name == kNarrator || p.name == kUnknownSpeaker) continue;
    const std::size_t pos = last_name_position(text, p.name);
    if (pos == std::string_view::npos) continue;
    if (!hit || (prefer_last ? pos > hit_pos : pos < hit_pos)) {
      hit = p.name;
      hit_pos = pos;
    }
  }
  return hit;
}

}  // namespace detail

/// (1) a persona named in the narration adjoining the quotation; (2) two-party
/// alternation within a running exchange; (3) UNKNOWN.
class RuleCascadeAttributor : public SpeakerAttributor {
 public:
  std::vector<std::string> attribute(const std::vector<ScriptLine>& lines,
                                     const std::vector<Persona>& personas) const override {
    std::vector<std::string> out(lines.size());
    std::vector<std::string> history;  // attributed dialogue speakers, one per quotation
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const ScriptLine& l = lines[i];
      if (l.kind == UtteranceKind::narration) {
        out[i] = std::string(kNarrator);
        continue;
      }
      if (i > 0 && lines[i - 1].kind == UtteranceKind::dialogue &&
          lines[i - 1].quote_group == l.quote_group) {
        out[i] = out[i - 1];
        continue;
      }
      std::optional<std::string> who;
      if (i > 0 && lines[i - 1].kind == UtteranceKind::narration)
        who = detail::mentioned_persona(lines[i - 1].text, personas, true);
      if (!who) {
        // `"Hi," said Tom.`: the quotation's last sentence ends without a terminator.
        std::size_t last = i;
        while (last + 1 < lines.size() && lines[last + 1].quote_group == l.quote_group) ++last;
        const std::string& tail = lines[last].text;
        if (!tail.empty() && tail.back() == ',' && last + 1 < lines.size() &&
            lines[last + 1].kind == UtteranceKind::narration)
          who = detail::mentioned_persona(lines[last + 1].text, personas, false);
      }
      const bool in_exchange = i > 0 && lines[i - 1].kind == UtteranceKind::dialogue;
      if (!who && in_exchange && history.size() >= 2 &&
          history[history.size() - 1] != history[history.size() - 2])
        who = history[history.size() - 2];
      if (who) {
        history.push_back(*who);
        out[i] = *who;
      } else {
        out[i] = std::string(kUnknownSpeaker);
      }
    }
    return out;
  }
};

inline std::vector<std::string> attribute_speakers(const std::vector<ScriptLine>& lines,
                                                   const std::vector<Persona>& personas) {
  return RuleCascadeAttributor{}.attribute(lines, personas);
}

inline Extraction extract_utterances(std::string_view chapter_text,
                                     const std::vector<Persona>& personas,
                                     const std::vector<QuotePair>& quotes = default_quotes(),
                                     const SpeakerAttributor& attributor = RuleCascadeAttributor{}) {
  Extraction ex = split_utterances(chapter_text, quotes);
  const auto names = attributor.attribute(ex.lines, personas);
  for (std::size_t i = 0; i < ex.lines.size(); ++i) ex.lines[i].speaker = names[i];
  return ex;
}

// ----------------------------------------------------------------------------
// Context windows

struct ContextWindow {
  int utterance_id = 0;
  std::vector<int> pre;   // nearest first
  std::vector<int> post;  // nearest first
  bool operator==(const ContextWindow&) const = default;
};

inline std::vector<ContextWindow> build_context_windows(const Chapter& chapter, int k_pre,
                                                        int k_post) {
  if (k_pre < 0 || k_post < 0) throw ValidationError("context sizes must be >= 0");
  std::vector<ContextWindow> out;
  const int n = static_cast<int>(chapter.utterances.size());
  for (int i = 0; i < n; ++i) {
    ContextWindow w;
    w.utterance_id = chapter.utterances[static_cast<std::size_t>(i)].id;
    for (int k = 1; k <= k_pre && i - k >= 0; ++k)
      w.pre.push_back(chapter.utterances[static_cast<std::size_t>(i - k)].id);
    for (int k = 1; k <= k_post && i + k < n; ++k)
      w.post.push_back(chapter.utterances[static_cast<std::size_t>(i + k)].id);
    out.push_back(std::move(w));
  }
  return out;
}

inline std::string context_window_record(const ContextWindow& w) {
  return fmt::format(R"({{"record":"context","utterance":{},"pre":{},"post":{}}})", w.utterance_id,
                     detail::int_list(w.pre), detail::int_list(w.post));
}

// ----------------------------------------------------------------------------
// Text tokenizer

/// Maps words to text-token ids: a fixed word list first, then a stable hash into
/// the non-laugh part of the vocabulary. Laughter words map to the laugh marker.
class TextTokenizer {
 public:
  explicit TextTokenizer(const WorldConfig& cfg) : cfg_(cfg) {}

  static const std::vector<std::string>& lexicon() {
    static const std::vector<std::string> words{
        "the",  "a",     "door",     "night",   "rain",    "old",     "house",  "road",
        "light", "went", "came",     "stood",   "quiet",   "dark",    "river",  "cold",
        "said", "shouted", "whispered", "angrily", "happily", "sadly", "softly", "tom",
        "mary", "elias", "we",       "you",     "now",     "home",    "again"};
    return words;
  }
  static bool is_laugh_word(std::string_view w) {
    return w == "laughed" || w == "laughing" || w == "laugh" || w == "giggled" ||
           w == "chuckled" || w == "haha";
  }

  std::vector<std::string> words(std::string_view text) const {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    };
    for (std::size_t i = 0; i < text.size();) {
      const auto c = static_cast<unsigned char>(text[i]);
      if (c < 0x80) {
        if (std::isalnum(c) || c == '\'') cur += static_cast<char>(std::tolower(c));
        else flush();
        ++i;
      } else {
        // Each non-ASCII code point is its own word unless it is CJK punctuation.
        const std::size_t n = (c >> 5) == 6 ? 2 : (c >> 4) == 14 ? 3 : 4;
        flush();
        std::string cp(text.substr(i, n));
        const bool punct = cp == "\xEF\xBC\x8C" || cp == "\xE3\x80\x82" || cp == "\xEF\xBC\x81" ||
                           cp == "\xEF\xBC\x9F" || cp == "\xE3\x80\x81";
        if (!punct) out.push_back(std::move(cp));
        i += n;
      }
    }
    flush();
    return out;
  }

  TokenId token(std::string_view word) const {
    if (is_laugh_word(word)) return cfg_.laugh_marker;
    const auto& lex = lexicon();
    for (std::size_t k = 0; k < lex.size(); ++k)
      if (lex[k] == word && static_cast<int>(k) < cfg_.text_vocab && static_cast<int>(k) != cfg_.laugh_marker)
        return static_cast<TokenId>(k);
    // Hash into [0, T_text) skipping the laugh marker.
    const auto n = static_cast<std::uint64_t>(cfg_.text_vocab - 1);
    auto t = static_cast<TokenId>(tag(word) % n);
    if (t >= cfg_.laugh_marker) ++t;
    return t;
  }

  TextTokens encode(std::string_view text) const {
    TextTokens out;
    for (const auto& w : words(text)) out.push_back(token(w));
    return out;
  }

  std::string word(TokenId t) const {
    if (t == cfg_.laugh_marker) return "laughed";
    const auto& lex = lexicon();
    return t >= 0 && static_cast<std::size_t>(t) < lex.size() ? lex[static_cast<std::size_t>(t)]
                                                               : "w" + std::to_string(t);
  }

 private:
  WorldConfig cfg_;
};

}  // namespace audiobook
