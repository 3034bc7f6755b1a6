// SPDX-License-Identifier: Apache-2.0
//
// Corpus container, validation, and the line-delimited corpus file.
//
// File layout (UTF-8, one JSON object per line, keys in the order shown):
//   {"record":"header","format":"audiobook-corpus/1","seed":..,"text_vocab":..,
//    "speech_vocab":..,"embedding_dim":..,"ratio":..,"rule":[a,b,c,d],
//    "laugh_marker":..,"emotion_index":[4],"intensity_index":[2],
//    "personas":P,"chapters":C}
//   {"record":"persona","speaker_id":..,"name":..,"traits":[..],"volume":..,"speed":..}   x P
//   {"record":"chapter","id":..,"utterances":N}                                           x C
//   {"record":"utterance","id":..,"chapter":..,"index":..,"kind":..,"speaker":..,
//    "text":[..],"emotions":[[label,weight],..],"intensity":..,"volume":..,"speed":..,
//    "speech":[..],"embedding":[..],"speaker_hint":int|null}                               x N
// Each chapter record is followed by its N utterance records. Reals are written
// with 17 significant digits so load(save(c)) is bit-exact.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "audiobook/error.hpp"
#include "audiobook/types.hpp"

namespace audiobook {

struct Corpus {
  WorldConfig world;
  std::vector<Persona> personas;
  std::vector<Chapter> chapters;

  bool operator==(const Corpus&) const = default;

  const Persona* persona(int speaker_id) const {
    for (const auto& p : personas)
      if (p.speaker_id == speaker_id) return &p;
    return nullptr;
  }
  std::size_t utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : chapters) n += c.utterances.size();
    return n;
  }
  /// Id -> utterance lookup; pointers are valid while the corpus is unchanged.
  std::unordered_map<int, const Utterance*> index() const {
    std::unordered_map<int, const Utterance*> m;
    for (const auto& c : chapters)
      for (const auto& u : c.utterances) m.emplace(u.id, &u);
    return m;
  }
};

struct Violation {
  std::string type;
  std::string id;
  std::string field;
  std::string message;

  std::string describe() const { return type + " " + id + " " + field + ": " + message; }
};

/// True when the utterance right before `index` in the chapter contains the laugh marker.
inline bool pre_context_has_laugh(const Chapter& ch, std::size_t index, const WorldConfig& w) {
  if (index == 0) return false;
  const auto& prev = ch.utterances[index - 1].text;
  return std::find(prev.begin(), prev.end(), w.laugh_marker) != prev.end();
}

inline std::vector<Violation> validate_corpus(const Corpus& c) {
  std::vector<Violation> out;
  const WorldConfig& w = c.world;
  try {
    w.validate();
  } catch (const ValidationError& e) {
    out.push_back({"header", "-", "world", e.what()});
  }
  std::set<int> speakers;
  for (const auto& p : c.personas) {
    if (!speakers.insert(p.speaker_id).second)
      out.push_back({"persona", std::to_string(p.speaker_id), "speaker_id", "duplicate speaker_id"});
  }
  std::set<int> chapter_ids;
  std::set<int> utterance_ids;
  for (const auto& ch : c.chapters) {
    const std::string cid = std::to_string(ch.id);
    if (!chapter_ids.insert(ch.id).second)
      out.push_back({"chapter", cid, "id", "duplicate chapter id"});
    for (std::size_t i = 0; i < ch.utterances.size(); ++i) {
      const Utterance& u = ch.utterances[i];
      const std::string uid = std::to_string(u.id);
      auto bad = [&](std::string field, std::string msg) {
        out.push_back({"utterance", uid, std::move(field), std::move(msg)});
      };
      if (!utterance_ids.insert(u.id).second) bad("id", "duplicate utterance id");
      if (u.chapter_id != ch.id) bad("chapter_id", "does not match enclosing chapter " + cid);
      if (u.index_in_chapter != static_cast<int>(i))
        bad("index_in_chapter", "non-contiguous index " + std::to_string(u.index_in_chapter) +
                                    " at position " + std::to_string(i));
      if (!speakers.contains(u.speaker_id))
        bad("speaker_id", "dangling speaker_id " + std::to_string(u.speaker_id));
      if (u.text.empty()) bad("text", "empty text");
      for (TokenId t : u.text)
        if (t < 0 || t >= w.text_vocab) {
          bad("text", "token " + std::to_string(t) + " outside text vocabulary");
          break;
        }
      for (TokenId t : u.speech)
        if (t < 0 || t >= w.speech_vocab) {
          bad("speech", "token " + std::to_string(t) + " outside speech vocabulary");
          break;
        }
      if (u.speech.size() != u.text.size() * static_cast<std::size_t>(w.ratio))
        bad("speech", "length != text length x R");
      if (auto m = attribute_violation(u.attributes); !m.empty()) bad("attributes", m);
      if (static_cast<int>(u.embedding.values.size()) != w.embedding_dim)
        bad("embedding", "dimension != D");
      else if (!u.embedding.unit_norm())
        bad("embedding", "embedding not unit-norm");
    }
  }
  return out;
}

namespace detail {

inline std::string fmt_real(double v) { return fmt::format("{:.16e}", v); }

template <class Range>
std::string int_list(const Range& r) {
  std::string s = "[";
  bool first = true;
  for (auto v : r) {
    if (!first) s += ',';
    s += std::to_string(v);
    first = false;
  }
  return s + "]";
}

inline std::string real_list(const std::vector<double>& r) {
  std::string s = "[";
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (i) s += ',';
    s += fmt_real(r[i]);
  }
  return s + "]";
}

inline std::string quoted(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

inline const nlohmann::json& field(const nlohmann::json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field '") + key + "'", line);
  return *it;
}

template <class T>
T get(const nlohmann::json& j, const char* key, std::size_t line) {
  try {
    return field(j, key, line).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("field '") + key + "': " + e.what(), line);
  }
}

}  // namespace detail

inline std::string header_record(const Corpus& c) {
  const WorldConfig& w = c.world;
  return fmt::format(
      R"({{"record":"header","format":"audiobook-corpus/1","seed":{},"text_vocab":{},"speech_vocab":{},"embedding_dim":{},"ratio":{},"rule":[{},{},{},{}],"laugh_marker":{},"emotion_index":{},"intensity_index":{},"personas":{},"chapters":{}}})",
      w.seed, w.text_vocab, w.speech_vocab, w.embedding_dim, w.ratio, w.a, w.b, w.c, w.d,
      w.laugh_marker, detail::int_list(w.emotion_index), detail::int_list(w.intensity_index),
      c.personas.size(), c.chapters.size());
}

inline std::string persona_record(const Persona& p) {
  std::string traits = "[";
  bool first = true;
  for (const auto& t : p.traits) {
    if (!first) traits += ',';
    traits += detail::quoted(t);
    first = false;
  }
  traits += ']';
  return fmt::format(R"({{"record":"persona","speaker_id":{},"name":{},"traits":{},"volume":"{}","speed":"{}"}})",
                     p.speaker_id, detail::quoted(p.name), traits, to_string(p.default_volume),
                     to_string(p.default_speed));
}

inline std::string utterance_record(const Utterance& u) {
  std::string emotions = "[";
  for (std::size_t i = 0; i < u.attributes.emotions.size(); ++i) {
    if (i) emotions += ',';
    emotions += fmt::format(R"(["{}",{}])", to_string(u.attributes.emotions[i].label),
                            detail::fmt_real(u.attributes.emotions[i].weight));
  }
  emotions += ']';
  return fmt::format(
      R"({{"record":"utterance","id":{},"chapter":{},"index":{},"kind":"{}","speaker":{},"text":{},"emotions":{},"intensity":"{}","volume":"{}","speed":"{}","speech":{},"embedding":{},"speaker_hint":{}}})",
      u.id, u.chapter_id, u.index_in_chapter, to_string(u.kind), u.speaker_id,
      detail::int_list(u.text), emotions, to_string(u.attributes.intensity),
      to_string(u.attributes.volume), to_string(u.attributes.speed), detail::int_list(u.speech),
      detail::real_list(u.embedding.values),
      u.embedding.speaker_hint ? std::to_string(*u.embedding.speaker_hint) : "null");
}

inline void throw_if_invalid(const Corpus& c) {
  auto v = validate_corpus(c);
  if (!v.empty()) throw ValidationError(v.front().describe());
}

inline void write_corpus(const Corpus& corpus, std::ostream& os) {
  os << header_record(corpus) << '\n';
  for (const auto& p : corpus.personas) os << persona_record(p) << '\n';
  for (const auto& ch : corpus.chapters) {
    os << fmt::format(R"({{"record":"chapter","id":{},"utterances":{}}})", ch.id,
                      ch.utterances.size())
       << '\n';
    for (const auto& u : ch.utterances) os << utterance_record(u) << '\n';
  }
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  throw_if_invalid(corpus);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_corpus(corpus, os);
  if (!os) throw IoError("write failed: " + path.string());
}

inline Corpus read_corpus(std::istream& is) {
  using nlohmann::json;
  using detail::get;
  Corpus c;
  std::string line;
  std::size_t lineno = 0;
  std::size_t expect_personas = 0, expect_chapters = 0, pending_utterances = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed record: ") + e.what(), lineno);
    }
    const auto kind = get<std::string>(j, "record", lineno);
    if (!have_header) {
      if (kind != "header") throw ParseError("first record must be the header", lineno);
      if (get<std::string>(j, "format", lineno) != "audiobook-corpus/1")
        throw ParseError("unsupported format", lineno);
      WorldConfig& w = c.world;
      w.seed = get<std::uint64_t>(j, "seed", lineno);
      w.text_vocab = get<int>(j, "text_vocab", lineno);
      w.speech_vocab = get<int>(j, "speech_vocab", lineno);
      w.embedding_dim = get<int>(j, "embedding_dim", lineno);
      w.ratio = get<int>(j, "ratio", lineno);
      auto rule = get<std::vector<int>>(j, "rule", lineno);
      if (rule.size() != 4) throw ParseError("rule must have 4 coefficients", lineno);
      w.a = rule[0], w.b = rule[1], w.c = rule[2], w.d = rule[3];
      w.laugh_marker = get<int>(j, "laugh_marker", lineno);
      w.emotion_index = get<std::array<int, 4>>(j, "emotion_index", lineno);
      w.intensity_index = get<std::array<int, 2>>(j, "intensity_index", lineno);
      expect_personas = get<std::size_t>(j, "personas", lineno);
      expect_chapters = get<std::size_t>(j, "chapters", lineno);
      have_header = true;
      continue;
    }
    try {
      if (kind == "persona") {
        Persona p;
        p.speaker_id = get<int>(j, "speaker_id", lineno);
        p.name = get<std::string>(j, "name", lineno);
        for (auto& t : get<std::vector<std::string>>(j, "traits", lineno)) p.traits.insert(t);
        p.default_volume = parse_volume(get<std::string>(j, "volume", lineno));
        p.default_speed = parse_speed(get<std::string>(j, "speed", lineno));
        c.personas.push_back(std::move(p));
      } else if (kind == "chapter") {
        if (pending_utterances != 0) throw ParseError("previous chapter is missing utterances", lineno);
        Chapter ch;
        ch.id = get<int>(j, "id", lineno);
        pending_utterances = get<std::size_t>(j, "utterances", lineno);
        c.chapters.push_back(std::move(ch));
      } else if (kind == "utterance") {
        if (c.chapters.empty() || pending_utterances == 0)
          throw ParseError("utterance record outside a chapter", lineno);
        Utterance u;
        u.id = get<int>(j, "id", lineno);
        u.chapter_id = get<int>(j, "chapter", lineno);
        u.index_in_chapter = get<int>(j, "index", lineno);
        u.kind = parse_kind(get<std::string>(j, "kind", lineno));
        u.speaker_id = get<int>(j, "speaker", lineno);
        u.text = get<TextTokens>(j, "text", lineno);
        u.attributes.emotions.clear();
        for (const auto& e : detail::field(j, "emotions", lineno)) {
          if (!e.is_array() || e.size() != 2) throw ParseError("emotion entry must be [label, weight]", lineno);
          u.attributes.emotions.push_back({parse_emotion(e[0].get<std::string>()), e[1].get<double>()});
        }
        u.attributes.intensity = parse_intensity(get<std::string>(j, "intensity", lineno));
        u.attributes.volume = parse_volume(get<std::string>(j, "volume", lineno));
        u.attributes.speed = parse_speed(get<std::string>(j, "speed", lineno));
        u.speech = get<SpeechTokens>(j, "speech", lineno);
        u.embedding.values = get<std::vector<double>>(j, "embedding", lineno);
        const auto& hint = detail::field(j, "speaker_hint", lineno);
        if (!hint.is_null()) u.embedding.speaker_hint = hint.get<int>();
        c.chapters.back().utterances.push_back(std::move(u));
        --pending_utterances;
      } else {
        throw ParseError("unknown record type '" + kind + "'", lineno);
      }
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (!have_header) throw ParseError("missing header record", lineno);
  if (pending_utterances != 0 || c.chapters.size() != expect_chapters ||
      c.personas.size() != expect_personas)
    throw ParseError("record counts do not match header (truncated file?)", lineno);
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  Corpus c = read_corpus(is);
  throw_if_invalid(c);
  return c;
}

}  // namespace audiobook
