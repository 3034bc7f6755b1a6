// SPDX-License-Identifier: Apache-2.0
//
// End-to-end run over raw fiction: extract the script, cast voices, compile
// style instructions, build context+instruction prefixes and synthesize every
// line, then score against the oracle rendering of the extracted script.
#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "audiobook/casting.hpp"
#include "audiobook/checkpoint.hpp"
#include "audiobook/corpus.hpp"
#include "audiobook/instruction.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/script.hpp"
#include "audiobook/sequence.hpp"
#include "audiobook/train.hpp"

namespace audiobook {

struct MiniNovelSpec {
  int chapters = 2;
  int lines_per_chapter = 30;
  double dialogue_fraction = 0.4;
  double laugh_fraction = 0.2;
  double shout_fraction = 0.15;
  int min_words = 3;
  int max_words = 8;
  bool unknown_opening = true;  // each chapter opens with an unattributed quotation
  std::uint64_t seed = 1;
};

/// Seeded fiction over the tokenizer lexicon. Dialogue is written as
/// `Name verb adverb, "words."`; narration sometimes contains "laughed".
inline std::string make_mini_novel(const MiniNovelSpec& spec) {
  static const std::vector<std::string> plain{"the", "a",     "door",  "night", "rain", "old",  "house",
                                              "road", "light", "went",  "came",  "stood", "quiet", "dark",
                                              "river", "cold", "we",   "you",   "now",  "home", "again"};
  static const std::vector<std::string> names{"Tom", "Mary", "Elias"};
  static const std::vector<std::string> adverbs{"angrily", "happily", "sadly"};
  Rng rng(derive_seed(spec.seed, {tag("mini-novel")}));
  auto sentence = [&](bool laugh) {
    const int n = rng.range(spec.min_words, spec.max_words);
    std::vector<std::string> w;
    for (int k = 0; k < n; ++k) w.push_back(plain[rng.below(plain.size())]);
    if (laugh) w[rng.below(w.size())] = "laughed";
    std::string s;
    for (std::size_t k = 0; k < w.size(); ++k) s += (k ? " " : "") + w[k];
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s + ".";
  };
  std::string out;
  for (int c = 1; c <= spec.chapters; ++c) {
    out += "Chapter " + std::to_string(c) + "\n\n";
    if (spec.unknown_opening) out += "\"" + sentence(false) + "\"\n\n";
    for (int i = 0; i < spec.lines_per_chapter; ++i) {
      if (rng.bernoulli(spec.dialogue_fraction)) {
        const std::string verb = rng.bernoulli(spec.shout_fraction) ? "shouted" : "said";
        out += names[rng.below(names.size())] + " " + verb + " " + adverbs[rng.below(adverbs.size())] + ", \"" +
               sentence(false) + "\"\n\n";
      } else {
        out += sentence(rng.bernoulli(spec.laugh_fraction)) + "\n\n";
      }
    }
  }
  return out;
}

struct PipelineConfig {
  std::vector<Persona> personas = default_personas(5);
  int reserve_voice = 4;  // voice for dialogue whose speaker stays UNKNOWN
  InstructionLexicon lexicon = InstructionLexicon::defaults();
  std::vector<QuotePair> quotes = default_quotes();
  std::string chapter_pattern = RawDocument{}.chapter_delimiter_pattern;
  int context_pre = 1;
  int context_post = 1;
  int max_len = 64;
};

/// One synthesized line of the script.
struct PipelineLine {
  int chapter = 0;
  int index = 0;
  UtteranceKind kind = UtteranceKind::narration;
  std::string speaker_name;
  int voice = 0;
  std::string instruction;
  InstructionAttributes attrs;
  TextTokens text;
  SpeechTokens speech;
  double per = 0.0;
};

struct PipelineResult {
  std::vector<PipelineLine> lines;
  std::vector<double> chapter_per;  // mean line PER per chapter
  double mean_per = 0.0;
  std::size_t unknown_lines = 0;
  std::vector<std::string> warnings;
};

/// Voice for an attributed name: the persona with that name (case-insensitive),
/// the narrator voice for narration, the reserve voice otherwise.
inline int cast_voice(const std::string& name, const PipelineConfig& cfg) {
  if (name == kNarrator) return 0;
  auto lower = [](std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  for (const auto& p : cfg.personas)
    if (lower(p.name) == lower(name)) return p.speaker_id;
  return cfg.reserve_voice;
}

/// Style instruction of a dialogue line: the attribution clause right before it
/// (a narration line ending in a comma), or empty.
inline std::string attribution_instruction(const std::vector<ScriptLine>& lines, std::size_t i) {
  if (i == 0 || lines[i].kind != UtteranceKind::dialogue) return {};
  std::size_t j = i;
  while (j > 0 && lines[j - 1].kind == UtteranceKind::dialogue && lines[j - 1].quote_group == lines[i].quote_group) --j;
  if (j == 0) return {};
  const std::string& prev = lines[j - 1].text;
  if (lines[j - 1].kind != UtteranceKind::narration || prev.empty() || prev.back() != ',') return {};
  return prev;
}

inline PipelineResult pipeline_run(std::string_view fiction, const PipelineConfig& cfg, const SpeechGenerator& gen,
                                   const WorldConfig& world) {
  const TokenIdMap map(world);
  const TextTokenizer tok(world);
  PipelineResult res;
  auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      throw Error(std::string(name) + ": " + e.what());
    }
  };
  RawDocument doc;
  doc.text = std::string(fiction);
  doc.chapter_delimiter_pattern = cfg.chapter_pattern;
  const auto spans = stage("extract", [&] { return segment_chapters(doc); });
  int next_id = 0;
  for (std::size_t c = 0; c < spans.size(); ++c) {
    const Extraction ex = stage("extract", [&] { return extract_utterances(spans[c].body, cfg.personas, cfg.quotes); });
    for (const auto& w : ex.warnings) res.warnings.push_back(fmt::format("chapter {}: {}", c, w));
    Chapter ch;
    ch.id = static_cast<int>(c);
    std::vector<PipelineLine> lines;
    stage("cast", [&] {
      for (std::size_t i = 0; i < ex.lines.size(); ++i) {
        PipelineLine l;
        l.chapter = ch.id;
        l.index = static_cast<int>(i);
        l.kind = ex.lines[i].kind;
        l.speaker_name = ex.lines[i].speaker;
        l.voice = cast_voice(l.speaker_name, cfg);
        if (l.speaker_name == kUnknownSpeaker) ++res.unknown_lines;
        l.text = tok.encode(ex.lines[i].text);
        lines.push_back(std::move(l));
      }
      return 0;
    });
    stage("compile-instruction", [&] {
      for (std::size_t i = 0; i < lines.size(); ++i) {
        lines[i].instruction = attribution_instruction(ex.lines, i);
        const Persona* p = nullptr;
        for (const auto& q : cfg.personas)
          if (q.speaker_id == lines[i].voice) p = &q;
        lines[i].attrs = decompose(lines[i].instruction, p ? *p : Persona{}, cfg.lexicon);
      }
      return 0;
    });
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].text.empty()) continue;
      Utterance u;
      u.id = next_id++;
      u.chapter_id = ch.id;
      u.index_in_chapter = static_cast<int>(ch.utterances.size());
      u.kind = lines[i].kind;
      u.speaker_id = lines[i].voice;
      u.text = lines[i].text;
      u.attributes = lines[i].attrs;
      u.embedding = oracle_speaker_embedding(u.speaker_id, 0, 0.0, world);
      ch.utterances.push_back(std::move(u));
    }
    std::erase_if(lines, [](const PipelineLine& l) { return l.text.empty(); });
    const auto windows = stage("build-data", [&] { return build_context_windows(ch, cfg.context_pre, cfg.context_post); });
    UtteranceIndex index;
    for (const auto& u : ch.utterances) index[u.id] = &u;
    double sum = 0.0;
    stage("synth", [&] {
      for (std::size_t i = 0; i < ch.utterances.size(); ++i) {
        const Utterance& u = ch.utterances[i];
        const InferenceInputs in = inference_inputs(u, windows[i], u.embedding, u.attributes, index);
        const TokenSequence prefix = build_inference_prefix(InferenceMode::ctx_inst, in, map);
        lines[i].speech = gen(prefix, Sampling{}, cfg.max_len);
        const bool laugh = pre_context_has_laugh(ch, i, world);
        lines[i].per = proxy_per(lines[i].speech, u.text, u.speaker_id, u.attributes, laugh, world);
        sum += lines[i].per;
      }
      return 0;
    });
    res.chapter_per.push_back(ch.utterances.empty() ? 0.0 : sum / static_cast<double>(ch.utterances.size()));
    res.lines.insert(res.lines.end(), lines.begin(), lines.end());
  }
  if (res.chapter_per.empty()) throw Error("extract: no chapters found");
  double total = 0.0;
  for (double p : res.chapter_per) total += p;
  res.mean_per = total / static_cast<double>(res.chapter_per.size());
  return res;
}

inline std::string pipeline_line_record(const PipelineLine& l) {
  std::string emo = "[";
  for (std::size_t i = 0; i < l.attrs.emotions.size(); ++i)
    emo += fmt::format("{}[\"{}\",{}]", i ? "," : "", to_string(l.attrs.emotions[i].label),
                       detail::fmt_real(l.attrs.emotions[i].weight));
  emo += "]";
  return fmt::format(
      R"({{"chapter":{},"line":{},"kind":"{}","speaker":{},"voice":{},"instruction":{},"emotions":{},"intensity":"{}","volume":"{}","speed":"{}","text":{},"speech":{},"per":{}}})",
      l.chapter, l.index, to_string(l.kind), detail::quoted(l.speaker_name), l.voice, detail::quoted(l.instruction), emo,
      to_string(l.attrs.intensity), to_string(l.attrs.volume), to_string(l.attrs.speed), detail::int_list(l.text),
      detail::int_list(l.speech), detail::fmt_real(l.per));
}

/// chapter_<k>.jsonl per chapter plus pipeline_report.txt / .jsonl.
inline void write_pipeline(const PipelineResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<int, std::ofstream> files;
  for (const auto& l : r.lines) {
    auto it = files.find(l.chapter);
    if (it == files.end())
      it = files.emplace(l.chapter, std::ofstream(dir / fmt::format("chapter_{}.jsonl", l.chapter))).first;
    it->second << pipeline_line_record(l) << "\n";
  }
  std::ofstream t(dir / "pipeline_report.txt"), j(dir / "pipeline_report.jsonl");
  if (!t || !j) throw IoError("cannot write pipeline report in " + dir.string());
  t << fmt::format("{:<8} {:>10}\n", "chapter", "PER");
  for (std::size_t c = 0; c < r.chapter_per.size(); ++c) {
    t << fmt::format("{:<8} {:>10.6f}\n", c, r.chapter_per[c]);
    j << fmt::format(R"({{"record":"chapter","chapter":{},"per":{}}})", c, detail::fmt_real(r.chapter_per[c])) << "\n";
  }
  t << fmt::format("{:<8} {:>10.6f}\nlines {} unknown-speaker lines {}\n", "mean", r.mean_per, r.lines.size(),
                   r.unknown_lines);
  j << fmt::format(R"({{"record":"summary","mean_per":{},"lines":{},"unknown_lines":{}}})", detail::fmt_real(r.mean_per),
                   r.lines.size(), r.unknown_lines)
    << "\n";
  for (const auto& w : r.warnings) t << "warning: " << w << "\n";
}

}  // namespace audiobook
