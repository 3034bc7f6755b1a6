// SPDX-License-Identifier: Apache-2.0
//
// Deterministic stand-in for the tokenizer/vocoder/voiceprint chain.
//
// Speech token k of an utterance is
//   U_k = (a*W_{k/R} + b*speaker + c*level + d*carry + k%R) mod V_speech
// where level = round(sum_k weight_k * emotion_index_k) * intensity_index and
// carry = 1 iff the pre-context contains the laugh marker. Because gcd(a, V)=1
// the rule can be inverted, which gives the PER proxy and the emotion classifier.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "audiobook/corpus.hpp"
#include "audiobook/edit_distance.hpp"
#include "audiobook/error.hpp"
#include "audiobook/rng.hpp"
#include "audiobook/types.hpp"

namespace audiobook {

inline int mod(long long x, int m) {
  const long long r = x % m;
  return static_cast<int>(r < 0 ? r + m : r);
}

/// Multiplicative inverse of a modulo m; requires gcd(a, m) = 1.
inline int mod_inverse(int a, int m) {
  long long t = 0, new_t = 1, r = m, new_r = mod(a, m);
  while (new_r != 0) {
    const long long q = r / new_r;
    t = std::exchange(new_t, t - q * new_t);
    r = std::exchange(new_r, r - q * new_r);
  }
  if (r != 1) throw ValidationError("value not invertible modulo " + std::to_string(m));
  return mod(t, m);
}

/// round(sum weight * emotion_index) * intensity_index.
inline int emotion_level(const InstructionAttributes& attrs, const WorldConfig& cfg) {
  double e = 0.0;
  for (const auto& ew : attrs.emotions) e += ew.weight * cfg.emotion_idx(ew.label);
  return static_cast<int>(std::lround(e)) * cfg.intensity_idx(attrs.intensity);
}

/// Additive offset shared by every speech token of one rendering.
inline int rule_offset(int speaker_id, const InstructionAttributes& attrs, bool laugh,
                       const WorldConfig& cfg) {
  return mod(static_cast<long long>(cfg.b) * speaker_id +
                 static_cast<long long>(cfg.c) * emotion_level(attrs, cfg) +
                 static_cast<long long>(cfg.d) * (laugh ? 1 : 0),
             cfg.speech_vocab);
}

inline SpeechTokens oracle_speech_tokens(std::span<const TokenId> text, int speaker_id,
                                         const InstructionAttributes& attrs,
                                         bool pre_context_has_laugh, const WorldConfig& cfg) {
  const int off = rule_offset(speaker_id, attrs, pre_context_has_laugh, cfg);
  SpeechTokens out;
  out.reserve(text.size() * static_cast<std::size_t>(cfg.ratio));
  for (TokenId w : text)
    for (int r = 0; r < cfg.ratio; ++r)
      out.push_back(mod(static_cast<long long>(cfg.a) * w + off + r, cfg.speech_vocab));
  return out;
}

/// Inverts the rule token by token; -1 marks decodes outside the text vocabulary.
inline std::vector<TokenId> decode_text(std::span<const TokenId> speech, int speaker_id,
                                        const InstructionAttributes& attrs, bool laugh,
                                        const WorldConfig& cfg) {
  const int inv = mod_inverse(cfg.a, cfg.speech_vocab);
  const int off = rule_offset(speaker_id, attrs, laugh, cfg);
  std::vector<TokenId> out;
  out.reserve(speech.size());
  for (std::size_t k = 0; k < speech.size(); ++k) {
    const int r = static_cast<int>(k % static_cast<std::size_t>(cfg.ratio));
    const int w = mod(static_cast<long long>(inv) * (speech[k] - off - r), cfg.speech_vocab);
    out.push_back(w < cfg.text_vocab ? w : -1);
  }
  return out;
}

/// Normalized edit distance between the decoded text and the reference, clipped to [0, 1].
inline double proxy_per(std::span<const TokenId> generated, std::span<const TokenId> reference_text,
                        int speaker_id, const InstructionAttributes& attrs, bool laugh,
                        const WorldConfig& cfg) {
  std::vector<TokenId> ref;
  ref.reserve(reference_text.size() * static_cast<std::size_t>(cfg.ratio));
  for (TokenId w : reference_text) ref.insert(ref.end(), static_cast<std::size_t>(cfg.ratio), w);
  if (ref.empty()) return generated.empty() ? 0.0 : 1.0;
  const auto hyp = decode_text(generated, speaker_id, attrs, laugh, cfg);
  const double dist = static_cast<double>(
      edit_distance<TokenId>(std::span<const TokenId>(hyp), std::span<const TokenId>(ref)));
  return std::min(1.0, dist / static_cast<double>(ref.size()));
}

/// Mean token id; a monotone stand-in for pitch.
inline double proxy_pitch(std::span<const TokenId> generated) {
  if (generated.empty()) throw ValidationError("proxy_pitch: empty token list");
  double s = 0.0;
  for (TokenId t : generated) s += t;
  return s / static_cast<double>(generated.size());
}

struct EmotionClass {
  Emotion label = Emotion::neutral;
  Intensity intensity = Intensity::low;
  bool operator==(const EmotionClass&) const = default;
};

/// Brute-force classifier: the single-emotion hypothesis whose decode has the lowest PER.
/// Iteration order (emotion, then intensity low->high) with strict '<' gives the tie-break.
inline EmotionClass proxy_emotion_classify(std::span<const TokenId> generated,
                                           std::span<const TokenId> text, int speaker_id,
                                           bool laugh, const WorldConfig& cfg) {
  EmotionClass best;
  double best_per = 2.0;
  for (Emotion e : kEmotions)
    for (Intensity i : kIntensities) {
      const double per =
          proxy_per(generated, text, speaker_id, InstructionAttributes::single(e, i), laugh, cfg);
      if (per < best_per) {
        best_per = per;
        best = {e, i};
      }
    }
  return best;
}

/// Base voiceprint of a speaker: a rectified Gaussian vector, unit-normalized.
/// Non-negative components keep different speakers' similarities >= 0.
inline std::vector<double> speaker_base_vector(int speaker_id, const WorldConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, {tag("speaker-base"), static_cast<std::uint64_t>(speaker_id)}));
  std::vector<double> v(static_cast<std::size_t>(cfg.embedding_dim));
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = std::max(0.0, rng.normal());
      n2 += x * x;
    }
  } while (n2 == 0.0);
  const double n = std::sqrt(n2);
  for (double& x : v) x /= n;
  return v;
}

/// normalize(base + jitter * g), g ~ N(0, I) seeded by the utterance.
inline SpeakerEmbedding oracle_speaker_embedding(int speaker_id, std::uint64_t utterance_seed,
                                                 double jitter, const WorldConfig& cfg) {
  SpeakerEmbedding e;
  e.values = speaker_base_vector(speaker_id, cfg);
  e.speaker_hint = speaker_id;
  if (jitter == 0.0) return e;
  Rng rng(derive_seed(cfg.seed, {tag("speaker-jitter"), static_cast<std::uint64_t>(speaker_id),
                                 utterance_seed}));
  double n2 = 0.0;
  for (double& x : e.values) {
    x += jitter * rng.normal();
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  for (double& x : e.values) x /= n;
  return e;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

/// Parameters of make_corpus beyond the world config.
struct CorpusShape {
  int chapters = 1;
  int utterances_per_chapter = 1;
  int speakers = 1;  // speaker 0 narrates; 1..speakers-1 speak dialogue
  double dialogue_fraction = 0.0;
  double laugh_fraction = 0.0;
  double high_intensity_fraction = 0.15;  // dialogue intensity draw
  double mixed_fraction = 0.0;            // dialogue with two emotions
  int min_words = 3;
  int max_words = 8;
  double jitter = 0.1;
  int first_chapter_id = 0;  // chapter ids (and chapter seeds) start here
  int first_utterance_id = 0;
  double neutral_dialogue_fraction = 0.0;  // dialogue spoken without an emotion
};

inline std::vector<Persona> default_personas(int speakers) {
  static const std::array<const char*, 8> names{"Tom", "Mary", "Elias", "Grace",
                                                "Nora", "Felix", "Ida", "Owen"};
  std::vector<Persona> ps;
  ps.push_back({0, "NARRATOR", {}, Volume::medium, Speed::medium});
  for (int s = 1; s < speakers; ++s) {
    Persona p;
    p.speaker_id = s;
    p.name = s - 1 < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(s - 1)]
                                                    : "Speaker" + std::to_string(s);
    p.traits = {s % 3 == 0 ? "elderly" : "healthy"};
    if (s % 3 == 0) p.traits.insert("ill");
    ps.push_back(std::move(p));
  }
  return ps;
}

/// Generates a seeded toy corpus whose speech fields are oracle renderings.
///
/// Narration is spoken by speaker 0 with neutral attributes; a narration
/// utterance contains the laugh marker with probability laugh_fraction. Dialogue
/// speakers are drawn uniformly from 1..speakers-1 with a non-neutral emotion
/// drawn uniformly, intensity high with probability high_intensity_fraction, and
/// (with probability mixed_fraction) a second emotion at a bucketed weight. With
/// probability neutral_dialogue_fraction the line is neutral instead.
inline Corpus make_corpus(const CorpusShape& shape, const WorldConfig& cfg) {
  cfg.validate();
  if (shape.chapters < 1 || shape.utterances_per_chapter < 1 || shape.speakers < 1)
    throw ValidationError("make_corpus: counts must be >= 1");
  for (double f : {shape.dialogue_fraction, shape.laugh_fraction, shape.high_intensity_fraction,
                   shape.mixed_fraction, shape.neutral_dialogue_fraction})
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("make_corpus: fractions must lie in [0,1]");
  if (shape.dialogue_fraction > 0.0 && shape.speakers < 2)
    throw ValidationError("make_corpus: dialogue needs at least 2 speakers");
  if (shape.min_words < 1 || shape.max_words < shape.min_words)
    throw ValidationError("make_corpus: bad sentence length range");

  Corpus corpus;
  corpus.world = cfg;
  corpus.personas = default_personas(shape.speakers);
  // The laugh marker only appears where it was placed on purpose.
  const int plain_vocab = cfg.laugh_marker == cfg.text_vocab - 1 ? cfg.text_vocab - 1 : cfg.text_vocab;
  int next_id = shape.first_utterance_id;
  for (int c = shape.first_chapter_id; c < shape.first_chapter_id + shape.chapters; ++c) {
    Rng rng(derive_seed(cfg.seed, {tag("chapter"), static_cast<std::uint64_t>(c)}));
    Chapter ch;
    ch.id = c;
    for (int i = 0; i < shape.utterances_per_chapter; ++i) {
      Utterance u;
      u.id = next_id++;
      u.chapter_id = c;
      u.index_in_chapter = i;
      const int len = rng.range(shape.min_words, shape.max_words);
      for (int k = 0; k < len; ++k) {
        TokenId w;
        do {
          w = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(plain_vocab)));
        } while (w == cfg.laugh_marker);
        u.text.push_back(w);
      }
      if (rng.bernoulli(shape.dialogue_fraction)) {
        u.kind = UtteranceKind::dialogue;
        u.speaker_id = rng.range(1, shape.speakers - 1);
        const Emotion e = kNonNeutralEmotions[rng.below(3)];
        const Intensity it = rng.bernoulli(shape.high_intensity_fraction) ? Intensity::high
                                                                          : Intensity::low;
        u.attributes = InstructionAttributes::single(e, it);
        if (shape.neutral_dialogue_fraction > 0.0 && rng.bernoulli(shape.neutral_dialogue_fraction)) {
          u.attributes = InstructionAttributes::single(Emotion::neutral, Intensity::low);
        } else if (rng.bernoulli(shape.mixed_fraction)) {
          Emotion e2 = kNonNeutralEmotions[rng.below(3)];
          while (e2 == e) e2 = kNonNeutralEmotions[rng.below(3)];
          const double w1 = 0.25 * static_cast<double>(rng.range(1, 3));
          u.attributes.emotions = {{e, w1}, {e2, 1.0 - w1}};
        }
        u.attributes.volume = kVolumes[rng.below(3)];
        u.attributes.speed = kSpeeds[rng.below(3)];
      } else {
        u.kind = UtteranceKind::narration;
        u.speaker_id = 0;
        if (rng.bernoulli(shape.laugh_fraction))
          u.text[rng.below(u.text.size())] = cfg.laugh_marker;
      }
      u.embedding = oracle_speaker_embedding(u.speaker_id, static_cast<std::uint64_t>(u.id),
                                             shape.jitter, cfg);
      ch.utterances.push_back(std::move(u));
    }
    for (std::size_t i = 0; i < ch.utterances.size(); ++i) {
      Utterance& u = ch.utterances[i];
      u.speech = oracle_speech_tokens(u.text, u.speaker_id, u.attributes,
                                      pre_context_has_laugh(ch, i, cfg), cfg);
    }
    corpus.chapters.push_back(std::move(ch));
  }
  return corpus;
}

}  // namespace audiobook
