// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types: tokens, attributes, utterances, chapters, personas,
// and the world configuration that every corpus carries in its header.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "audiobook/error.hpp"

namespace audiobook {

using TokenId = std::int32_t;
using TextTokens = std::vector<TokenId>;
using SpeechTokens = std::vector<TokenId>;

enum class Emotion : std::uint8_t { neutral, angry, happy, sad };
enum class Intensity : std::uint8_t { low, high };
enum class Volume : std::uint8_t { low, medium, high };
enum class Speed : std::uint8_t { slow, medium, fast };
enum class UtteranceKind : std::uint8_t { narration, dialogue };

inline constexpr std::array<Emotion, 4> kEmotions{Emotion::neutral, Emotion::angry,
                                                  Emotion::happy, Emotion::sad};
inline constexpr std::array<Emotion, 3> kNonNeutralEmotions{Emotion::angry, Emotion::happy,
                                                            Emotion::sad};
inline constexpr std::array<Intensity, 2> kIntensities{Intensity::low, Intensity::high};
inline constexpr std::array<Volume, 3> kVolumes{Volume::low, Volume::medium, Volume::high};
inline constexpr std::array<Speed, 3> kSpeeds{Speed::slow, Speed::medium, Speed::fast};

inline std::string_view to_string(Emotion e) {
  constexpr std::array<std::string_view, 4> n{"neutral", "angry", "happy", "sad"};
  return n[static_cast<std::size_t>(e)];
}
inline std::string_view to_string(Intensity i) { return i == Intensity::low ? "low" : "high"; }
inline std::string_view to_string(Volume v) {
  constexpr std::array<std::string_view, 3> n{"low", "medium", "high"};
  return n[static_cast<std::size_t>(v)];
}
inline std::string_view to_string(Speed s) {
  constexpr std::array<std::string_view, 3> n{"slow", "medium", "fast"};
  return n[static_cast<std::size_t>(s)];
}
inline std::string_view to_string(UtteranceKind k) {
  return k == UtteranceKind::narration ? "narration" : "dialogue";
}

template <class Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<Enum, N>& all, std::string_view what) {
  for (Enum e : all)
    if (to_string(e) == s) return e;
  throw ValidationError("unknown " + std::string(what) + " '" + std::string(s) + "'");
}
inline Emotion parse_emotion(std::string_view s) { return parse_enum(s, kEmotions, "emotion"); }
inline Intensity parse_intensity(std::string_view s) {
  return parse_enum(s, kIntensities, "intensity");
}
inline Volume parse_volume(std::string_view s) { return parse_enum(s, kVolumes, "volume"); }
inline Speed parse_speed(std::string_view s) { return parse_enum(s, kSpeeds, "speed"); }
inline UtteranceKind parse_kind(std::string_view s) {
  if (s == "narration") return UtteranceKind::narration;
  if (s == "dialogue") return UtteranceKind::dialogue;
  throw ValidationError("unknown utterance kind '" + std::string(s) + "'");
}

struct EmotionWeight {
  Emotion label = Emotion::neutral;
  double weight = 1.0;
  bool operator==(const EmotionWeight&) const = default;
};

/// The discrete control tuple decoded from a style instruction.
struct InstructionAttributes {
  std::vector<EmotionWeight> emotions{EmotionWeight{}};
  Intensity intensity = Intensity::low;
  Volume volume = Volume::medium;
  Speed speed = Speed::medium;

  bool operator==(const InstructionAttributes&) const = default;

  static InstructionAttributes single(Emotion e, Intensity i, Volume v = Volume::medium,
                                      Speed s = Speed::medium) {
    return {{EmotionWeight{e, 1.0}}, i, v, s};
  }
  Emotion primary() const { return emotions.front().label; }
  bool mixed() const { return emotions.size() == 2; }
};

/// Empty string when valid, otherwise a description of the first broken invariant.
inline std::string attribute_violation(const InstructionAttributes& a) {
  if (a.emotions.empty() || a.emotions.size() > 2) return "emotion list must have 1 or 2 entries";
  double sum = 0.0;
  for (const auto& e : a.emotions) {
    if (!(e.weight > 0.0 && e.weight <= 1.0)) return "emotion weight outside (0,1]";
    sum += e.weight;
  }
  if (std::abs(sum - 1.0) > 1e-9) return "weights sum != 1";
  if (a.emotions.size() == 2) {
    if (a.emotions[0].label == a.emotions[1].label) return "mixed emotion labels must differ";
    if (a.emotions[0].label == Emotion::neutral || a.emotions[1].label == Emotion::neutral)
      return "neutral in mixed emotion";
  }
  return {};
}

/// Unit-norm voiceprint vector.
struct SpeakerEmbedding {
  std::vector<double> values;
  std::optional<int> speaker_hint;

  bool operator==(const SpeakerEmbedding&) const = default;

  double norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
  bool unit_norm(double tol = 1e-6) const { return std::abs(norm() - 1.0) <= tol; }
};

struct Utterance {
  int id = 0;
  int chapter_id = 0;
  int index_in_chapter = 0;
  UtteranceKind kind = UtteranceKind::narration;
  int speaker_id = 0;
  TextTokens text;
  InstructionAttributes attributes;
  SpeechTokens speech;
  SpeakerEmbedding embedding;

  bool operator==(const Utterance&) const = default;
};

struct Chapter {
  int id = 0;
  std::vector<Utterance> utterances;
  bool operator==(const Chapter&) const = default;
};

struct Persona {
  int speaker_id = 0;
  std::string name;
  std::set<std::string> traits;  // "elderly", "ill", "healthy", "child", ...
  Volume default_volume = Volume::medium;
  Speed default_speed = Speed::medium;
  bool operator==(const Persona&) const = default;
};

/// Parameters of the synthetic world. Serialized into the corpus header.
struct WorldConfig {
  std::uint64_t seed = 1;
  int text_vocab = 32;     // T_text
  int speech_vocab = 64;   // V_speech
  int embedding_dim = 16;  // D
  int ratio = 1;           // speech tokens per text token (R)
  int a = 3, b = 5, c = 7, d = 11;
  int laugh_marker = 31;
  // neutral/angry/happy/sad. Spaced so every emotion x intensity product is distinct.
  std::array<int, 4> emotion_index{0, 1, 3, 5};
  std::array<int, 2> intensity_index{1, 2};  // low/high

  bool operator==(const WorldConfig&) const = default;

  int emotion_idx(Emotion e) const { return emotion_index[static_cast<std::size_t>(e)]; }
  int intensity_idx(Intensity i) const { return intensity_index[static_cast<std::size_t>(i)]; }

  void validate() const;
};

inline int gcd_int(int x, int y) {
  x = std::abs(x);
  y = std::abs(y);
  while (y != 0) {
    const int t = x % y;
    x = y;
    y = t;
  }
  return x;
}

inline void WorldConfig::validate() const {
  if (text_vocab < 2 || speech_vocab < 2 || embedding_dim < 1 || ratio < 1)
    throw ValidationError("world config: vocab sizes, embedding_dim and ratio must be positive");
  if (gcd_int(a, speech_vocab) != 1)
    throw ValidationError("world config: gcd(a, V_speech) must be 1");
  for (int coef : {a, b, c, d})
    if (coef < 0 || coef >= speech_vocab)
      throw ValidationError("world config: rule coefficients must lie in [0, V_speech)");
  if (laugh_marker < 0 || laugh_marker >= text_vocab)
    throw ValidationError("world config: laugh_marker outside text vocabulary");
}

}  // namespace audiobook
