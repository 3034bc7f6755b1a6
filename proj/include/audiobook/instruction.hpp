// SPDX-License-Identifier: Apache-2.0
//
// Free-text style instructions -> discrete attributes -> control-token payload.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "audiobook/error.hpp"
#include "audiobook/script.hpp"
#include "audiobook/token_map.hpp"
#include "audiobook/types.hpp"

namespace audiobook {

enum class AttributeField : std::uint8_t { emotion, intensity, volume, speed };

struct AttributeSetting {
  AttributeField field;
  int value;  // enum value of the field's type
  bool operator==(const AttributeSetting&) const = default;
  auto operator<=>(const AttributeSetting&) const = default;
};

inline AttributeSetting parse_setting(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ValidationError("expected field:value, got '" + std::string(text) + "'");
  const auto f = text.substr(0, colon);
  const auto v = text.substr(colon + 1);
  if (f == "emotion") return {AttributeField::emotion, static_cast<int>(parse_emotion(v))};
  if (f == "intensity") return {AttributeField::intensity, static_cast<int>(parse_intensity(v))};
  if (f == "volume") return {AttributeField::volume, static_cast<int>(parse_volume(v))};
  if (f == "speed") return {AttributeField::speed, static_cast<int>(parse_speed(v))};
  throw ValidationError("unknown attribute field '" + std::string(f) + "'");
}

inline std::string to_string(const AttributeSetting& s) {
  switch (s.field) {
    case AttributeField::emotion: return "emotion:" + std::string(to_string(static_cast<Emotion>(s.value)));
    case AttributeField::intensity: return "intensity:" + std::string(to_string(static_cast<Intensity>(s.value)));
    case AttributeField::volume: return "volume:" + std::string(to_string(static_cast<Volume>(s.value)));
    case AttributeField::speed: return "speed:" + std::string(to_string(static_cast<Speed>(s.value)));
  }
  return "?";
}

/// Keyword table plus persona-trait modifiers.
///
/// File format, one record per line ('#' starts a comment):
///   shouting -> volume:high speed:fast intensity:high
///   @ill -> volume:low speed:slow
/// "→" is accepted in place of "->".
struct InstructionLexicon {
  std::map<std::string, std::vector<AttributeSetting>> keywords;
  std::map<std::string, std::vector<AttributeSetting>> trait_modifiers;

  void validate() const {
    for (const auto& [k, v] : keywords)
      if (v.empty()) throw ValidationError("lexicon keyword '" + k + "' maps to nothing");
    for (const auto& [t, v] : trait_modifiers)
      for (const auto& s : v)
        if (s.field == AttributeField::emotion)
          throw ValidationError("trait modifier '" + t + "' may not change the emotion label");
  }

  static InstructionLexicon defaults() {
    InstructionLexicon lx;
    auto add = [&](std::initializer_list<const char*> words, std::vector<AttributeSetting> s) {
      for (const char* w : words) lx.keywords[w] = s;
    };
    using F = AttributeField;
    const auto I = [](Intensity v) { return AttributeSetting{F::intensity, static_cast<int>(v)}; };
    const auto V = [](Volume v) { return AttributeSetting{F::volume, static_cast<int>(v)}; };
    const auto S = [](Speed v) { return AttributeSetting{F::speed, static_cast<int>(v)}; };
    const auto E = [](Emotion v) { return AttributeSetting{F::emotion, static_cast<int>(v)}; };
    add({"shouting", "shouted", "shout", "shouts", "yelled", "yelling", "screamed", "screaming"},
        {V(Volume::high), S(Speed::fast), I(Intensity::high)});
    add({"angrily", "angry", "furious", "furiously", "rage"}, {E(Emotion::angry)});
    add({"happily", "happy", "cheerfully", "joyfully", "gleefully"}, {E(Emotion::happy)});
    add({"sadly", "sad", "tearfully", "sorrowfully", "mournfully"}, {E(Emotion::sad)});
    add({"whisper", "whispered", "whispering", "murmured"}, {V(Volume::low)});
    add({"softly", "quietly"}, {V(Volume::low)});
    add({"loudly"}, {V(Volume::high)});
    add({"very", "extremely", "deeply"}, {I(Intensity::high)});
    add({"slightly", "mildly", "somewhat"}, {I(Intensity::low)});
    add({"slowly"}, {S(Speed::slow)});
    add({"quickly", "hurriedly", "rapidly"}, {S(Speed::fast)});
    lx.trait_modifiers["ill"] = {V(Volume::low), S(Speed::slow)};
    lx.trait_modifiers["elderly"] = {V(Volume::low), S(Speed::slow)};
    return lx;
  }

  static InstructionLexicon parse(std::istream& is) {
    InstructionLexicon lx;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      std::size_t arrow = line.find("->");
      std::size_t arrow_len = 2;
      if (arrow == std::string::npos) {
        arrow = line.find("\xE2\x86\x92");
        arrow_len = 3;
      }
      if (arrow == std::string::npos) throw ParseError("expected 'keyword -> field:value'", lineno);
      const std::string key = trim(line.substr(0, arrow));
      std::istringstream rhs(line.substr(arrow + arrow_len));
      std::vector<AttributeSetting> settings;
      try {
        for (std::string tok; rhs >> tok;) settings.push_back(parse_setting(tok));
      } catch (const ValidationError& e) {
        throw ParseError(e.what(), lineno);
      }
      if (key.empty()) throw ParseError("empty keyword", lineno);
      if (key.front() == '@') lx.trait_modifiers[key.substr(1)] = settings;
      else lx.keywords[key] = settings;
    }
    lx.validate();
    return lx;
  }

  static InstructionLexicon load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open lexicon " + path.string());
    return parse(is);
  }

  void write(std::ostream& os) const {
    auto emit = [&](const std::string& key, const std::vector<AttributeSetting>& v) {
      os << key << " ->";
      for (const auto& s : v) os << ' ' << to_string(s);
      os << '\n';
    };
    for (const auto& [k, v] : keywords) emit(k, v);
    for (const auto& [t, v] : trait_modifiers) emit("@" + t, v);
  }
};

/// Keyword union, then persona trait modifiers on the fields the instruction set,
/// then defaults (neutral, low, medium, medium). Conflicting values for one field
/// resolve to the larger enum value, so keyword order never matters. Two distinct
/// emotions yield an even mix in label order.
inline InstructionAttributes decompose(std::string_view instruction, const Persona& persona,
                                       const InstructionLexicon& lexicon) {
  std::set<Emotion> emotions;
  std::optional<int> intensity, volume, speed;
  auto raise = [](std::optional<int>& slot, int v) { slot = slot ? std::max(*slot, v) : v; };
  std::string word;
  auto consume = [&] {
    if (word.empty()) return;
    if (auto it = lexicon.keywords.find(word); it != lexicon.keywords.end())
      for (const auto& s : it->second) switch (s.field) {
          case AttributeField::emotion: emotions.insert(static_cast<Emotion>(s.value)); break;
          case AttributeField::intensity: raise(intensity, s.value); break;
          case AttributeField::volume: raise(volume, s.value); break;
          case AttributeField::speed: raise(speed, s.value); break;
        }
    word.clear();
  };
  for (char ch : instruction) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalpha(c)) word += static_cast<char>(std::tolower(c));
    else consume();
  }
  consume();

  for (const auto& trait : persona.traits) {
    auto it = lexicon.trait_modifiers.find(trait);
    if (it == lexicon.trait_modifiers.end()) continue;
    for (const auto& s : it->second) {
      if (s.field == AttributeField::volume && volume) volume = s.value;
      if (s.field == AttributeField::speed && speed) speed = s.value;
      if (s.field == AttributeField::intensity && intensity) intensity = s.value;
    }
  }

  InstructionAttributes a;
  emotions.erase(Emotion::neutral);
  if (emotions.size() == 1) {
    a.emotions = {{*emotions.begin(), 1.0}};
  } else if (emotions.size() >= 2) {
    auto it = emotions.begin();
    const Emotion e1 = *it++;
    a.emotions = {{e1, 0.5}, {*it, 0.5}};
  }
  a.intensity = intensity ? static_cast<Intensity>(*intensity) : Intensity::low;
  a.volume = volume ? static_cast<Volume>(*volume) : Volume::medium;
  a.speed = speed ? static_cast<Speed>(*speed) : Speed::medium;
  return a;
}

inline constexpr std::array<double, 4> kWeightBuckets{0.25, 0.5, 0.75, 1.0};

inline int weight_bucket(double w) {
  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (std::abs(kWeightBuckets[static_cast<std::size_t>(k)] - w) <
        std::abs(kWeightBuckets[static_cast<std::size_t>(best)] - w))
      best = k;
  return best;
}

/// Payload layout: single emotion [emotion, intensity, volume, speed];
/// mixed [emotion1, bucket(weight1), emotion2, intensity, volume, speed].
/// The second weight is implied by the first.
inline std::vector<TokenId> render_attribute_tokens(const InstructionAttributes& attrs,
                                                    const TokenIdMap& map = {}) {
  if (auto v = attribute_violation(attrs); !v.empty()) throw ValidationError("attributes: " + v);
  using M = TokenIdMap;
  std::vector<TokenId> out;
  out.push_back(map.control(M::kEmotionBase + static_cast<TokenId>(attrs.emotions[0].label)));
  if (attrs.mixed()) {
    const int b = std::min(weight_bucket(attrs.emotions[0].weight), 2);
    out.push_back(map.control(M::kBucketBase + b));
    out.push_back(map.control(M::kEmotionBase + static_cast<TokenId>(attrs.emotions[1].label)));
  }
  out.push_back(map.control(M::kIntensityBase + static_cast<TokenId>(attrs.intensity)));
  out.push_back(map.control(M::kVolumeBase + static_cast<TokenId>(attrs.volume)));
  out.push_back(map.control(M::kSpeedBase + static_cast<TokenId>(attrs.speed)));
  return out;
}

inline InstructionAttributes parse_attribute_tokens(std::span<const TokenId> tokens,
                                                    const TokenIdMap& map = {}) {
  using M = TokenIdMap;
  if (tokens.empty()) throw ParseError("empty attribute payload", 0);
  auto local = [&](std::size_t i, TokenId base, TokenId count, const char* what) {
    if (i >= tokens.size())
      throw ParseError(std::string("attribute payload truncated; expected ") + what + " at position " +
                           std::to_string(i), 0);
    const TokenId l = tokens[i] - M::kControlOffset;
    if (map.classify(tokens[i]) != TokenClass::control || l < base || l >= base + count)
      throw ParseError(std::string("expected ") + what + " at position " + std::to_string(i) +
                           ", got id " + std::to_string(tokens[i]), 0);
    return l - base;
  };
  InstructionAttributes a;
  std::size_t i = 0;
  const auto e1 = static_cast<Emotion>(local(i++, M::kEmotionBase, 4, "emotion"));
  const TokenId next = i < tokens.size() ? tokens[i] - M::kControlOffset : -1;
  if (next >= M::kBucketBase && next < M::kBucketBase + 3) {
    const double w = kWeightBuckets[static_cast<std::size_t>(local(i++, M::kBucketBase, 3, "weight bucket"))];
    const auto e2 = static_cast<Emotion>(local(i++, M::kEmotionBase, 4, "emotion"));
    a.emotions = {{e1, w}, {e2, 1.0 - w}};
  } else {
    a.emotions = {{e1, 1.0}};
  }
  a.intensity = static_cast<Intensity>(local(i++, M::kIntensityBase, 2, "intensity"));
  a.volume = static_cast<Volume>(local(i++, M::kVolumeBase, 3, "volume"));
  a.speed = static_cast<Speed>(local(i++, M::kSpeedBase, 3, "speed"));
  if (i != tokens.size())
    throw ParseError("trailing tokens in attribute payload at position " + std::to_string(i), 0);
  if (auto v = attribute_violation(a); !v.empty())
    throw ParseError("decoded attributes invalid: " + v, 0);
  return a;
}

/// Every valid attribute tuple on the bucketed weight grid (the encoder's domain).
inline std::vector<InstructionAttributes> enumerate_attributes() {
  std::vector<std::vector<EmotionWeight>> emotion_sets;
  for (Emotion e : kEmotions) emotion_sets.push_back({{e, 1.0}});
  for (Emotion e1 : kNonNeutralEmotions)
    for (Emotion e2 : kNonNeutralEmotions)
      if (e1 != e2)
        for (int b = 0; b < 3; ++b) {
          const double w = kWeightBuckets[static_cast<std::size_t>(b)];
          emotion_sets.push_back({{e1, w}, {e2, 1.0 - w}});
        }
  std::vector<InstructionAttributes> out;
  for (const auto& es : emotion_sets)
    for (Intensity i : kIntensities)
      for (Volume v : kVolumes)
        for (Speed s : kSpeeds) out.push_back({es, i, v, s});
  return out;
}

}  // namespace audiobook
