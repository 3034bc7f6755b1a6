// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

#include "audiobook/types.hpp"

namespace audiobook {

enum class TokenClass : std::uint8_t { special, control, text, speech, invalid };

/// Flat id space shared by every block of a sequence.
///
///   [0, 16)                      special markers (0..8 used)
///   [16, 32)                     control tokens of the instruction payload
///   [32, 32 + T_text)            text tokens
///   [32 + T_text, .. + V_speech) speech tokens
struct TokenIdMap {
  static constexpr TokenId S = 0, T = 1, E = 2, preS = 3, preE = 4, poS = 5, poE = 6, EM = 7,
                           EMclose = 8;
  static constexpr TokenId kSpecialCount = 16;
  static constexpr TokenId kControlOffset = 16;
  static constexpr TokenId kControlCount = 16;

  // Control range layout.
  static constexpr TokenId kEmotionBase = 0;    // 4 emotion labels
  static constexpr TokenId kBucketBase = 4;     // weight buckets 0.25, 0.5, 0.75, 1.0
  static constexpr TokenId kIntensityBase = 8;  // low, high
  static constexpr TokenId kVolumeBase = 10;    // low, medium, high
  static constexpr TokenId kSpeedBase = 13;     // slow, medium, fast

  int text_vocab = 32;
  int speech_vocab = 64;

  TokenIdMap() = default;
  TokenIdMap(int t, int v) : text_vocab(t), speech_vocab(v) {}
  explicit TokenIdMap(const WorldConfig& w) : text_vocab(w.text_vocab), speech_vocab(w.speech_vocab) {}

  TokenId text_offset() const { return kControlOffset + kControlCount; }
  TokenId speech_offset() const { return text_offset() + text_vocab; }
  int vocab_size() const { return speech_offset() + speech_vocab; }

  TokenId control(TokenId local) const { return kControlOffset + local; }
  TokenId text(TokenId w) const { return text_offset() + w; }
  TokenId speech(TokenId u) const { return speech_offset() + u; }

  TokenClass classify(TokenId id) const {
    if (id >= 0 && id <= EMclose) return TokenClass::special;
    if (id >= kControlOffset && id < kControlOffset + kControlCount) return TokenClass::control;
    if (id >= text_offset() && id < speech_offset()) return TokenClass::text;
    if (id >= speech_offset() && id < vocab_size()) return TokenClass::speech;
    return TokenClass::invalid;
  }

  static std::string_view special_name(TokenId id) {
    constexpr std::string_view names[] = {"S", "T", "E", "preS", "preE", "poS", "poE", "EM", "/EM"};
    return id >= 0 && id <= EMclose ? names[id] : "?";
  }
};

}  // namespace audiobook
