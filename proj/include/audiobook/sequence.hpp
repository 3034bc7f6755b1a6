// SPDX-License-Identifier: Apache-2.0
//
// Conditional sequence layout consumed by the speech LM:
//
//   [speaker] [preS C_pre.. preE poS C_post.. poE] S [EM payload.. /EM] W.. T U.. E
//
// The speaker embedding occupies one non-token slot in front of the ids. The
// context and instruction blocks are omitted entirely when unused unless the
// empty-skeleton option asks for their markers.
#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "audiobook/corpus.hpp"
#include "audiobook/error.hpp"
#include "audiobook/instruction.hpp"
#include "audiobook/script.hpp"
#include "audiobook/token_map.hpp"
#include "audiobook/types.hpp"

namespace audiobook {

enum class Role : std::uint8_t { special, context_text, control, text, speech };

inline std::string_view to_string(Role r) {
  constexpr std::string_view n[] = {"special", "context_text", "control", "text", "speech"};
  return n[static_cast<std::size_t>(r)];
}

enum class InferenceMode : std::uint8_t { plain, ctx, inst, ctx_inst };

inline std::string_view to_string(InferenceMode m) {
  constexpr std::string_view n[] = {"plain", "ctx", "inst", "ctx_inst"};
  return n[static_cast<std::size_t>(m)];
}
inline InferenceMode parse_mode(std::string_view s) {
  for (auto m : {InferenceMode::plain, InferenceMode::ctx, InferenceMode::inst, InferenceMode::ctx_inst})
    if (to_string(m) == s) return m;
  throw UsageError("unknown inference mode '" + std::string(s) + "'");
}
inline bool uses_context(InferenceMode m) { return m == InferenceMode::ctx || m == InferenceMode::ctx_inst; }
inline bool uses_instruction(InferenceMode m) { return m == InferenceMode::inst || m == InferenceMode::ctx_inst; }

/// Block contents of a sequence, in local (unoffset) token ids except the
/// instruction payload, which is already in control-range ids.
struct SequenceParts {
  struct Context {
    TextTokens pre;   // document order
    TextTokens post;  // document order
    bool operator==(const Context&) const = default;
  };
  std::optional<Context> context;
  std::optional<std::vector<TokenId>> instruction;
  TextTokens text;
  SpeechTokens speech;
  bool terminated = true;  // false for an inference prefix ending at T

  bool operator==(const SequenceParts&) const = default;
};

struct TokenSequence {
  SpeakerEmbedding speaker;
  std::vector<TokenId> ids;
  std::vector<Role> roles;
  // Block boundaries as half-open index ranges into ids.
  std::optional<std::pair<std::size_t, std::size_t>> context_block;
  std::optional<std::pair<std::size_t, std::size_t>> instruction_block;
  std::size_t start = 0;          // index of S
  std::pair<std::size_t, std::size_t> text_block{0, 0};
  std::size_t switch_index = 0;   // index of T
  std::pair<std::size_t, std::size_t> speech_block{0, 0};

  std::size_t size() const { return ids.size(); }
  bool terminated() const { return !ids.empty() && ids.back() == TokenIdMap::E; }
};

// ----------------------------------------------------------------------------
// Blocks

inline std::vector<TokenId> build_context_block(std::span<const TextTokens> pre_texts,
                                                std::span<const TextTokens> post_texts,
                                                const TokenIdMap& map) {
  std::vector<TokenId> out{TokenIdMap::preS};
  auto emit = [&](std::span<const TextTokens> texts) {
    for (const auto& t : texts)
      for (TokenId w : t) {
        if (w < 0 || w >= map.text_vocab) throw ValidationError("context token outside text vocabulary");
        out.push_back(map.text(w));
      }
  };
  emit(pre_texts);
  out.push_back(TokenIdMap::preE);
  out.push_back(TokenIdMap::poS);
  emit(post_texts);
  out.push_back(TokenIdMap::poE);
  return out;
}

inline std::vector<TokenId> build_instruction_block(std::span<const TokenId> payload,
                                                    const TokenIdMap& map) {
  std::vector<TokenId> out{TokenIdMap::EM};
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (map.classify(payload[i]) != TokenClass::control)
      throw ValidationError("instruction payload id " + std::to_string(payload[i]) +
                            " at position " + std::to_string(i) + " is outside the control range");
    out.push_back(payload[i]);
  }
  out.push_back(TokenIdMap::EMclose);
  return out;
}

struct BuildOptions {
  bool empty_skeleton = false;  // emit empty context/instruction markers for unused blocks
};

inline TokenSequence assemble(const SequenceParts& p, const SpeakerEmbedding& speaker,
                              const TokenIdMap& map, BuildOptions opt = {}) {
  TokenSequence s;
  s.speaker = speaker;
  auto push = [&](TokenId id, Role r) {
    s.ids.push_back(id);
    s.roles.push_back(r);
  };
  if (p.context || opt.empty_skeleton) {
    const std::size_t b = s.ids.size();
    push(TokenIdMap::preS, Role::special);
    if (p.context)
      for (TokenId w : p.context->pre) push(map.text(w), Role::context_text);
    push(TokenIdMap::preE, Role::special);
    push(TokenIdMap::poS, Role::special);
    if (p.context)
      for (TokenId w : p.context->post) push(map.text(w), Role::context_text);
    push(TokenIdMap::poE, Role::special);
    s.context_block = {b, s.ids.size()};
  }
  s.start = s.ids.size();
  push(TokenIdMap::S, Role::special);
  if (p.instruction || opt.empty_skeleton) {
    const std::size_t b = s.ids.size();
    push(TokenIdMap::EM, Role::special);
    if (p.instruction)
      for (TokenId c : *p.instruction) {
        if (map.classify(c) != TokenClass::control) throw ValidationError("payload outside control range");
        push(c, Role::control);
      }
    push(TokenIdMap::EMclose, Role::special);
    s.instruction_block = {b, s.ids.size()};
  }
  s.text_block.first = s.ids.size();
  for (TokenId w : p.text) {
    if (w < 0 || w >= map.text_vocab) throw ValidationError("text token outside text vocabulary");
    push(map.text(w), Role::text);
  }
  s.text_block.second = s.ids.size();
  s.switch_index = s.ids.size();
  push(TokenIdMap::T, Role::special);
  s.speech_block.first = s.ids.size();
  for (TokenId u : p.speech) {
    if (u < 0 || u >= map.speech_vocab) throw ValidationError("speech token outside speech vocabulary");
    push(map.speech(u), Role::speech);
  }
  s.speech_block.second = s.ids.size();
  if (p.terminated) push(TokenIdMap::E, Role::special);
  return s;
}

/// Recovers the blocks of an id list; reports the first out-of-order position.
inline SequenceParts parse_sequence(std::span<const TokenId> ids, const TokenIdMap& map) {
  if (ids.empty()) throw ParseError("empty sequence", 0);
  auto fail = [](std::size_t i, const std::string& what) -> ParseError {
    return ParseError("malformed sequence at index " + std::to_string(i) + ": " + what, 0);
  };
  SequenceParts p;
  std::size_t i = 0;
  auto expect = [&](TokenId id) {
    if (i >= ids.size() || ids[i] != id)
      throw fail(i, std::string("expected ") + std::string(TokenIdMap::special_name(id)));
    ++i;
  };
  auto text_run = [&](TextTokens& out) {
    while (i < ids.size() && map.classify(ids[i]) == TokenClass::text) out.push_back(ids[i++] - map.text_offset());
  };
  if (ids[0] == TokenIdMap::preS) {
    SequenceParts::Context c;
    expect(TokenIdMap::preS);
    text_run(c.pre);
    expect(TokenIdMap::preE);
    expect(TokenIdMap::poS);
    text_run(c.post);
    expect(TokenIdMap::poE);
    p.context = std::move(c);
  }
  expect(TokenIdMap::S);
  if (i < ids.size() && ids[i] == TokenIdMap::EM) {
    ++i;
    std::vector<TokenId> payload;
    while (i < ids.size() && map.classify(ids[i]) == TokenClass::control) payload.push_back(ids[i++]);
    expect(TokenIdMap::EMclose);
    p.instruction = std::move(payload);
  }
  text_run(p.text);
  expect(TokenIdMap::T);
  while (i < ids.size() && map.classify(ids[i]) == TokenClass::speech)
    p.speech.push_back(ids[i++] - map.speech_offset());
  if (i == ids.size()) {
    p.terminated = false;
    return p;
  }
  expect(TokenIdMap::E);
  if (i != ids.size()) throw fail(i, "tokens after E");
  return p;
}

// ----------------------------------------------------------------------------
// Corpus-level builders

struct PromptAssignment {
  int target_utterance_id = 0;
  int prompt_utterance_id = 0;
  double similarity = 1.0;
  bool fallback = false;
  bool operator==(const PromptAssignment&) const = default;
};

struct SequenceFlags {
  bool use_ctx = false;
  bool use_inst = false;
  BuildOptions build{};
};

using UtteranceIndex = std::unordered_map<int, const Utterance*>;

namespace detail {

inline const Utterance& resolve(const UtteranceIndex& index, int id, const char* what) {
  auto it = index.find(id);
  if (it == index.end()) throw ValidationError(std::string("unresolvable ") + what + " utterance " + std::to_string(id));
  return *it->second;
}

inline SequenceParts::Context context_parts(const ContextWindow& w, const UtteranceIndex& index) {
  SequenceParts::Context c;
  // Windows list the nearest neighbour first; blocks hold document order.
  for (auto it = w.pre.rbegin(); it != w.pre.rend(); ++it) {
    const auto& t = resolve(index, *it, "context").text;
    c.pre.insert(c.pre.end(), t.begin(), t.end());
  }
  for (int id : w.post) {
    const auto& t = resolve(index, id, "context").text;
    c.post.insert(c.post.end(), t.begin(), t.end());
  }
  return c;
}

}  // namespace detail

/// Full teacher-forcing sequence for one utterance. The speaker slot carries the
/// prompt utterance's embedding (the target's own when the prompt is the target).
inline TokenSequence build_training_sequence(const Utterance& u, const ContextWindow& window,
                                             const PromptAssignment& prompt,
                                             const std::optional<InstructionAttributes>& attrs,
                                             const TokenIdMap& map, SequenceFlags flags,
                                             const UtteranceIndex& index) {
  if (prompt.target_utterance_id != u.id)
    throw ValidationError("prompt assignment targets utterance " + std::to_string(prompt.target_utterance_id) +
                          ", not " + std::to_string(u.id));
  const Utterance& prompt_u = prompt.prompt_utterance_id == u.id
                                  ? u
                                  : detail::resolve(index, prompt.prompt_utterance_id, "prompt");
  SequenceParts p;
  if (flags.use_ctx) p.context = detail::context_parts(window, index);
  if (flags.use_inst) p.instruction = render_attribute_tokens(attrs ? *attrs : u.attributes, map);
  p.text = u.text;
  p.speech = u.speech;
  return assemble(p, prompt_u.embedding, map, flags.build);
}

struct InferenceInputs {
  TextTokens text;
  SpeakerEmbedding speaker;
  std::optional<SequenceParts::Context> context;
  std::optional<InstructionAttributes> attrs;
};

/// Same layout as training, cut after T.
inline TokenSequence build_inference_prefix(InferenceMode mode, const InferenceInputs& in,
                                            const TokenIdMap& map, BuildOptions opt = {}) {
  SequenceParts p;
  if (uses_context(mode)) {
    if (!in.context) throw ValidationError(std::string(to_string(mode)) + " mode requires context");
    p.context = in.context;
  }
  if (uses_instruction(mode)) {
    if (!in.attrs) throw ValidationError(std::string(to_string(mode)) + " mode requires instruction attributes");
    p.instruction = render_attribute_tokens(*in.attrs, map);
  }
  p.text = in.text;
  p.terminated = false;
  return assemble(p, in.speaker, map, opt);
}

/// Convenience: inference inputs for an utterance of a corpus.
inline InferenceInputs inference_inputs(const Utterance& u, const ContextWindow& w,
                                        const SpeakerEmbedding& speaker,
                                        const std::optional<InstructionAttributes>& attrs,
                                        const UtteranceIndex& index) {
  InferenceInputs in;
  in.text = u.text;
  in.speaker = speaker;
  in.context = detail::context_parts(w, index);
  in.attrs = attrs;
  return in;
}

/// Position of each id relative to the most recent special marker (markers get 0).
inline std::vector<int> block_positions(std::span<const TokenId> ids) {
  std::vector<int> pos(ids.size());
  int p = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    p = ids[i] < TokenIdMap::kSpecialCount ? 0 : p + 1;
    pos[i] = p;
  }
  return pos;
}

/// 1 where the token is a training target: speech tokens and the E that ends them.
inline std::vector<std::uint8_t> loss_mask(const TokenSequence& s) {
  std::vector<std::uint8_t> m(s.ids.size(), 0);
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (s.roles[i] == Role::speech) m[i] = 1;
    else if (s.ids[i] == TokenIdMap::E && i > 0 && (s.roles[i - 1] == Role::speech || s.ids[i - 1] == TokenIdMap::T))
      m[i] = 1;
  }
  return m;
}

// ----------------------------------------------------------------------------
// Dataset file: {"speaker":[..],"ids":[..],"roles":[..],"loss_mask":[..]} per line

inline std::string sequence_record(const TokenSequence& s) {
  std::string roles = "[";
  for (std::size_t i = 0; i < s.roles.size(); ++i) {
    if (i) roles += ',';
    roles += std::to_string(static_cast<int>(s.roles[i]));
  }
  roles += ']';
  return fmt::format(R"({{"speaker":{},"ids":{},"roles":{},"loss_mask":{}}})",
                     detail::real_list(s.speaker.values), detail::int_list(s.ids), roles,
                     detail::int_list(loss_mask(s)));
}

inline void save_dataset(const std::vector<TokenSequence>& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& s : data) os << sequence_record(s) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<TokenSequence> load_dataset(const std::filesystem::path& path, const TokenIdMap& map) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SpeakerEmbedding spk;
      spk.values = j.at("speaker").get<std::vector<double>>();
      const auto ids = j.at("ids").get<std::vector<TokenId>>();
      const auto parts = parse_sequence(ids, map);
      TokenSequence s = assemble(parts, spk, map);
      if (s.ids != ids) throw ParseError("sequence does not use the canonical layout", lineno);
      const auto roles = j.at("roles").get<std::vector<int>>();
      for (std::size_t i = 0; i < roles.size() && i < s.roles.size(); ++i)
        if (roles[i] != static_cast<int>(s.roles[i])) throw ParseError("role mismatch at index " + std::to_string(i), lineno);
      out.push_back(std::move(s));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

}  // namespace audiobook
