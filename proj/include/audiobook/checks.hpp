// SPDX-License-Identifier: Apache-2.0
//
// Self-checks shared by the test suite, the acceptance runner and the CLI:
// the human-readable layout dump, randomized build/parse round trips and a
// finite-difference gradient check.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "audiobook/instruction.hpp"
#include "audiobook/model.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/rng.hpp"
#include "audiobook/script.hpp"
#include "audiobook/sequence.hpp"

namespace audiobook {

/// One line per token: index, id, role, symbolic name.
inline std::string describe_sequence(const TokenSequence& s, const TokenIdMap& map) {
  std::string out = "speaker";
  for (double v : s.speaker.values) out += fmt::format(" {:.6f}", v);
  out += "\n";
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    const TokenId id = s.ids[i];
    std::string name;
    switch (map.classify(id)) {
      case TokenClass::special: name = std::string(TokenIdMap::special_name(id)); break;
      case TokenClass::control: name = fmt::format("ctl{}", id - TokenIdMap::kControlOffset); break;
      case TokenClass::text: name = fmt::format("w{}", id - map.text_offset()); break;
      case TokenClass::speech: name = fmt::format("u{}", id - map.speech_offset()); break;
      case TokenClass::invalid: name = "?"; break;
    }
    out += fmt::format("{:3} {:4} {:<12} {}\n", i, id, to_string(s.roles[i]), name);
  }
  return out;
}

/// Plain, context and context+instruction layouts of the first dialogue utterance
/// that has both a preceding and a following neighbour.
inline std::string layout_dump(const Corpus& corpus) {
  const TokenIdMap map(corpus.world);
  const auto index = corpus.index();
  for (const auto& ch : corpus.chapters) {
    const auto windows = build_context_windows(ch, 1, 1);
    for (std::size_t i = 0; i < ch.utterances.size(); ++i) {
      const Utterance& u = ch.utterances[i];
      if (u.kind != UtteranceKind::dialogue || windows[i].pre.empty() || windows[i].post.empty()) continue;
      const PromptAssignment self{u.id, u.id, 1.0, false};
      std::string out = fmt::format("# utterance {} chapter {}\n", u.id, ch.id);
      const std::pair<const char*, SequenceFlags> variants[] = {
          {"plain", {false, false, {}}}, {"ctx", {true, false, {}}}, {"ctx_inst", {true, true, {}}}};
      for (const auto& [name, flags] : variants) {
        out += fmt::format("## {}\n", name);
        out += describe_sequence(build_training_sequence(u, windows[i], self, std::nullopt, map, flags, index), map);
      }
      return out;
    }
  }
  throw ValidationError("corpus has no dialogue utterance with neighbours on both sides");
}

/// Random well-formed sequence parts over the given vocabularies.
inline SequenceParts random_parts(Rng& rng, const TokenIdMap& map) {
  static const std::vector<InstructionAttributes> all = enumerate_attributes();
  auto tokens = [&](int lo, int hi, int vocab) {
    TextTokens t(static_cast<std::size_t>(rng.range(lo, hi)));
    for (auto& w : t) w = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
    return t;
  };
  SequenceParts p;
  if (rng.bernoulli(0.5)) p.context = SequenceParts::Context{tokens(0, 12, map.text_vocab), tokens(0, 12, map.text_vocab)};
  if (rng.bernoulli(0.5)) p.instruction = render_attribute_tokens(all[rng.below(all.size())], map);
  p.text = tokens(0, 10, map.text_vocab);
  p.speech = tokens(0, 10, map.speech_vocab);
  p.terminated = rng.bernoulli(0.8);
  return p;
}

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
};

/// Central differences on `n` random parameters of a freshly initialized model.
/// A coordinate passes when |analytic - numeric| <= rel_tol * max(|analytic|, |numeric|)
/// or both are below abs_floor (parameters the sequence does not touch).
inline GradCheckResult gradient_check(const ModelConfig& cfg, const TokenSequence& seq, int n, double eps,
                                      double rel_tol, double abs_floor, std::uint64_t seed) {
  const ParamVector p = init_parameters(cfg);
  const ModelInput in = model_input(seq);
  const auto mask = loss_mask(seq);
  ParamVector g(p.size(), 0.0);
  Model(cfg, p).loss(in, mask, g);
  Rng rng(derive_seed(seed, {tag("gradcheck")}));
  GradCheckResult r;
  ParamVector q = p;
  for (int k = 0; k < n; ++k) {
    const std::size_t i = rng.below(p.size());
    q[i] = p[i] + eps;
    const double lp = Model(cfg, q).loss(in, mask);
    q[i] = p[i] - eps;
    const double lm = Model(cfg, q).loss(in, mask);
    q[i] = p[i];
    const double num = (lp - lm) / (2.0 * eps);
    const double scale = std::max(std::abs(g[i]), std::abs(num));
    const double diff = std::abs(g[i] - num);
    ++r.checked;
    if (scale < abs_floor) continue;
    const double rel = diff / scale;
    r.worst_rel = std::max(r.worst_rel, rel);
    if (rel > rel_tol) ++r.failed;
  }
  return r;
}

/// A context+instruction training sequence of a small seeded corpus, used as the
/// gradient-check input so every parameter group is exercised.
inline TokenSequence gradcheck_sequence(const WorldConfig& world, std::uint64_t seed) {
  CorpusShape sh{1, 8, 4, 0.5, 0.5, 0.5, 0.0, 3, 8, 0.1, 0, 0, 0.0};
  WorldConfig w = world;
  w.seed = seed;
  const Corpus c = make_corpus(sh, w);
  const auto& ch = c.chapters.front();
  const auto windows = build_context_windows(ch, 1, 1);
  const auto index = c.index();
  std::size_t pick = 1;
  for (std::size_t i = 1; i + 1 < ch.utterances.size(); ++i)
    if (ch.utterances[i].kind == UtteranceKind::dialogue) {
      pick = i;
      break;
    }
  const Utterance& u = ch.utterances[pick];
  return build_training_sequence(u, windows[pick], {u.id, u.id, 1.0, false}, std::nullopt, TokenIdMap(w),
                                 {true, true, {}}, index);
}

}  // namespace audiobook
