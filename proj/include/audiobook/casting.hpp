// SPDX-License-Identifier: Apache-2.0
//
// Voiceprint similarity, per-chapter voice clustering and prompt selection.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "audiobook/corpus.hpp"
#include "audiobook/error.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/sequence.hpp"
#include "audiobook/types.hpp"

namespace audiobook {

/// Cosine similarity of two unit-norm embeddings, clamped to [-1, 1].
inline double similarity(const SpeakerEmbedding& e1, const SpeakerEmbedding& e2) {
  if (e1.values.size() != e2.values.size()) throw ValidationError("similarity: dimension mismatch");
  if (!e1.unit_norm() || !e2.unit_norm()) throw ValidationError("similarity: embedding not unit-norm");
  if (e1.values == e2.values) return 1.0;
  return std::clamp(dot(e1.values, e2.values), -1.0, 1.0);
}

enum class PromptMode : std::uint8_t { non_decoupled, decoupled };

/// How a decoupled prompt is chosen among candidates that pass the threshold.
enum class PromptPick : std::uint8_t {
  most_diverse,  // lowest similarity still >= threshold
  most_similar,  // highest similarity
};

struct PromptPolicy {
  PromptMode mode = PromptMode::decoupled;
  double similarity_threshold = 0.8;
  bool same_chapter_only = true;
  bool include_emotional_bank = false;
  PromptPick pick = PromptPick::most_diverse;

  static PromptPolicy non_decoupled() { return {PromptMode::non_decoupled, 1.0}; }
  static PromptPolicy decoupled(double threshold) { return {PromptMode::decoupled, threshold}; }

  void validate() const {
    if (!(similarity_threshold >= 0.0 && similarity_threshold <= 1.0))
      throw ValidationError("similarity threshold must lie in [0,1]");
  }
  std::string name() const {
    if (mode == PromptMode::non_decoupled) return "non_decoupled";
    return fmt::format("decoupled-{:g}", similarity_threshold);
  }
};

/// Greedy centroid clustering in input order: join the first cluster whose
/// (renormalized running-mean) centroid has similarity >= threshold, else open one.
inline std::vector<int> cluster_embeddings(std::span<const SpeakerEmbedding* const> embeddings,
                                           double threshold,
                                           std::vector<std::vector<double>>* centroids_out = nullptr) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("threshold must lie in [0,1]");
  std::vector<std::vector<double>> sums;
  std::vector<std::vector<double>> centroids;
  std::vector<int> ids;
  ids.reserve(embeddings.size());
  for (const SpeakerEmbedding* e : embeddings) {
    int chosen = -1;
    for (std::size_t k = 0; k < centroids.size(); ++k)
      if (dot(centroids[k], e->values) >= threshold) {
        chosen = static_cast<int>(k);
        break;
      }
    if (chosen < 0) {
      sums.push_back(e->values);
      centroids.push_back(e->values);
      chosen = static_cast<int>(centroids.size() - 1);
    } else {
      auto& s = sums[static_cast<std::size_t>(chosen)];
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += e->values[i];
      double n = 0.0;
      for (double v : s) n += v * v;
      n = std::sqrt(n);
      auto& c = centroids[static_cast<std::size_t>(chosen)];
      for (std::size_t i = 0; i < s.size(); ++i) c[i] = n > 0.0 ? s[i] / n : 0.0;
    }
    ids.push_back(chosen);
  }
  if (centroids_out) *centroids_out = std::move(centroids);
  return ids;
}

inline std::vector<int> cluster_voices(std::span<const Utterance> utterances, double threshold,
                                       std::vector<std::vector<double>>* centroids = nullptr) {
  std::vector<const SpeakerEmbedding*> e;
  for (const auto& u : utterances) e.push_back(&u.embedding);
  return cluster_embeddings(e, threshold, centroids);
}

/// Picks the prompt for `target` among `pool` (restricted to the target's chapter
/// when required) plus the cluster-compatible `bank`, never the target itself.
/// Falls back to the most similar candidate, flagged, when none passes the threshold.
inline PromptAssignment select_prompt(const Utterance& target, std::span<const Utterance> pool,
                                      const PromptPolicy& policy,
                                      std::span<const Utterance> emotional_bank = {}) {
  policy.validate();
  if (policy.mode == PromptMode::non_decoupled) return {target.id, target.id, 1.0, false};

  struct Candidate {
    int id;
    double sim;
  };
  std::vector<Candidate> cands;
  for (const auto& u : pool) {
    if (u.id == target.id) continue;
    if (policy.same_chapter_only && u.chapter_id != target.chapter_id) continue;
    cands.push_back({u.id, similarity(target.embedding, u.embedding)});
  }
  if (policy.include_emotional_bank)
    for (const auto& u : emotional_bank)
      if (u.id != target.id) cands.push_back({u.id, similarity(target.embedding, u.embedding)});
  if (cands.empty())
    throw ValidationError("no prompt candidates for utterance " + std::to_string(target.id));

  auto better_high = [](const Candidate& x, const Candidate& y) {
    return x.sim > y.sim || (x.sim == y.sim && x.id < y.id);
  };
  auto better_low = [](const Candidate& x, const Candidate& y) {
    return x.sim < y.sim || (x.sim == y.sim && x.id < y.id);
  };
  std::optional<Candidate> best;
  for (const auto& c : cands) {
    if (c.sim < policy.similarity_threshold) continue;
    const bool take = !best || (policy.pick == PromptPick::most_similar ? better_high(c, *best)
                                                                        : better_low(c, *best));
    if (take) best = c;
  }
  if (best) return {target.id, best->id, best->sim, false};
  Candidate top = cands.front();
  for (const auto& c : cands)
    if (better_high(c, top)) top = c;
  return {target.id, top.id, top.sim, true};
}

/// Bank entries compatible with each cluster of a chapter: an entry belongs to the
/// first cluster whose centroid it matches at the policy threshold.
inline std::vector<int> bank_cluster_ids(std::span<const Utterance> bank,
                                         const std::vector<std::vector<double>>& centroids,
                                         double threshold) {
  std::vector<int> out;
  for (const auto& b : bank) {
    int id = -1;
    for (std::size_t k = 0; k < centroids.size(); ++k)
      if (dot(centroids[k], b.embedding.values) >= threshold) {
        id = static_cast<int>(k);
        break;
      }
    out.push_back(id);
  }
  return out;
}

inline std::vector<PromptAssignment> build_prompt_table(const Corpus& corpus, const PromptPolicy& policy,
                                                        std::span<const Utterance> emotional_bank = {}) {
  policy.validate();
  std::vector<PromptAssignment> table;
  std::vector<Utterance> all;
  if (!policy.same_chapter_only)
    for (const auto& ch : corpus.chapters) all.insert(all.end(), ch.utterances.begin(), ch.utterances.end());
  for (const auto& ch : corpus.chapters) {
    std::vector<int> clusters;
    std::vector<int> bank_clusters;
    if (policy.mode == PromptMode::decoupled && policy.include_emotional_bank && !emotional_bank.empty()) {
      std::vector<std::vector<double>> centroids;
      clusters = cluster_voices(ch.utterances, policy.similarity_threshold, &centroids);
      bank_clusters = bank_cluster_ids(emotional_bank, centroids, policy.similarity_threshold);
    }
    std::span<const Utterance> pool = policy.same_chapter_only ? std::span<const Utterance>(ch.utterances)
                                                               : std::span<const Utterance>(all);
    for (std::size_t i = 0; i < ch.utterances.size(); ++i) {
      std::vector<Utterance> bank;
      if (!clusters.empty())
        for (std::size_t b = 0; b < emotional_bank.size(); ++b)
          if (bank_clusters[b] == clusters[i]) bank.push_back(emotional_bank[b]);
      table.push_back(select_prompt(ch.utterances[i], pool, policy, bank));
    }
  }
  return table;
}

/// Mean assignment similarity; excludes fallback assignments when asked.
inline double mean_assignment_similarity(std::span<const PromptAssignment> table, bool exclude_fallbacks) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& a : table) {
    if (exclude_fallbacks && a.fallback) continue;
    s += a.similarity;
    ++n;
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

inline std::string prompt_record(const PromptAssignment& a) {
  return fmt::format(R"({{"target":{},"prompt":{},"similarity":{},"fallback":{}}})", a.target_utterance_id,
                     a.prompt_utterance_id, detail::fmt_real(a.similarity), a.fallback ? "true" : "false");
}

inline void save_prompt_table(std::span<const PromptAssignment> table, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& a : table) os << prompt_record(a) << '\n';
}

inline std::vector<PromptAssignment> load_prompt_table(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<PromptAssignment> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("target").get<int>(), j.at("prompt").get<int>(), j.at("similarity").get<double>(),
                     j.at("fallback").get<bool>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

/// Utterances with non-neutral attributes and jitter-free embeddings; ids start at first_id.
inline std::vector<Utterance> make_emotional_bank(const Corpus& corpus, int per_speaker, int first_id) {
  std::vector<Utterance> bank;
  Rng rng(derive_seed(corpus.world.seed, {tag("emotional-bank")}));
  int id = first_id;
  for (const auto& p : corpus.personas) {
    if (p.speaker_id == 0) continue;
    for (int k = 0; k < per_speaker; ++k) {
      Utterance u;
      u.id = id++;
      u.chapter_id = -1;
      u.kind = UtteranceKind::dialogue;
      u.speaker_id = p.speaker_id;
      for (int w = 0; w < 5; ++w)
        u.text.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(corpus.world.text_vocab - 1))));
      u.attributes = InstructionAttributes::single(kNonNeutralEmotions[static_cast<std::size_t>(k) % 3],
                                                   k % 2 ? Intensity::high : Intensity::low);
      u.speech = oracle_speech_tokens(u.text, u.speaker_id, u.attributes, false, corpus.world);
      u.embedding = oracle_speaker_embedding(p.speaker_id, 0, 0.0, corpus.world);
      bank.push_back(std::move(u));
    }
  }
  return bank;
}

}  // namespace audiobook
