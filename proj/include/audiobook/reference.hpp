// SPDX-License-Identifier: Apache-2.0
//
// The reference experiment: corpora, per-stage datasets and the cached
// stage 1 -> 2 -> 3 training chain that the evaluation, ablations and pipeline load.
#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "audiobook/casting.hpp"
#include "audiobook/checkpoint.hpp"
#include "audiobook/config.hpp"
#include "audiobook/distill.hpp"
#include "audiobook/eval.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/sequence.hpp"
#include "audiobook/train.hpp"

namespace audiobook {

/// Plain sequences (text -> speech, speaker slot from the prompt table).
inline std::vector<TokenSequence> stage1_dataset(const Corpus& corpus, const PromptPolicy& policy,
                                                 const TokenIdMap& map) {
  std::map<int, PromptAssignment> prompts;
  for (const auto& a : build_prompt_table(corpus, policy)) prompts[a.target_utterance_id] = a;
  const CorpusView view(corpus);
  std::vector<TokenSequence> out;
  for (const auto& ch : corpus.chapters)
    for (const auto& u : ch.utterances)
      out.push_back(build_training_sequence(u, view.window(u.id), prompts.at(u.id), std::nullopt, map, {}, view.index));
  return out;
}

/// Context/instruction sequences. A small share stays plain; otherwise dialogue
/// mostly carries both blocks, sometimes only the instruction, and narration
/// carries context, half the time also its (neutral) instruction.
inline std::vector<TokenSequence> stage2_dataset(const Corpus& corpus, const PromptPolicy& policy,
                                                 const TrainPlan& plan, std::uint64_t seed, const TokenIdMap& map) {
  std::map<int, PromptAssignment> prompts;
  for (const auto& a : build_prompt_table(corpus, policy)) prompts[a.target_utterance_id] = a;
  const CorpusView view(corpus);
  Rng rng(derive_seed(seed, {tag("stage2-modes")}));
  std::vector<TokenSequence> out;
  for (const auto& ch : corpus.chapters)
    for (const auto& u : ch.utterances) {
      SequenceFlags f;
      if (rng.bernoulli(plan.stage2_plain)) {
        // neither block
      } else if (u.kind == UtteranceKind::dialogue) {
        f.use_inst = true;
        f.use_ctx = !rng.bernoulli(plan.dialogue_inst_only);
      } else {
        f.use_ctx = true;
        f.use_inst = !rng.bernoulli(plan.narration_ctx_only);
      }
      out.push_back(build_training_sequence(u, view.window(u.id), prompts.at(u.id), std::nullopt, map, f, view.index));
    }
  return out;
}

/// Distillation spec over the first `sources` dialogue utterances of a corpus,
/// covering every non-neutral (emotion, intensity) cell.
inline DistillSpec distill_spec(const Corpus& corpus, const DistillPlan& plan, std::uint64_t seed) {
  DistillSpec s;
  for (const auto& ch : corpus.chapters)
    for (const auto& u : ch.utterances)
      if (u.kind == UtteranceKind::dialogue && static_cast<int>(s.source_utterances.size()) < plan.sources)
        s.source_utterances.push_back(u.id);
  s.grid = make_grid(kNonNeutralEmotions, kIntensities);
  s.samples_per_cell = plan.samples_per_cell;
  s.seed = derive_seed(seed, {tag("distill")});
  return s;
}

struct ReferenceCorpora {
  Corpus reference, stage2, heldout;
  TestSuites suites;
};

inline ReferenceCorpora make_reference_corpora(const ExperimentConfig& cfg) {
  ReferenceCorpora r{make_corpus(cfg.corpus, cfg.world), make_corpus(cfg.stage2_corpus, cfg.world),
                     make_corpus(cfg.heldout_corpus, cfg.world), {}};
  std::vector<int> held;
  for (const auto& ch : r.heldout.chapters) held.push_back(ch.id);
  r.suites = build_testsets(r.heldout, held, cfg.eval, derive_seed(cfg.seed, {tag("suites")}));
  return r;
}

struct ReferenceChain {
  ModelCheckpoint stage1, stage2, stage3;
  std::optional<DistillResult> distill;  // empty when stage 3 came from the cache
};

using ChainLog = std::function<void(const std::string&)>;

inline TrainConfig stage_train_config(const ExperimentConfig& cfg, int stage) {
  TrainConfig tc;
  tc.stage = stage;
  tc.base_lr = cfg.train.base_lr;
  tc.batch_size = cfg.train.batch_size;
  tc.steps = stage == 1 ? cfg.train.stage1_steps : stage == 2 ? cfg.train.stage2_steps : cfg.train.stage3_steps;
  tc.warmup = cfg.train.warmup;
  tc.heldout_fraction = cfg.train.heldout_fraction;
  tc.log_every = std::max(1, tc.steps / 10);
  tc.seed = derive_seed(cfg.seed, {tag("train"), static_cast<std::uint64_t>(stage)});
  return tc;
}

/// Stage-3 data: the balanced distilled set plus an optional share of stage-2 sequences.
inline std::vector<TokenSequence> stage3_dataset(const DistillResult& d, std::span<const TokenSequence> stage2,
                                                 double mixin, std::uint64_t seed) {
  std::vector<TokenSequence> out = d.dataset;
  const auto extra = static_cast<std::size_t>(mixin * static_cast<double>(d.dataset.size()));
  if (extra > 0 && !stage2.empty()) {
    Rng rng(derive_seed(seed, {tag("stage3-mixin")}));
    for (std::size_t i = 0; i < extra; ++i) out.push_back(stage2[rng.below(stage2.size())]);
  }
  return out;
}

/// Cache key of a stage: hash of the configuration sections that stage depends on.
inline std::uint64_t stage_key(const ExperimentConfig& cfg, int stage) {
  nlohmann::json j = config_to_json(cfg);
  for (const char* k : {"heldout_corpus", "eval", "pipeline"}) j.erase(k);
  auto& t = j["train"];
  if (stage < 3) {
    j.erase("distill");
    for (const char* k : {"stage3_steps", "stage3_mixin"}) t.erase(k);
  }
  if (stage < 2) {
    j.erase("stage2_corpus");
    for (const char* k : {"stage2_steps", "dialogue_inst_only", "narration_ctx_only", "stage2_plain"}) t.erase(k);
  }
  j["stage"] = stage;
  return tag(j.dump());
}

/// Cached checkpoint file of a stage under `cache_dir`.
inline std::filesystem::path stage_checkpoint_path(const ExperimentConfig& cfg, const std::filesystem::path& cache_dir,
                                                   int stage) {
  return cache_dir / fmt::format("stage{}-{:016x}.ckpt", stage, stage_key(cfg, stage));
}

/// Trains the three stages, reusing `cache_dir/stage<k>-<key>.ckpt` files when
/// present. An empty cache_dir disables caching.
inline ReferenceChain reference_chain(const ExperimentConfig& cfg, const ReferenceCorpora& corp,
                                      const std::filesystem::path& cache_dir, const ChainLog& log = {}) {
  const TokenIdMap map(cfg.world);
  auto file = [&](int stage) { return stage_checkpoint_path(cfg, cache_dir, stage); };
  auto cached = [&](int stage) -> std::optional<ModelCheckpoint> {
    if (cache_dir.empty() || !std::filesystem::exists(file(stage))) return std::nullopt;
    if (log) log(fmt::format("loading {}", file(stage).string()));
    return load_checkpoint(file(stage));
  };
  auto store = [&](const ModelCheckpoint& c, int stage) {
    if (cache_dir.empty()) return;
    std::filesystem::create_directories(cache_dir);
    save_checkpoint(c, file(stage));
  };
  auto progress = [&](const TrainLogEntry& e) {
    auto num = [](double v) { return std::isnan(v) ? std::string("-") : fmt::format("{:.4f}", v); };
    if (log) log(fmt::format("stage {} step {} loss {} heldout {} lr {:.2e}", e.stage, e.step, num(e.loss), num(e.heldout), e.lr));
  };
  ReferenceChain ch;
  if (auto c = cached(1)) {
    ch.stage1 = *c;
  } else {
    const auto data = stage1_dataset(corp.reference, cfg.prompt, map);
    ch.stage1 = train_stage(init_model(cfg.model), data, stage_train_config(cfg, 1), progress);
    store(ch.stage1, 1);
  }
  std::vector<TokenSequence> s2data;
  auto stage2_data = [&] {
    if (s2data.empty()) {
      s2data = stage2_dataset(corp.stage2, cfg.prompt, cfg.train, cfg.seed, map);
      const auto extra = stage2_dataset(corp.reference, cfg.prompt, cfg.train, cfg.seed + 1, map);
      s2data.insert(s2data.end(), extra.begin(), extra.end());
    }
    return std::span<const TokenSequence>(s2data);
  };
  if (auto c = cached(2)) {
    ch.stage2 = *c;
  } else {
    ch.stage2 = train_stage(ch.stage1, stage2_data(), stage_train_config(cfg, 2), progress);
    store(ch.stage2, 2);
  }
  if (auto c = cached(3)) {
    ch.stage3 = *c;
  } else {
    const DistillSpec spec = distill_spec(corp.stage2, cfg.distill, cfg.seed);
    const auto grid = spec.grid;
    ch.distill = run_distillation(ch.stage2, corp.stage2, spec, cfg.distill.thresholds,
                                  uniform_targets(grid, cfg.distill.target_per_cell), map);
    if (log) log(ch.distill->audit.table());
    const auto data = stage3_dataset(*ch.distill, cfg.train.stage3_mixin > 0 ? stage2_data() : std::span<const TokenSequence>{},
                                     cfg.train.stage3_mixin, cfg.seed);
    ch.stage3 = train_stage(ch.stage2, data, stage_train_config(cfg, 3), progress);
    store(ch.stage3, 3);
  }
  return ch;
}

}  // namespace audiobook
