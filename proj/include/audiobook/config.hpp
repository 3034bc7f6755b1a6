// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, read from JSON. Every key is optional; unknown keys
// are rejected so typos do not silently fall back to defaults.
//
// {
//   "seed": 1,
//   "world":   {"seed", "text_vocab", "speech_vocab", "embedding_dim", "ratio",
//               "rule": [a,b,c,d], "laugh_marker", "emotion_index", "intensity_index"},
//   "corpus" / "stage2_corpus" / "heldout_corpus":
//              {"chapters", "utterances_per_chapter", "speakers", "dialogue_fraction",
//               "laugh_fraction", "high_intensity_fraction", "mixed_fraction",
//               "min_words", "max_words", "jitter", "first_chapter_id", "first_utterance_id",
//               "neutral_dialogue_fraction"},
//   "prompt":  {"mode": "decoupled"|"non_decoupled", "threshold", "same_chapter_only", "pick"},
//   "model":   {"d_model", "n_layers", "n_heads", "ff_mult", "max_len", "max_position", "seed"},
//   "train":   {"base_lr", "batch_size", "stage1_steps", "stage2_steps", "stage3_steps",
//               "warmup", "heldout_fraction", "stage3_mixin", "dialogue_inst_only",
//               "narration_ctx_only", "stage2_plain"},
//   "distill": {"sources", "samples_per_cell", "per_max", "ss_min", "pitch_band", "target_per_cell"},
//   "eval":    {"nar", "dia", "chap"},
//   "pipeline":{"chapters", "lines_per_chapter", "seed"}
// }
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "audiobook/casting.hpp"
#include "audiobook/distill.hpp"
#include "audiobook/error.hpp"
#include "audiobook/eval.hpp"
#include "audiobook/model.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/pipeline.hpp"
#include "audiobook/rng.hpp"
#include "audiobook/types.hpp"

namespace audiobook {

struct TrainPlan {
  double base_lr = 3e-3;
  int batch_size = 16;
  int stage1_steps = 2000;
  int stage2_steps = 4000;
  int stage3_steps = 300;
  int warmup = 100;
  double heldout_fraction = 0.05;
  double stage3_mixin = 0.0;        // fraction of stage-2 sequences mixed into stage 3
  double dialogue_inst_only = 0.15;  // stage 2: dialogue without the context block
  double narration_ctx_only = 0.5;   // stage 2: narration without the instruction block
  double stage2_plain = 0.1;         // stage 2: share of sequences with neither block
};

struct DistillPlan {
  int sources = 300;
  int samples_per_cell = 1;
  FilterThresholds thresholds{};
  int target_per_cell = 150;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  WorldConfig world{};
  CorpusShape corpus{40, 50, 5, 0.4, 0.2, 0.15, 0.0, 3, 8, 0.1, 0, 0, 0.1};
  CorpusShape stage2_corpus{400, 50, 5, 0.4, 0.2, 0.15, 0.0, 3, 8, 0.1, 1000, 100000, 0.1};
  CorpusShape heldout_corpus{10, 50, 5, 0.4, 0.2, 0.5, 0.0, 3, 8, 0.1, 9000, 900000, 0.1};
  PromptPolicy prompt = PromptPolicy::decoupled(0.8);
  ModelConfig model{};
  TrainPlan train{};
  DistillPlan distill{};
  TestSizes eval{40, 120, 2};
  MiniNovelSpec novel{2, 30, 0.4, 0.2, 0.15, 3, 8, true, 7};

  void validate() const {
    world.validate();
    model.validate();
    prompt.validate();
    distill.thresholds.validate();
    if (model.speaker_dim != world.embedding_dim) throw ValidationError("model.speaker_dim must equal world.embedding_dim");
    if (model.vocab != TokenIdMap(world).vocab_size())
      throw ValidationError("model vocab must equal the token map size");
    for (double f : {train.stage3_mixin, train.dialogue_inst_only, train.narration_ctx_only, train.stage2_plain})
      if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("train fractions must lie in [0,1]");
    if (train.stage1_steps < 1 || train.stage2_steps < 1 || train.stage3_steps < 1)
      throw ValidationError("stage step counts must be >= 1");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, _] : j.items())
    if (!ok.contains(k)) throw ValidationError("config: unknown key '" + where + "." + k + "'");
}

template <class T>
void opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline CorpusShape shape_from(const nlohmann::json& j, CorpusShape s, const std::string& where) {
  check_keys(j,
             {"chapters", "utterances_per_chapter", "speakers", "dialogue_fraction", "laugh_fraction",
              "high_intensity_fraction", "mixed_fraction", "min_words", "max_words", "jitter", "first_chapter_id",
              "first_utterance_id", "neutral_dialogue_fraction"},
             where);
  opt(j, "chapters", s.chapters);
  opt(j, "utterances_per_chapter", s.utterances_per_chapter);
  opt(j, "speakers", s.speakers);
  opt(j, "dialogue_fraction", s.dialogue_fraction);
  opt(j, "laugh_fraction", s.laugh_fraction);
  opt(j, "high_intensity_fraction", s.high_intensity_fraction);
  opt(j, "mixed_fraction", s.mixed_fraction);
  opt(j, "min_words", s.min_words);
  opt(j, "max_words", s.max_words);
  opt(j, "jitter", s.jitter);
  opt(j, "first_chapter_id", s.first_chapter_id);
  opt(j, "first_utterance_id", s.first_utterance_id);
  opt(j, "neutral_dialogue_fraction", s.neutral_dialogue_fraction);
  return s;
}

inline nlohmann::json shape_json(const CorpusShape& s) {
  return {{"chapters", s.chapters},
          {"utterances_per_chapter", s.utterances_per_chapter},
          {"speakers", s.speakers},
          {"dialogue_fraction", s.dialogue_fraction},
          {"laugh_fraction", s.laugh_fraction},
          {"high_intensity_fraction", s.high_intensity_fraction},
          {"mixed_fraction", s.mixed_fraction},
          {"min_words", s.min_words},
          {"max_words", s.max_words},
          {"jitter", s.jitter},
          {"first_chapter_id", s.first_chapter_id},
          {"first_utterance_id", s.first_utterance_id},
          {"neutral_dialogue_fraction", s.neutral_dialogue_fraction}};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::opt;
  ExperimentConfig c;
  check_keys(j,
             {"seed", "world", "corpus", "stage2_corpus", "heldout_corpus", "prompt", "model", "train", "distill",
              "eval", "pipeline"},
             "");
  try {
    opt(j, "seed", c.seed);
    if (j.contains("world")) {
      const auto& w = j["world"];
      check_keys(w,
                 {"seed", "text_vocab", "speech_vocab", "embedding_dim", "ratio", "rule", "laugh_marker",
                  "emotion_index", "intensity_index"},
                 "world");
      opt(w, "seed", c.world.seed);
      opt(w, "text_vocab", c.world.text_vocab);
      opt(w, "speech_vocab", c.world.speech_vocab);
      opt(w, "embedding_dim", c.world.embedding_dim);
      opt(w, "ratio", c.world.ratio);
      opt(w, "laugh_marker", c.world.laugh_marker);
      opt(w, "emotion_index", c.world.emotion_index);
      opt(w, "intensity_index", c.world.intensity_index);
      if (w.contains("rule")) {
        const auto r = w["rule"].get<std::array<int, 4>>();
        c.world.a = r[0];
        c.world.b = r[1];
        c.world.c = r[2];
        c.world.d = r[3];
      }
    }
    if (j.contains("corpus")) c.corpus = detail::shape_from(j["corpus"], c.corpus, "corpus");
    if (j.contains("stage2_corpus")) c.stage2_corpus = detail::shape_from(j["stage2_corpus"], c.stage2_corpus, "stage2_corpus");
    if (j.contains("heldout_corpus"))
      c.heldout_corpus = detail::shape_from(j["heldout_corpus"], c.heldout_corpus, "heldout_corpus");
    if (j.contains("prompt")) {
      const auto& p = j["prompt"];
      check_keys(p, {"mode", "threshold", "same_chapter_only", "include_emotional_bank", "pick"}, "prompt");
      if (p.contains("mode")) {
        const auto m = p["mode"].get<std::string>();
        if (m == "decoupled") c.prompt.mode = PromptMode::decoupled;
        else if (m == "non_decoupled") c.prompt.mode = PromptMode::non_decoupled;
        else throw ValidationError("config: prompt.mode must be decoupled or non_decoupled");
      }
      opt(p, "threshold", c.prompt.similarity_threshold);
      opt(p, "same_chapter_only", c.prompt.same_chapter_only);
      opt(p, "include_emotional_bank", c.prompt.include_emotional_bank);
      if (p.contains("pick")) {
        const auto k = p["pick"].get<std::string>();
        if (k == "most_diverse") c.prompt.pick = PromptPick::most_diverse;
        else if (k == "most_similar") c.prompt.pick = PromptPick::most_similar;
        else throw ValidationError("config: prompt.pick must be most_diverse or most_similar");
      }
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m, {"d_model", "n_layers", "n_heads", "ff_mult", "max_len", "max_position", "seed"}, "model");
      opt(m, "d_model", c.model.d_model);
      opt(m, "n_layers", c.model.n_layers);
      opt(m, "n_heads", c.model.n_heads);
      opt(m, "ff_mult", c.model.ff_mult);
      opt(m, "max_len", c.model.max_len);
      opt(m, "max_position", c.model.max_position);
      opt(m, "seed", c.model.seed);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      check_keys(t,
                 {"base_lr", "batch_size", "stage1_steps", "stage2_steps", "stage3_steps", "warmup", "heldout_fraction",
                  "stage3_mixin", "dialogue_inst_only", "narration_ctx_only", "stage2_plain"},
                 "train");
      opt(t, "base_lr", c.train.base_lr);
      opt(t, "batch_size", c.train.batch_size);
      opt(t, "stage1_steps", c.train.stage1_steps);
      opt(t, "stage2_steps", c.train.stage2_steps);
      opt(t, "stage3_steps", c.train.stage3_steps);
      opt(t, "warmup", c.train.warmup);
      opt(t, "heldout_fraction", c.train.heldout_fraction);
      opt(t, "stage3_mixin", c.train.stage3_mixin);
      opt(t, "dialogue_inst_only", c.train.dialogue_inst_only);
      opt(t, "narration_ctx_only", c.train.narration_ctx_only);
      opt(t, "stage2_plain", c.train.stage2_plain);
    }
    if (j.contains("distill")) {
      const auto& d = j["distill"];
      check_keys(d, {"sources", "samples_per_cell", "per_max", "ss_min", "pitch_band", "target_per_cell"}, "distill");
      opt(d, "sources", c.distill.sources);
      opt(d, "samples_per_cell", c.distill.samples_per_cell);
      opt(d, "per_max", c.distill.thresholds.per_max);
      opt(d, "ss_min", c.distill.thresholds.ss_min);
      opt(d, "pitch_band", c.distill.thresholds.pitch_band);
      opt(d, "target_per_cell", c.distill.target_per_cell);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      check_keys(e, {"nar", "dia", "chap"}, "eval");
      opt(e, "nar", c.eval.nar);
      opt(e, "dia", c.eval.dia);
      opt(e, "chap", c.eval.chap);
    }
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      check_keys(p, {"chapters", "lines_per_chapter", "seed"}, "pipeline");
      opt(p, "chapters", c.novel.chapters);
      opt(p, "lines_per_chapter", c.novel.lines_per_chapter);
      opt(p, "seed", c.novel.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.model.speaker_dim = c.world.embedding_dim;
  c.model.vocab = TokenIdMap(c.world).vocab_size();
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  const auto& w = c.world;
  return {
      {"seed", c.seed},
      {"world",
       {{"seed", w.seed},
        {"text_vocab", w.text_vocab},
        {"speech_vocab", w.speech_vocab},
        {"embedding_dim", w.embedding_dim},
        {"ratio", w.ratio},
        {"rule", {w.a, w.b, w.c, w.d}},
        {"laugh_marker", w.laugh_marker},
        {"emotion_index", w.emotion_index},
        {"intensity_index", w.intensity_index}}},
      {"corpus", detail::shape_json(c.corpus)},
      {"stage2_corpus", detail::shape_json(c.stage2_corpus)},
      {"heldout_corpus", detail::shape_json(c.heldout_corpus)},
      {"prompt",
       {{"mode", c.prompt.mode == PromptMode::decoupled ? "decoupled" : "non_decoupled"},
        {"threshold", c.prompt.similarity_threshold},
        {"same_chapter_only", c.prompt.same_chapter_only},
        {"include_emotional_bank", c.prompt.include_emotional_bank},
        {"pick", c.prompt.pick == PromptPick::most_diverse ? "most_diverse" : "most_similar"}}},
      {"model",
       {{"d_model", c.model.d_model},
        {"n_layers", c.model.n_layers},
        {"n_heads", c.model.n_heads},
        {"ff_mult", c.model.ff_mult},
        {"max_len", c.model.max_len},
        {"max_position", c.model.max_position},
        {"seed", c.model.seed}}},
      {"train",
       {{"base_lr", c.train.base_lr},
        {"batch_size", c.train.batch_size},
        {"stage1_steps", c.train.stage1_steps},
        {"stage2_steps", c.train.stage2_steps},
        {"stage3_steps", c.train.stage3_steps},
        {"warmup", c.train.warmup},
        {"heldout_fraction", c.train.heldout_fraction},
        {"stage3_mixin", c.train.stage3_mixin},
        {"dialogue_inst_only", c.train.dialogue_inst_only},
        {"narration_ctx_only", c.train.narration_ctx_only},
        {"stage2_plain", c.train.stage2_plain}}},
      {"distill",
       {{"sources", c.distill.sources},
        {"samples_per_cell", c.distill.samples_per_cell},
        {"per_max", c.distill.thresholds.per_max},
        {"ss_min", c.distill.thresholds.ss_min},
        {"pitch_band", c.distill.thresholds.pitch_band},
        {"target_per_cell", c.distill.target_per_cell}}},
      {"eval", {{"nar", c.eval.nar}, {"dia", c.eval.dia}, {"chap", c.eval.chap}}},
      {"pipeline", {{"chapters", c.novel.chapters}, {"lines_per_chapter", c.novel.lines_per_chapter}, {"seed", c.novel.seed}}},
  };
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  return config_from_json(j);
}

/// FNV-1a over the canonical JSON of the effective configuration.
inline std::uint64_t config_hash(const ExperimentConfig& c) { return tag(config_to_json(c).dump()); }

}  // namespace audiobook
