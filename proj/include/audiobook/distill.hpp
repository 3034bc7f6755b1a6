// SPDX-License-Identifier: Apache-2.0
//
// Self-distillation: synthesize intensity-varied candidates with a trained
// model, filter them by PER / speaker similarity / pitch, then rebalance the
// (emotion, intensity) histogram.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "audiobook/casting.hpp"
#include "audiobook/checkpoint.hpp"
#include "audiobook/corpus.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/script.hpp"
#include "audiobook/sequence.hpp"
#include "audiobook/train.hpp"

namespace audiobook {

struct Cell {
  Emotion emotion = Emotion::neutral;
  Intensity intensity = Intensity::low;
  auto operator<=>(const Cell&) const = default;
};

inline std::string to_string(const Cell& c) {
  return std::string(to_string(c.emotion)) + "/" + std::string(to_string(c.intensity));
}

inline std::vector<Cell> make_grid(std::span<const Emotion> emotions, std::span<const Intensity> intensities) {
  std::vector<Cell> g;
  for (Emotion e : emotions)
    for (Intensity i : intensities) g.push_back({e, i});
  return g;
}

struct DistillSpec {
  std::vector<int> source_utterances;
  std::vector<Cell> grid;
  int samples_per_cell = 1;
  std::uint64_t seed = 1;
  Sampling sampling{};  // greedy by default; a seeded top-k makes repeated samples differ
  int max_len = 64;

  void validate() const {
    if (grid.empty()) throw ValidationError("distillation grid is empty");
    if (source_utterances.empty()) throw ValidationError("distillation has no source utterances");
    if (samples_per_cell < 1) throw ValidationError("samples per cell must be >= 1");
  }
};

struct FilterThresholds {
  double per_max = 0.05;
  double ss_min = 0.8;
  double pitch_band = 2.0;  // multiples of sigma around the (speaker, emotion) mean

  void validate() const {
    if (!(per_max >= 0.0 && per_max <= 1.0)) throw ValidationError("per_max must lie in [0,1]");
    if (!(ss_min >= 0.0 && ss_min <= 1.0)) throw ValidationError("ss_min must lie in [0,1]");
    if (!(pitch_band > 0.0)) throw ValidationError("pitch_band must be > 0");
  }
};

enum class RejectReason : std::uint8_t { none, per, ss, pitch };

inline std::string_view to_string(RejectReason r) {
  constexpr std::array<std::string_view, 4> n{"none", "PER", "SS", "pitch"};
  return n[static_cast<std::size_t>(r)];
}

struct DistilledSample {
  int sample_id = 0;
  int parent_id = 0;  // kept sample this one descends from (itself for originals)
  int source_utterance = 0;
  int speaker_id = 0;
  InstructionAttributes attrs;
  SpeechTokens speech;
  double per = 1.0;
  double ss = 0.0;
  double pitch = std::numeric_limits<double>::quiet_NaN();
  bool kept = false;
  RejectReason reason = RejectReason::none;
  std::uint64_t seed = 0;

  Cell cell() const { return {attrs.primary(), attrs.intensity}; }
};

/// Speaker whose rendering explains the tokens best (lowest PER, smaller id on ties).
inline int detect_speaker(std::span<const TokenId> speech, std::span<const TokenId> text,
                          const InstructionAttributes& attrs, bool laugh, const Corpus& corpus) {
  int best = corpus.personas.front().speaker_id;
  double best_per = 2.0;
  for (const auto& p : corpus.personas) {
    const double per = proxy_per(speech, text, p.speaker_id, attrs, laugh, corpus.world);
    if (per < best_per) {
      best_per = per;
      best = p.speaker_id;
    }
  }
  return best;
}

/// Corpus lookups needed to place an utterance in its chapter.
struct CorpusView {
  const Corpus& corpus;
  UtteranceIndex index;
  std::map<int, ContextWindow> windows;
  std::map<int, bool> laugh;

  explicit CorpusView(const Corpus& c, int k_pre = 1, int k_post = 1) : corpus(c), index(c.index()) {
    for (const auto& ch : c.chapters) {
      for (const auto& w : build_context_windows(ch, k_pre, k_post)) windows[w.utterance_id] = w;
      for (std::size_t i = 0; i < ch.utterances.size(); ++i)
        laugh[ch.utterances[i].id] = pre_context_has_laugh(ch, i, c.world);
    }
  }
  const Utterance& at(int id) const { return detail::resolve(index, id, "source"); }
  const ContextWindow& window(int id) const {
    auto it = windows.find(id);
    if (it == windows.end()) throw ValidationError("no context window for utterance " + std::to_string(id));
    return it->second;
  }
};

/// For every (utterance, cell, k): generate with instructions (and context) and
/// populate the oracle metrics.
inline std::vector<DistilledSample> synthesize_candidates(const SpeechGenerator& gen, const CorpusView& view,
                                                          const DistillSpec& spec, const TokenIdMap& map) {
  spec.validate();
  std::vector<DistilledSample> out;
  int next_id = 0;
  for (int uid : spec.source_utterances) {
    const Utterance& u = view.at(uid);
    const bool laugh = view.laugh.at(uid);
    for (const Cell& cell : spec.grid)
      for (int k = 0; k < spec.samples_per_cell; ++k) {
        DistilledSample s;
        s.sample_id = s.parent_id = next_id++;
        s.source_utterance = uid;
        s.speaker_id = u.speaker_id;
        s.attrs = u.attributes;
        s.attrs.emotions = {{cell.emotion, 1.0}};
        s.attrs.intensity = cell.intensity;
        s.seed = derive_seed(spec.seed, {static_cast<std::uint64_t>(uid), static_cast<std::uint64_t>(cell.emotion),
                                         static_cast<std::uint64_t>(cell.intensity), static_cast<std::uint64_t>(k)});
        const InferenceInputs in = inference_inputs(u, view.window(uid), u.embedding, s.attrs, view.index);
        Sampling sm = spec.sampling;
        sm.seed = s.seed;
        s.speech = gen(build_inference_prefix(InferenceMode::ctx_inst, in, map), sm, spec.max_len);
        s.per = proxy_per(s.speech, u.text, u.speaker_id, s.attrs, laugh, view.corpus.world);
        const int heard = detect_speaker(s.speech, u.text, s.attrs, laugh, view.corpus);
        s.ss = similarity(SpeakerEmbedding{speaker_base_vector(heard, view.corpus.world), heard}, u.embedding);
        if (!s.speech.empty()) s.pitch = proxy_pitch(s.speech);
        out.push_back(std::move(s));
      }
  }
  return out;
}

struct PitchStats {
  double mean = 0.0;
  double sigma = 1.0;
  bool analytic = false;
};

/// Per (speaker, emotion) pitch statistics over the whole candidate pool, so
/// they do not move when the other thresholds change. Cells with fewer than 5
/// measured samples fall back to the oracle: the mean and spread of clean
/// renderings of the same texts under the same attributes.
inline std::map<std::pair<int, Emotion>, PitchStats> pitch_statistics(std::span<const DistilledSample> pool,
                                                                      const CorpusView* view = nullptr) {
  std::map<std::pair<int, Emotion>, std::vector<const DistilledSample*>> groups;
  for (const auto& s : pool) groups[{s.speaker_id, s.attrs.primary()}].push_back(&s);
  std::map<std::pair<int, Emotion>, PitchStats> out;
  for (const auto& [key, members] : groups) {
    std::vector<double> xs;
    for (const auto* s : members)
      if (!std::isnan(s->pitch)) xs.push_back(s->pitch);
    PitchStats st;
    if (xs.size() < 5) {
      st.analytic = true;
      xs.clear();
      if (view)
        for (const auto* s : members) {
          const Utterance& u = view->at(s->source_utterance);
          const auto clean = oracle_speech_tokens(u.text, u.speaker_id, s->attrs, view->laugh.at(u.id), view->corpus.world);
          if (!clean.empty()) xs.push_back(proxy_pitch(clean));
        }
    }
    if (xs.empty()) {
      st.mean = 0.0;
      st.sigma = std::numeric_limits<double>::infinity();
    } else {
      st.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
      double v = 0.0;
      for (double x : xs) v += (x - st.mean) * (x - st.mean);
      st.sigma = std::sqrt(v / static_cast<double>(xs.size()));
      // A degenerate spread would reject everything off the mean.
      if (st.sigma < 1.0) st.sigma = 1.0;
    }
    out[key] = st;
  }
  return out;
}

struct FilterResult {
  std::vector<DistilledSample> kept;
  std::vector<DistilledSample> rejected;
};

/// kept iff per <= per_max and ss >= ss_min and |pitch - mean| <= band * sigma.
/// Rejections carry the first failed check in that order; input order is kept.
inline FilterResult filter_candidates(std::span<const DistilledSample> samples, const FilterThresholds& th,
                                      const std::map<std::pair<int, Emotion>, PitchStats>& stats) {
  th.validate();
  FilterResult r;
  for (DistilledSample s : samples) {
    s.reason = RejectReason::none;
    if (!(s.per <= th.per_max)) {
      s.reason = RejectReason::per;
    } else if (!(s.ss >= th.ss_min)) {
      s.reason = RejectReason::ss;
    } else {
      auto it = stats.find({s.speaker_id, s.attrs.primary()});
      const bool in_band = it != stats.end() && !std::isnan(s.pitch) &&
                           std::abs(s.pitch - it->second.mean) <= th.pitch_band * it->second.sigma;
      if (!in_band) s.reason = RejectReason::pitch;
    }
    s.kept = s.reason == RejectReason::none;
    (s.kept ? r.kept : r.rejected).push_back(std::move(s));
  }
  return r;
}

inline FilterResult filter_candidates(std::span<const DistilledSample> samples, const FilterThresholds& th) {
  return filter_candidates(samples, th, pitch_statistics(samples));
}

using CellTargets = std::vector<std::pair<Cell, int>>;

inline CellTargets uniform_targets(std::span<const Cell> grid, int per_cell) {
  CellTargets t;
  for (const Cell& c : grid) t.push_back({c, per_cell});
  return t;
}

/// Brings every target cell to its count: duplicates (fresh ids, same parent)
/// when short, seeded subsampling when over. Cells without a target are dropped.
inline std::vector<DistilledSample> balance_intensity(std::span<const DistilledSample> kept, const CellTargets& target,
                                                      std::uint64_t seed) {
  int next_id = 0;
  for (const auto& s : kept) next_id = std::max(next_id, s.sample_id + 1);
  std::vector<DistilledSample> out;
  for (const auto& [cell, want] : target) {
    if (want < 0) throw ValidationError("negative target for cell " + to_string(cell));
    if (want == 0) continue;
    std::vector<const DistilledSample*> have;
    for (const auto& s : kept)
      if (s.cell() == cell) have.push_back(&s);
    if (have.empty()) throw ValidationError("no kept samples for requested cell " + to_string(cell));
    const std::size_t n = have.size(), w = static_cast<std::size_t>(want);
    if (n >= w) {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng(derive_seed(seed, {tag("balance"), static_cast<std::uint64_t>(cell.emotion),
                                 static_cast<std::uint64_t>(cell.intensity)}));
      for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
      idx.resize(w);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) out.push_back(*have[i]);
    } else {
      for (const auto* s : have) out.push_back(*s);
      for (std::size_t i = 0; i < w - n; ++i) {
        DistilledSample dup = *have[i % n];
        dup.sample_id = next_id++;
        out.push_back(std::move(dup));
      }
    }
  }
  return out;
}

struct DistillAudit {
  std::map<Cell, int> candidates, kept, balanced;
  std::map<RejectReason, int> reasons;
  std::size_t total_candidates = 0, total_kept = 0, total_balanced = 0;

  std::string table() const {
    std::string s = fmt::format("{:<12} {:>10} {:>6} {:>8}\n", "cell", "candidates", "kept", "balanced");
    for (const auto& [c, n] : candidates)
      s += fmt::format("{:<12} {:>10} {:>6} {:>8}\n", to_string(c), n, kept.contains(c) ? kept.at(c) : 0,
                       balanced.contains(c) ? balanced.at(c) : 0);
    s += fmt::format("{:<12} {:>10} {:>6} {:>8}\n", "total", total_candidates, total_kept, total_balanced);
    s += "rejections:";
    for (RejectReason r : {RejectReason::per, RejectReason::ss, RejectReason::pitch})
      s += fmt::format(" {}={}", to_string(r), reasons.contains(r) ? reasons.at(r) : 0);
    return s + "\n";
  }

  std::string records() const {
    std::string s;
    for (const auto& [c, n] : candidates)
      s += fmt::format(R"({{"record":"cell","emotion":"{}","intensity":"{}","candidates":{},"kept":{},"balanced":{}}})"
                       "\n",
                       to_string(c.emotion), to_string(c.intensity), n, kept.contains(c) ? kept.at(c) : 0,
                       balanced.contains(c) ? balanced.at(c) : 0);
    for (RejectReason r : {RejectReason::per, RejectReason::ss, RejectReason::pitch})
      s += fmt::format(R"({{"record":"rejections","reason":"{}","count":{}}})"
                       "\n",
                       to_string(r), reasons.contains(r) ? reasons.at(r) : 0);
    return s;
  }
};

inline DistillAudit audit(std::span<const DistilledSample> candidates, const FilterResult& f,
                          std::span<const DistilledSample> balanced) {
  DistillAudit a;
  for (const auto& s : candidates) ++a.candidates[s.cell()];
  for (const auto& s : f.kept) ++a.kept[s.cell()];
  for (const auto& s : f.rejected) ++a.reasons[s.reason];
  for (const auto& s : balanced) ++a.balanced[s.cell()];
  a.total_candidates = candidates.size();
  a.total_kept = f.kept.size();
  a.total_balanced = balanced.size();
  return a;
}

/// Training sequence for a distilled sample: instruction and context blocks with
/// the sample's attributes as supervision and its generated tokens as target.
inline TokenSequence distilled_sequence(const DistilledSample& s, const CorpusView& view, const TokenIdMap& map) {
  Utterance u = view.at(s.source_utterance);
  u.attributes = s.attrs;
  u.speech = s.speech;
  SequenceFlags flags;
  flags.use_ctx = flags.use_inst = true;
  return build_training_sequence(u, view.window(u.id), {u.id, u.id, 1.0, false}, s.attrs, map, flags, view.index);
}

struct DistillResult {
  std::vector<DistilledSample> candidates;
  FilterResult filtered;
  std::vector<DistilledSample> balanced;
  std::vector<TokenSequence> dataset;
  DistillAudit audit;
};

inline DistillResult run_distillation(const SpeechGenerator& gen, const Corpus& corpus, const DistillSpec& spec,
                                      const FilterThresholds& th, const CellTargets& target, const TokenIdMap& map) {
  spec.validate();
  th.validate();
  const CorpusView view(corpus);
  DistillResult r;
  r.candidates = synthesize_candidates(gen, view, spec, map);
  r.filtered = filter_candidates(r.candidates, th, pitch_statistics(r.candidates, &view));
  r.balanced = balance_intensity(r.filtered.kept, target, spec.seed);
  for (const auto& s : r.balanced) r.dataset.push_back(distilled_sequence(s, view, map));
  r.audit = audit(r.candidates, r.filtered, r.balanced);
  return r;
}

inline DistillResult run_distillation(const ModelCheckpoint& c, const Corpus& corpus, const DistillSpec& spec,
                                      const FilterThresholds& th, const CellTargets& target, const TokenIdMap& map) {
  if (c.stage < 2) throw ValidationError("distillation needs a checkpoint trained through stage 2");
  return run_distillation(model_generator(c, map), corpus, spec, th, target, map);
}

/// Writes dataset.jsonl, audit.txt and audit.jsonl into `dir`.
inline void write_distillation(const DistillResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(r.dataset, dir / "dataset.jsonl");
  std::ofstream t(dir / "audit.txt");
  std::ofstream j(dir / "audit.jsonl");
  if (!t || !j) throw IoError("cannot write audit report in " + dir.string());
  t << r.audit.table();
  j << r.audit.records();
}

}  // namespace audiobook
