// SPDX-License-Identifier: Apache-2.0
//
// Test suites, objective metrics, ablations and report emission.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "audiobook/casting.hpp"
#include "audiobook/distill.hpp"
#include "audiobook/oracle.hpp"
#include "audiobook/sequence.hpp"
#include "audiobook/train.hpp"

namespace audiobook {

enum class SuiteName : std::uint8_t { NAR, DIA, CHAP };

inline std::string_view to_string(SuiteName s) {
  constexpr std::array<std::string_view, 3> n{"NAR", "DIA", "CHAP"};
  return n[static_cast<std::size_t>(s)];
}

inline SuiteName parse_suite(std::string_view s) {
  for (SuiteName n : {SuiteName::NAR, SuiteName::DIA, SuiteName::CHAP})
    if (to_string(n) == s) return n;
  throw ValidationError("unknown test suite '" + std::string(s) + "'");
}

/// NAR and DIA list utterance ids; CHAP lists chapter ids.
struct TestSuite {
  SuiteName name = SuiteName::NAR;
  std::vector<int> items;
  bool operator==(const TestSuite&) const = default;
};

struct TestSizes {
  int nar = 40;
  int dia = 60;
  int chap = 2;
};

struct TestSuites {
  TestSuite nar{SuiteName::NAR, {}}, dia{SuiteName::DIA, {}}, chap{SuiteName::CHAP, {}};
};

namespace detail {

inline std::vector<int> seeded_pick(std::vector<int> pool, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

/// Draws the suites from the held-out chapters only.
inline TestSuites build_testsets(const Corpus& corpus, std::span<const int> heldout_chapters, const TestSizes& sizes,
                                 std::uint64_t seed) {
  const std::set<int> held(heldout_chapters.begin(), heldout_chapters.end());
  std::vector<int> nar, dia, chaps;
  for (const auto& ch : corpus.chapters) {
    if (!held.contains(ch.id)) continue;
    chaps.push_back(ch.id);
    for (const auto& u : ch.utterances) (u.kind == UtteranceKind::narration ? nar : dia).push_back(u.id);
  }
  auto need = [](std::size_t have, int want, const char* what) {
    if (want < 0) throw ValidationError(std::string("negative size for ") + what);
    if (have < static_cast<std::size_t>(want))
      throw ValidationError(fmt::format("insufficient held-out data for {}: need {}, have {}", what, want, have));
  };
  need(nar.size(), sizes.nar, "NAR");
  need(dia.size(), sizes.dia, "DIA");
  need(chaps.size(), sizes.chap, "CHAP");
  TestSuites t;
  t.nar.items = detail::seeded_pick(nar, static_cast<std::size_t>(sizes.nar), derive_seed(seed, {tag("NAR")}));
  t.dia.items = detail::seeded_pick(dia, static_cast<std::size_t>(sizes.dia), derive_seed(seed, {tag("DIA")}));
  t.chap.items = detail::seeded_pick(chaps, static_cast<std::size_t>(sizes.chap), derive_seed(seed, {tag("CHAP")}));
  return t;
}

/// Generator that answers with the oracle rendering implied by the prefix:
/// speaker from the embedding hint, attributes from the instruction block
/// (neutral defaults without one), carry from the laugh marker in pre-context.
inline SpeechGenerator oracle_generator(const WorldConfig& world, const TokenIdMap& map) {
  return [world, map](const TokenSequence& prefix, const Sampling&, int max_len) {
    const SequenceParts p = parse_sequence(prefix.ids, map);
    if (!prefix.speaker.speaker_hint) throw ValidationError("oracle generator needs a speaker hint");
    const InstructionAttributes attrs =
        p.instruction ? parse_attribute_tokens(*p.instruction, map) : InstructionAttributes{};
    const bool laugh = p.context && std::find(p.context->pre.begin(), p.context->pre.end(), world.laugh_marker) !=
                                        p.context->pre.end();
    SpeechTokens s = oracle_speech_tokens(p.text, *prefix.speaker.speaker_hint, attrs, laugh, world);
    if (static_cast<int>(s.size()) > max_len) s.resize(static_cast<std::size_t>(max_len));
    return s;
  };
}

struct EvalOptions {
  PromptPolicy policy = PromptPolicy::decoupled(0.8);
  bool text_unrelated = false;  // resample instruction attributes independently of the item
  bool mixed = false;           // with text_unrelated: resample two-emotion mixes instead
  std::uint64_t seed = 1;
  int max_len = 64;
};

inline constexpr std::size_t kLabels = 4;  // neutral, angry, happy, sad

struct MetricsReport {
  std::string suite;
  std::string mode;
  std::string tag;  // free label, e.g. the checkpoint name
  bool text_unrelated = false;
  std::size_t items = 0;
  double per = 0.0;
  double ss = 0.0;
  double token_accuracy = 0.0;
  double carry_accuracy = 0.0;
  std::size_t carry_positions = 0;
  std::size_t classified = 0;
  double class_rate = 0.0;  // exact (label, intensity) recovery
  std::array<double, kLabels> f1{};
  // Per angry/happy/sad: share of renderings heard as (label, high) when
  // instructed high resp. low, over paired renderings of the same items.
  std::array<double, 3> rate_high{}, rate_low{}, delta_hl{};
  std::array<std::array<int, kLabels>, kLabels> confusion{};  // [true][predicted]

  bool operator==(const MetricsReport&) const = default;
};

inline std::array<double, kLabels> f1_scores(const std::array<std::array<int, kLabels>, kLabels>& cm) {
  std::array<double, kLabels> f{};
  for (std::size_t k = 0; k < kLabels; ++k) {
    int tp = cm[k][k], fp = 0, fn = 0;
    for (std::size_t j = 0; j < kLabels; ++j) {
      if (j == k) continue;
      fp += cm[j][k];
      fn += cm[k][j];
    }
    const int den = 2 * tp + fp + fn;
    f[k] = den == 0 ? 0.0 : 2.0 * tp / den;
  }
  return f;
}

inline InstructionAttributes resample_attributes(const Utterance& u, bool mixed, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {tag("text-unrelated"), static_cast<std::uint64_t>(u.id)}));
  InstructionAttributes a = u.attributes;
  const Emotion e = kNonNeutralEmotions[rng.below(3)];
  a.emotions = {{e, 1.0}};
  a.intensity = kIntensities[rng.below(2)];
  if (mixed) {
    Emotion e2 = kNonNeutralEmotions[rng.below(3)];
    while (e2 == e) e2 = kNonNeutralEmotions[rng.below(3)];
    const double w = kWeightBuckets[rng.below(3)];
    a.emotions = {{e, w}, {e2, 1.0 - w}};
  }
  return a;
}

/// Scores generation for a list of utterances. Instruction modes need attributes,
/// which only dialogue items carry meaningfully unless `allow_inst_on_narration`.
inline MetricsReport evaluate_items(const SpeechGenerator& gen, const CorpusView& view, std::span<const int> ids,
                                    InferenceMode mode, const EvalOptions& opt, const TokenIdMap& map) {
  MetricsReport r;
  r.mode = std::string(to_string(mode));
  r.text_unrelated = opt.text_unrelated;
  std::map<int, PromptAssignment> prompts;
  for (const auto& a : build_prompt_table(view.corpus, opt.policy)) prompts[a.target_utterance_id] = a;
  const WorldConfig& w = view.corpus.world;
  std::size_t tok_hit = 0, tok_n = 0, carry_hit = 0, hit = 0;
  std::array<std::size_t, 3> hi_n{}, hi_hit{}, lo_n{}, lo_hit{};
  double per = 0.0, ss = 0.0;
  for (int id : ids) {
    const Utterance& u = view.at(id);
    const bool laugh = view.laugh.at(id);
    InstructionAttributes attrs = opt.text_unrelated ? resample_attributes(u, opt.mixed, opt.seed) : u.attributes;
    const PromptAssignment& pa = prompts.at(id);
    const Utterance& prompt = view.at(pa.prompt_utterance_id);
    const InferenceInputs in = inference_inputs(u, view.window(id), prompt.embedding, attrs, view.index);
    Sampling greedy;
    const SpeechTokens out = gen(build_inference_prefix(mode, in, map), greedy, opt.max_len);
    const SpeechTokens ref = oracle_speech_tokens(u.text, u.speaker_id, attrs, laugh, w);
    per += proxy_per(out, u.text, u.speaker_id, attrs, laugh, w);
    ss += pa.similarity;
    std::size_t h = 0;
    for (std::size_t k = 0; k < ref.size(); ++k)
      if (k < out.size() && out[k] == ref[k]) ++h;
    tok_hit += h;
    tok_n += ref.size();
    if (laugh) {
      carry_hit += h;
      r.carry_positions += ref.size();
    }
    if (uses_instruction(mode) && !attrs.mixed() && u.kind == UtteranceKind::dialogue) {
      const EmotionClass pred = proxy_emotion_classify(out, u.text, u.speaker_id, laugh, w);
      const Emotion truth = attrs.primary();
      ++r.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred.label)];
      const bool ok = pred.label == truth && pred.intensity == attrs.intensity;
      ++r.classified;
      hit += ok ? 1 : 0;
      if (truth != Emotion::neutral) {
        // Paired intensity contrast: render the same item under the other
        // intensity too and count how often each rendering is heard as (label, high).
        InstructionAttributes twin = attrs;
        twin.intensity = attrs.intensity == Intensity::high ? Intensity::low : Intensity::high;
        const InferenceInputs tin = inference_inputs(u, view.window(id), prompt.embedding, twin, view.index);
        const SpeechTokens tout = gen(build_inference_prefix(mode, tin, map), greedy, opt.max_len);
        const EmotionClass tpred = proxy_emotion_classify(tout, u.text, u.speaker_id, laugh, w);
        auto heard_high = [&](const EmotionClass& c) { return c.label == truth && c.intensity == Intensity::high; };
        const bool own_high = attrs.intensity == Intensity::high;
        const std::size_t k = static_cast<std::size_t>(truth) - 1;
        ++hi_n[k];
        ++lo_n[k];
        hi_hit[k] += heard_high(own_high ? pred : tpred) ? 1 : 0;
        lo_hit[k] += heard_high(own_high ? tpred : pred) ? 1 : 0;
      }
    }
    ++r.items;
  }
  if (r.items == 0) throw ValidationError("evaluation on an empty item list");
  const double n = static_cast<double>(r.items);
  r.per = per / n;
  r.ss = ss / n;
  r.token_accuracy = tok_n ? static_cast<double>(tok_hit) / static_cast<double>(tok_n) : 0.0;
  r.carry_accuracy = r.carry_positions ? static_cast<double>(carry_hit) / static_cast<double>(r.carry_positions) : 0.0;
  r.class_rate = r.classified ? static_cast<double>(hit) / static_cast<double>(r.classified) : 0.0;
  r.f1 = f1_scores(r.confusion);
  for (std::size_t k = 0; k < 3; ++k) {
    r.rate_high[k] = hi_n[k] ? static_cast<double>(hi_hit[k]) / static_cast<double>(hi_n[k]) : 0.0;
    r.rate_low[k] = lo_n[k] ? static_cast<double>(lo_hit[k]) / static_cast<double>(lo_n[k]) : 0.0;
    r.delta_hl[k] = r.rate_high[k] - r.rate_low[k];
  }
  return r;
}

inline std::vector<int> suite_utterances(const TestSuite& suite, const Corpus& corpus) {
  if (suite.name != SuiteName::CHAP) return suite.items;
  std::vector<int> ids;
  for (int cid : suite.items) {
    auto it = std::find_if(corpus.chapters.begin(), corpus.chapters.end(), [&](const Chapter& c) { return c.id == cid; });
    if (it == corpus.chapters.end()) throw ValidationError("unknown chapter " + std::to_string(cid));
    for (const auto& u : it->utterances) ids.push_back(u.id);
  }
  return ids;
}

inline MetricsReport evaluate(const SpeechGenerator& gen, const CorpusView& view, const TestSuite& suite,
                              InferenceMode mode, const EvalOptions& opt, const TokenIdMap& map) {
  if (mode == InferenceMode::inst && suite.name != SuiteName::DIA)
    throw ValidationError(fmt::format("mode inst needs attributes; suite {} has none", to_string(suite.name)));
  if (opt.text_unrelated && suite.name != SuiteName::DIA)
    throw ValidationError("text-unrelated attributes apply to the DIA suite only");
  const auto ids = suite_utterances(suite, view.corpus);
  MetricsReport r = evaluate_items(gen, view, ids, mode, opt, map);
  r.suite = std::string(to_string(suite.name));
  return r;
}

inline MetricsReport evaluate(const ModelCheckpoint& c, const CorpusView& view, const TestSuite& suite,
                              InferenceMode mode, const EvalOptions& opt, const TokenIdMap& map) {
  return evaluate(model_generator(c, map), view, suite, mode, opt, map);
}

// ----------------------------------------------------------------------------
// Reports

namespace detail {

template <std::size_t N>
std::string real_array(const std::array<double, N>& a) {
  std::string s = "[";
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + fmt_real(a[i]);
  return s + "]";
}

}  // namespace detail

inline std::string metrics_record(const MetricsReport& r) {
  std::string cm = "[";
  for (std::size_t i = 0; i < kLabels; ++i) {
    cm += i ? ",[" : "[";
    for (std::size_t j = 0; j < kLabels; ++j) cm += (j ? "," : "") + std::to_string(r.confusion[i][j]);
    cm += "]";
  }
  cm += "]";
  return fmt::format(
      R"({{"record":"metrics","suite":{},"mode":{},"tag":{},"text_unrelated":{},"items":{},"per":{},"ss":{},"token_accuracy":{},"carry_accuracy":{},"carry_positions":{},"classified":{},"class_rate":{},"f1":{},"rate_high":{},"rate_low":{},"delta_hl":{},"confusion":{}}})",
      detail::quoted(r.suite), detail::quoted(r.mode), detail::quoted(r.tag), r.text_unrelated ? "true" : "false",
      r.items, detail::fmt_real(r.per), detail::fmt_real(r.ss), detail::fmt_real(r.token_accuracy),
      detail::fmt_real(r.carry_accuracy), r.carry_positions, r.classified, detail::fmt_real(r.class_rate),
      detail::real_array(r.f1), detail::real_array(r.rate_high), detail::real_array(r.rate_low),
      detail::real_array(r.delta_hl), cm);
}

inline MetricsReport parse_metrics_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  if (j.at("record") != "metrics") throw ParseError("not a metrics record");
  MetricsReport r;
  r.suite = j.at("suite");
  r.mode = j.at("mode");
  r.tag = j.at("tag");
  r.text_unrelated = j.at("text_unrelated");
  r.items = j.at("items");
  r.per = j.at("per");
  r.ss = j.at("ss");
  r.token_accuracy = j.at("token_accuracy");
  r.carry_accuracy = j.at("carry_accuracy");
  r.carry_positions = j.at("carry_positions");
  r.classified = j.at("classified");
  r.class_rate = j.at("class_rate");
  r.f1 = j.at("f1").get<std::array<double, kLabels>>();
  r.rate_high = j.at("rate_high").get<std::array<double, 3>>();
  r.rate_low = j.at("rate_low").get<std::array<double, 3>>();
  r.delta_hl = j.at("delta_hl").get<std::array<double, 3>>();
  r.confusion = j.at("confusion").get<std::array<std::array<int, kLabels>, kLabels>>();
  return r;
}

inline std::string metrics_table(std::span<const MetricsReport> reports) {
  std::string s = fmt::format("{:<10} {:<5} {:<9} {:>3} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "tag",
                              "suite", "mode", "tu", "items", "PER", "SS", "tokacc", "carry", "class", "dA", "dH", "dS");
  for (const auto& r : reports)
    s += fmt::format("{:<10} {:<5} {:<9} {:>3} {:>5} {:>7.4f} {:>7.4f} {:>7.4f} {:>7.4f} {:>7.4f} {:>7.4f} {:>7.4f} {:>7.4f}\n",
                     r.tag, r.suite, r.mode, r.text_unrelated ? "y" : "n", r.items, r.per, r.ss, r.token_accuracy,
                     r.carry_accuracy, r.class_rate, r.delta_hl[0], r.delta_hl[1], r.delta_hl[2]);
  return s;
}

/// Side-by-side table produced by an ablation.
struct ComparisonReport {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  std::string note;

  std::string table() const {
    std::string s = "# " + name + "\n";
    if (!note.empty()) s += "# " + note + "\n";
    s += fmt::format("{:<22}", "variant");
    for (const auto& c : columns) s += fmt::format(" {:>12}", c);
    s += "\n";
    for (const auto& [label, vals] : rows) {
      s += fmt::format("{:<22}", label);
      for (double v : vals) s += fmt::format(" {:>12.4f}", v);
      s += "\n";
    }
    return s;
  }

  std::string records() const {
    std::string s;
    for (const auto& [label, vals] : rows) {
      std::string cols = "{";
      for (std::size_t i = 0; i < vals.size(); ++i)
        cols += (i ? "," : "") + detail::quoted(columns[i]) + ":" + detail::fmt_real(vals[i]);
      s += fmt::format(R"({{"record":"ablation","name":{},"variant":{},"values":{}}}}})", detail::quoted(name),
                       detail::quoted(label), cols) +
           "\n";
    }
    return s;
  }

  double at(std::string_view row, std::string_view col) const {
    const auto c = std::find(columns.begin(), columns.end(), col);
    if (c == columns.end()) throw ValidationError("no column " + std::string(col));
    for (const auto& [label, vals] : rows)
      if (label == row) return vals[static_cast<std::size_t>(c - columns.begin())];
    throw ValidationError("no row " + std::string(row));
  }
};

/// Everything the ablations read. Checkpoints are optional; an ablation that needs
/// a missing one fails with a message naming it.
struct AblationInputs {
  const Corpus* reference = nullptr;  // prompt statistics
  const Corpus* heldout = nullptr;    // evaluation chapters
  TestSuites suites;
  std::optional<ModelCheckpoint> stage2, stage3;
  std::vector<double> sweep{0.5, 0.68, 0.8, 0.9};
  std::uint64_t seed = 1;
  TokenIdMap map{};
};

inline std::vector<int> laugh_context_items(const CorpusView& view) {
  std::vector<int> ids;
  for (const auto& ch : view.corpus.chapters)
    for (const auto& u : ch.utterances)
      if (view.laugh.at(u.id)) ids.push_back(u.id);
  return ids;
}

inline ComparisonReport run_ablation(std::string_view name, const AblationInputs& in) {
  auto need = [&](const std::optional<ModelCheckpoint>& c, const char* what) -> const ModelCheckpoint& {
    if (!c) throw ValidationError(fmt::format("ablation {} needs the {} checkpoint; train it first", name, what));
    return *c;
  };
  if (!in.reference || !in.heldout) throw ValidationError("ablation needs the reference and held-out corpora");
  ComparisonReport rep;
  rep.name = std::string(name);
  if (name == "threshold_sweep") {
    rep.columns = {"threshold", "mean_sim", "fallbacks", "assignments"};
    for (double t : in.sweep) {
      const auto table = build_prompt_table(*in.reference, PromptPolicy::decoupled(t));
      const auto fb = std::count_if(table.begin(), table.end(), [](const auto& a) { return a.fallback; });
      rep.rows.push_back({fmt::format("decoupled-{:g}", t),
                          {t, mean_assignment_similarity(table, true), static_cast<double>(fb),
                           static_cast<double>(table.size())}});
    }
    rep.note = "mean similarity excludes fallback assignments";
    return rep;
  }
  const CorpusView view(*in.heldout);
  if (name == "decoupling") {
    const ModelCheckpoint& c = need(in.stage2, "stage-2");
    rep.columns = {"SS", "PER", "self_prompts", "fallbacks"};
    for (PromptPolicy p : {PromptPolicy::non_decoupled(), PromptPolicy::decoupled(0.68), PromptPolicy::decoupled(0.8)}) {
      const auto table = build_prompt_table(*in.reference, p);
      const auto self = std::count_if(table.begin(), table.end(),
                                      [](const auto& a) { return a.prompt_utterance_id == a.target_utterance_id; });
      const auto fb = std::count_if(table.begin(), table.end(), [](const auto& a) { return a.fallback; });
      EvalOptions o;
      o.policy = p;
      o.seed = in.seed;
      const MetricsReport m = evaluate(c, view, in.suites.chap, InferenceMode::ctx, o, in.map);
      rep.rows.push_back({p.name(),
                          {mean_assignment_similarity(table, false), m.per, static_cast<double>(self),
                           static_cast<double>(fb)}});
    }
    rep.note = "SS over the reference prompt tables; PER on CHAP in ctx mode";
    return rep;
  }
  if (name == "context_text") {
    const ModelCheckpoint& c = need(in.stage2, "stage-2");
    rep.columns = {"carry_acc", "token_acc", "PER", "positions"};
    const auto ids = laugh_context_items(view);
    EvalOptions o;
    o.seed = in.seed;
    for (InferenceMode m : {InferenceMode::plain, InferenceMode::ctx}) {
      const MetricsReport r = evaluate_items(model_generator(c, in.map), view, ids, m, o, in.map);
      rep.rows.push_back({std::string(to_string(m)),
                          {r.carry_accuracy, r.token_accuracy, r.per, static_cast<double>(r.carry_positions)}});
    }
    rep.note = "held-out utterances whose pre-context holds the laugh marker; objective stand-in for listening tests";
    return rep;
  }
  if (name == "emotion_control") {
    const ModelCheckpoint& s2 = need(in.stage2, "stage-2");
    const ModelCheckpoint& s3 = need(in.stage3, "stage-3");
    rep.columns = {"class_rate", "F1_angry", "F1_happy", "F1_sad", "dHL_angry", "dHL_happy", "dHL_sad", "mixed_PER"};
    for (const auto* c : {&s2, &s3})
      for (bool unrelated : {false, true}) {
        EvalOptions o;
        o.seed = in.seed;
        o.text_unrelated = unrelated;
        const MetricsReport r = evaluate(*c, view, in.suites.dia, InferenceMode::ctx_inst, o, in.map);
        o.text_unrelated = true;
        o.mixed = true;
        const MetricsReport mx = evaluate(*c, view, in.suites.dia, InferenceMode::ctx_inst, o, in.map);
        rep.rows.push_back({fmt::format("stage{}-{}", c->stage, unrelated ? "unrelated" : "related"),
                            {r.class_rate, r.f1[1], r.f1[2], r.f1[3], r.delta_hl[0], r.delta_hl[1], r.delta_hl[2],
                             mx.per}});
      }
    rep.note = "F1 and intensity recovery from the oracle emotion classifier; stand-in for listening tests";
    return rep;
  }
  throw ValidationError("unknown ablation '" + std::string(name) + "'");
}

/// Writes `path` (plain-text tables) and `path` + ".jsonl" (records). The header
/// carries the config hash and seed.
inline void emit_report(std::span<const MetricsReport> metrics, std::span<const ComparisonReport> ablations,
                        const std::filesystem::path& path, std::uint64_t config_hash, std::uint64_t seed) {
  if (metrics.empty() && ablations.empty()) throw ValidationError("nothing to report");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream t(path), j(path.string() + ".jsonl");
  if (!t || !j) throw IoError("cannot write report " + path.string());
  t << fmt::format("# config {:016x} seed {}\n", config_hash, seed);
  j << fmt::format(R"({{"record":"header","config_hash":"{:016x}","seed":{}}})", config_hash, seed) << "\n";
  if (!metrics.empty()) t << metrics_table(metrics);
  for (const auto& m : metrics) j << metrics_record(m) << "\n";
  for (const auto& a : ablations) {
    t << "\n" << a.table();
    j << a.records();
  }
  if (!t || !j) throw IoError("report write failed");
}

inline std::vector<MetricsReport> read_metrics_records(const std::filesystem::path& jsonl) {
  std::ifstream is(jsonl);
  if (!is) throw IoError("cannot open " + jsonl.string());
  std::vector<MetricsReport> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("record") == "metrics") out.push_back(parse_metrics_record(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

}  // namespace audiobook
