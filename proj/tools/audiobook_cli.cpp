// SPDX-License-Identifier: Apache-2.0
//
// audiobook: command-line front end. Exit codes: 0 ok, 1 usage, 2 invalid input,
// 3 runtime failure (I/O, missing checkpoint, ...).
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "audiobook/config.hpp"
#include "audiobook/pipeline.hpp"
#include "audiobook/reference.hpp"

using namespace audiobook;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";

  ExperimentConfig load() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_config(config);
    if (seed) c.seed = *seed;
    c.validate();
    return c;
  }
  fs::path out(const std::string& name) const {
    fs::create_directories(out_dir);
    return fs::path(out_dir) / name;
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const Corpus& pick_corpus(const ReferenceCorpora& rc, const std::string& which) {
  if (which == "reference") return rc.reference;
  if (which == "stage2") return rc.stage2;
  if (which == "heldout") return rc.heldout;
  throw UsageError("corpus must be reference, stage2 or heldout");
}

Corpus corpus_arg(const std::string& file, const ExperimentConfig& cfg) {
  return file.empty() ? make_corpus(cfg.corpus, cfg.world) : load_corpus(file);
}

std::string attrs_text(const InstructionAttributes& a) {
  std::string emo;
  for (const auto& e : a.emotions) emo += fmt::format("{}{}:{:g}", emo.empty() ? "" : "+", to_string(e.label), e.weight);
  return fmt::format("emotion {} intensity {} volume {} speed {}", emo, to_string(a.intensity), to_string(a.volume),
                     to_string(a.speed));
}

std::string ids_text(std::span<const TokenId> ids) {
  std::string s;
  for (TokenId t : ids) s += fmt::format("{}{}", s.empty() ? "" : " ", t);
  return s;
}

// Stage checkpoints of the reference chain: from the cache, or trained into it.
ReferenceChain chain_for(const ExperimentConfig& cfg, const ReferenceCorpora& rc, const fs::path& cache, bool no_train) {
  if (no_train)
    for (int s = 1; s <= 3; ++s)
      if (!fs::exists(stage_checkpoint_path(cfg, cache, s)))
        throw IoError(fmt::format("no cached stage-{} checkpoint under {} (run `audiobook train` first)", s,
                                  cache.string()));
  return reference_chain(cfg, rc, cache, [](const std::string& s) { std::cerr << s << "\n"; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware, instruction-following audiobook synthesis on a synthetic speech world"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "experiment config JSON (defaults when omitted)");
  auto* seed_opt = app.add_option("--seed", seed_value, "override the experiment seed");
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();

  // extract
  auto* extract = app.add_subcommand("extract", "split a fiction text into an attributed script");
  std::string ex_input, ex_quotes, ex_pattern = RawDocument{}.chapter_delimiter_pattern;
  extract->add_option("input", ex_input, "UTF-8 text file")->required();
  extract->add_option("--quotes", ex_quotes, "quote pairs, e.g. '\"\" \xE2\x80\x9C\xE2\x80\x9D'");
  extract->add_option("--chapter-pattern", ex_pattern, "chapter delimiter regex");

  // make-world
  auto* world = app.add_subcommand("make-world", "generate a synthetic corpus");
  std::string world_which = "reference";
  world->add_option("--corpus", world_which, "reference | stage2 | heldout")->capture_default_str();

  // cast
  auto* cast = app.add_subcommand("cast", "assign voice prompts to every utterance");
  std::string cast_corpus, cast_mode;
  double cast_threshold = -1.0;
  cast->add_option("--corpus", cast_corpus, "corpus JSONL (reference corpus when omitted)");
  cast->add_option("--mode", cast_mode, "decoupled | non_decoupled");
  cast->add_option("--threshold", cast_threshold, "similarity threshold");

  // compile-instruction
  auto* compile = app.add_subcommand("compile-instruction", "decompose a style instruction into control tokens");
  std::string ci_text, ci_lexicon, ci_traits;
  compile->add_option("instruction", ci_text, "free-text instruction")->required();
  compile->add_option("--lexicon", ci_lexicon, "lexicon file");
  compile->add_option("--traits", ci_traits, "comma-separated persona traits");

  // build-data
  auto* build = app.add_subcommand("build-data", "write a training dataset");
  int bd_stage = 1;
  std::string bd_corpus;
  build->add_option("--stage", bd_stage, "1 (plain) or 2 (context/instruction)")->check(CLI::Range(1, 2));
  build->add_option("--corpus", bd_corpus, "corpus JSONL (reference corpus when omitted)");

  // train
  auto* train = app.add_subcommand("train", "train (or load) the stage 1-3 checkpoints");
  std::string tr_cache;
  train->add_option("--cache", tr_cache, "checkpoint cache (default <out-dir>/cache)");

  // distill
  auto* distill = app.add_subcommand("distill", "self-distill emotional samples from a stage-2 checkpoint");
  std::string di_ckpt;
  distill->add_option("--checkpoint", di_ckpt, "stage-2 checkpoint")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "synthesize speech tokens for one line");
  std::string sy_text, sy_ckpt, sy_instruction, sy_pre, sy_mode = "ctx_inst";
  int sy_speaker = 1, sy_topk = 0, sy_max = 64;
  bool sy_oracle = false;
  std::uint64_t sy_sample_seed = 0;
  synth->add_option("text", sy_text, "line to speak")->required();
  synth->add_option("--checkpoint", sy_ckpt, "model checkpoint");
  synth->add_flag("--oracle", sy_oracle, "use the oracle renderer instead of a model");
  synth->add_option("--speaker", sy_speaker, "voice id");
  synth->add_option("--instruction", sy_instruction, "style instruction");
  synth->add_option("--pre", sy_pre, "preceding line (context)");
  synth->add_option("--mode", sy_mode, "plain | ctx | inst | ctx_inst")->capture_default_str();
  synth->add_option("--top-k", sy_topk, "top-k sampling (greedy when 0)");
  synth->add_option("--sample-seed", sy_sample_seed, "sampling seed");
  synth->add_option("--max-len", sy_max, "maximum speech tokens")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the held-out suites");
  std::string ev_ckpt, ev_mode = "ctx_inst";
  std::vector<std::string> ev_suites{"NAR", "DIA", "CHAP"};
  bool ev_oracle = false, ev_unrelated = false;
  eval->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  eval->add_flag("--oracle", ev_oracle, "score the oracle renderer");
  eval->add_option("--suite", ev_suites, "NAR, DIA, CHAP")->capture_default_str();
  eval->add_option("--mode", ev_mode, "plain | ctx | inst | ctx_inst")->capture_default_str();
  eval->add_flag("--text-unrelated", ev_unrelated, "resample DIA attributes independently of the text");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run a named ablation");
  std::string ab_name, ab_s2, ab_s3;
  ablate->add_option("name", ab_name, "context_text | emotion_control | threshold_sweep | ...")->required();
  ablate->add_option("--stage2", ab_s2, "stage-2 checkpoint");
  ablate->add_option("--stage3", ab_s3, "stage-3 checkpoint");

  // report
  auto* report = app.add_subcommand("report", "tabulate metrics records");
  std::vector<std::string> rp_inputs;
  report->add_option("inputs", rp_inputs, "metrics .jsonl files")->required();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "fiction text -> script -> voices -> instructions -> speech");
  std::string pp_input, pp_ckpt, pp_cache;
  bool pp_oracle = false, pp_no_train = false;
  pipe->add_option("--input", pp_input, "fiction text (the seeded mini novel when omitted)");
  pipe->add_option("--checkpoint", pp_ckpt, "stage-3 checkpoint");
  pipe->add_flag("--oracle", pp_oracle, "synthesize with the oracle renderer");
  pipe->add_option("--cache", pp_cache, "checkpoint cache (default <out-dir>/cache)");
  pipe->add_flag("--no-train", pp_no_train, "fail instead of training when no checkpoint is cached");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    const ExperimentConfig cfg = g.load();
    const TokenIdMap map(cfg.world);

    if (*extract) {
      RawDocument doc{slurp(ex_input), ex_pattern};
      const auto quotes = ex_quotes.empty() ? default_quotes() : parse_quote_spec(ex_quotes);
      const PipelineConfig pc;
      const TextTokenizer tok(cfg.world);
      std::ofstream os(g.out("script.jsonl"));
      std::size_t lines = 0, unknown = 0;
      const auto spans = segment_chapters(doc);
      for (std::size_t c = 0; c < spans.size(); ++c) {
        const auto ex = extract_utterances(spans[c].body, pc.personas, quotes);
        for (const auto& w : ex.warnings) std::cerr << fmt::format("warning: chapter {}: {}\n", c, w);
        bool laugh = false;  // previous line carries the laugh marker
        for (std::size_t i = 0; i < ex.lines.size(); ++i) {
          const auto& l = ex.lines[i];
          const int voice = cast_voice(l.speaker, pc);
          const std::string inst = attribution_instruction(ex.lines, i);
          Persona persona;
          for (const auto& q : pc.personas)
            if (q.speaker_id == voice) persona = q;
          const auto attrs = decompose(inst, persona, pc.lexicon);
          const TextTokens text = tok.encode(l.text);
          // reference rendering from the oracle, so the script doubles as a dataset
          const SpeechTokens speech = oracle_speech_tokens(text, voice, attrs, laugh, cfg.world);
          laugh = std::find(text.begin(), text.end(), cfg.world.laugh_marker) != text.end();
          os << fmt::format(
                    R"({{"chapter":{},"line":{},"kind":"{}","speaker":{},"voice":{},"instruction":{},"text":{},"tokens":{},"speech":{}}})",
                    c, i, to_string(l.kind), detail::quoted(l.speaker), voice, detail::quoted(inst),
                    detail::quoted(l.text), detail::int_list(text), detail::int_list(speech))
             << "\n";
          ++lines;
          if (l.speaker == kUnknownSpeaker) ++unknown;
        }
      }
      std::cout << fmt::format("{} chapters, {} lines, {} unattributed -> {}\n", spans.size(), lines, unknown,
                               g.out("script.jsonl").string());
    } else if (*world) {
      const ReferenceCorpora rc = make_reference_corpora(cfg);
      const Corpus& c = pick_corpus(rc, world_which);
      save_corpus(c, g.out(world_which + "_corpus.jsonl"));
      std::size_t n = 0;
      for (const auto& ch : c.chapters) n += ch.utterances.size();
      std::cout << fmt::format("{} chapters, {} utterances -> {}\n", c.chapters.size(), n,
                               g.out(world_which + "_corpus.jsonl").string());
    } else if (*cast) {
      PromptPolicy p = cfg.prompt;
      if (cast_mode == "decoupled") p.mode = PromptMode::decoupled;
      else if (cast_mode == "non_decoupled") p.mode = PromptMode::non_decoupled;
      else if (!cast_mode.empty()) throw UsageError("--mode must be decoupled or non_decoupled");
      if (cast_threshold >= 0.0) p.similarity_threshold = cast_threshold;
      const Corpus c = corpus_arg(cast_corpus, cfg);
      const auto table = build_prompt_table(c, p);
      save_prompt_table(table, g.out("prompts.jsonl"));
      const auto fallbacks = std::count_if(table.begin(), table.end(), [](const auto& a) { return a.fallback; });
      std::cout << fmt::format("{} assignments, mean similarity {:.4f}, fallbacks {} -> {}\n", table.size(),
                               mean_assignment_similarity(table, false), fallbacks, g.out("prompts.jsonl").string());
    } else if (*compile) {
      const auto lx = ci_lexicon.empty() ? InstructionLexicon::defaults() : InstructionLexicon::load(ci_lexicon);
      Persona persona;
      std::stringstream ts(ci_traits);
      for (std::string t; std::getline(ts, t, ',');)
        if (!trim(t).empty()) persona.traits.insert(trim(t));
      const auto a = decompose(ci_text, persona, lx);
      std::cout << attrs_text(a) << "\n" << "tokens " << ids_text(render_attribute_tokens(a, map)) << "\n";
    } else if (*build) {
      const Corpus c = corpus_arg(bd_corpus, cfg);
      const auto data = bd_stage == 1 ? stage1_dataset(c, cfg.prompt, map)
                                      : stage2_dataset(c, cfg.prompt, cfg.train, cfg.seed, map);
      save_dataset(data, g.out(fmt::format("stage{}_dataset.jsonl", bd_stage)));
      std::cout << fmt::format("{} sequences -> {}\n", data.size(),
                               g.out(fmt::format("stage{}_dataset.jsonl", bd_stage)).string());
    } else if (*train) {
      const fs::path cache = tr_cache.empty() ? g.out("cache") : fs::path(tr_cache);
      const ReferenceCorpora rc = make_reference_corpora(cfg);
      const ReferenceChain ch = chain_for(cfg, rc, cache, false);
      for (int s = 1; s <= 3; ++s) {
        const ModelCheckpoint& c = s == 1 ? ch.stage1 : s == 2 ? ch.stage2 : ch.stage3;
        fs::copy_file(stage_checkpoint_path(cfg, cache, s), g.out(fmt::format("stage{}.ckpt", s)),
                      fs::copy_options::overwrite_existing);
        const auto [before, after] = heldout_endpoints(c, s);
        std::cout << fmt::format("stage {} steps {} held-out loss {:.4f} -> {:.4f} -> {}\n", s, c.step, before, after,
                                 g.out(fmt::format("stage{}.ckpt", s)).string());
      }
      if (ch.distill) write_distillation(*ch.distill, g.out("distill"));
    } else if (*distill) {
      const ModelCheckpoint c = load_checkpoint(di_ckpt);
      const Corpus src = make_corpus(cfg.stage2_corpus, cfg.world);
      const DistillSpec spec = distill_spec(src, cfg.distill, cfg.seed);
      const auto r = run_distillation(c, src, spec, cfg.distill.thresholds,
                                      uniform_targets(spec.grid, cfg.distill.target_per_cell), map);
      write_distillation(r, g.out("distill"));
      std::cout << r.audit.table();
    } else if (*synth) {
      if (sy_oracle == !sy_ckpt.empty()) throw UsageError("give exactly one of --checkpoint or --oracle");
      const InferenceMode mode = parse_mode(sy_mode);
      const TextTokenizer tok(cfg.world);
      Chapter ch;
      auto add = [&](const std::string& text) {
        Utterance u;
        u.id = static_cast<int>(ch.utterances.size());
        u.index_in_chapter = u.id;
        u.speaker_id = sy_speaker;
        u.text = tok.encode(text);
        u.embedding = oracle_speaker_embedding(sy_speaker, 0, 0.0, cfg.world);
        ch.utterances.push_back(std::move(u));
      };
      if (!sy_pre.empty()) add(sy_pre);
      add(sy_text);
      if (ch.utterances.back().text.empty()) throw ValidationError("text has no words");
      const Utterance& u = ch.utterances.back();
      const auto windows = build_context_windows(ch, 1, 1);
      UtteranceIndex index;
      for (const auto& x : ch.utterances) index[x.id] = &x;
      const auto attrs = decompose(sy_instruction, Persona{}, InstructionLexicon::defaults());
      const TokenSequence prefix =
          build_inference_prefix(mode, inference_inputs(u, windows.back(), u.embedding, attrs, index), map);
      const SpeechGenerator gen =
          sy_oracle ? oracle_generator(cfg.world, map) : model_generator(load_checkpoint(sy_ckpt), map);
      Sampling s;
      if (sy_topk > 0) s = {Sampling::Kind::top_k, sy_topk, 1.0, sy_sample_seed};
      const auto speech = gen(prefix, s, sy_max);
      const bool laugh = !sy_pre.empty() && pre_context_has_laugh(ch, ch.utterances.size() - 1, cfg.world);
      std::cout << "text " << ids_text(u.text) << "\n"
                << attrs_text(attrs) << "\n"
                << "speech " << ids_text(speech) << "\n"
                << fmt::format("proxy PER {:.4f}\n", proxy_per(speech, u.text, sy_speaker, attrs, laugh, cfg.world));
    } else if (*eval) {
      if (ev_oracle == !ev_ckpt.empty()) throw UsageError("give exactly one of --checkpoint or --oracle");
      const ReferenceCorpora rc = make_reference_corpora(cfg);
      const CorpusView view(rc.heldout);
      const SpeechGenerator gen =
          ev_oracle ? oracle_generator(cfg.world, map) : model_generator(load_checkpoint(ev_ckpt), map);
      EvalOptions o;
      o.policy = ev_oracle ? PromptPolicy::non_decoupled() : cfg.prompt;
      o.text_unrelated = ev_unrelated;
      o.seed = cfg.seed;
      std::vector<MetricsReport> ms;
      for (const auto& name : ev_suites) {
        const SuiteName sn = parse_suite(name);
        const TestSuite& suite = sn == SuiteName::NAR ? rc.suites.nar : sn == SuiteName::DIA ? rc.suites.dia : rc.suites.chap;
        ms.push_back(evaluate(gen, view, suite, parse_mode(ev_mode), o, map));
        ms.back().tag = ev_oracle ? "oracle" : fs::path(ev_ckpt).stem().string();
      }
      emit_report(ms, {}, g.out("eval_report.txt"), config_hash(cfg), cfg.seed);
      std::cout << metrics_table(ms);
    } else if (*ablate) {
      const ReferenceCorpora rc = make_reference_corpora(cfg);
      AblationInputs in;
      in.reference = &rc.reference;
      in.heldout = &rc.heldout;
      in.suites = rc.suites;
      in.seed = cfg.seed;
      in.map = map;
      if (!ab_s2.empty()) in.stage2 = load_checkpoint(ab_s2);
      if (!ab_s3.empty()) in.stage3 = load_checkpoint(ab_s3);
      const std::vector<ComparisonReport> r{run_ablation(ab_name, in)};
      emit_report({}, r, g.out("ablation_" + ab_name + ".txt"), config_hash(cfg), cfg.seed);
      std::cout << r[0].table();
    } else if (*report) {
      std::vector<MetricsReport> ms;
      for (const auto& f : rp_inputs) {
        const auto m = read_metrics_records(f);
        ms.insert(ms.end(), m.begin(), m.end());
      }
      if (ms.empty()) throw ValidationError("no metrics records in the inputs");
      std::cout << metrics_table(ms);
    } else if (*pipe) {
      if (pp_oracle && !pp_ckpt.empty()) throw UsageError("--oracle and --checkpoint are exclusive");
      const std::string novel = pp_input.empty() ? make_mini_novel(cfg.novel) : slurp(pp_input);
      SpeechGenerator gen;
      if (pp_oracle) {
        gen = oracle_generator(cfg.world, map);
      } else if (!pp_ckpt.empty()) {
        gen = model_generator(load_checkpoint(pp_ckpt), map);
      } else {
        const fs::path cache = pp_cache.empty() ? g.out("cache") : fs::path(pp_cache);
        gen = model_generator(chain_for(cfg, make_reference_corpora(cfg), cache, pp_no_train).stage3, map);
      }
      const auto r = pipeline_run(novel, PipelineConfig{}, gen, cfg.world);
      write_pipeline(r, g.out("pipeline"));
      std::cout << slurp(g.out("pipeline") / "pipeline_report.txt");
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "invalid: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "invalid: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
