// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "audiobook/eval.hpp"

using namespace audiobook;

namespace {

const TokenIdMap kMap;

class Eval : public ::testing::Test {
 protected:
  Corpus corpus = make_corpus(CorpusShape{4, 40, 4, 0.5, 0.25, 0.4, 0.0, 3, 8, 0.1, 50, 5000, 0.1}, WorldConfig{});
  CorpusView view{corpus};
  std::vector<int> held{51, 53};
  TestSuites suites = build_testsets(corpus, held, TestSizes{10, 20, 1}, 3);
  EvalOptions exact = [] {
    EvalOptions o;
    o.policy = PromptPolicy::non_decoupled();  // oracle speaker follows the prompt
    return o;
  }();
};

TEST_F(Eval, SuitesComeFromHeldOutChaptersOnly) {
  EXPECT_EQ(suites.nar.items.size(), 10u);
  EXPECT_EQ(suites.dia.items.size(), 20u);
  ASSERT_EQ(suites.chap.items.size(), 1u);
  EXPECT_TRUE(suites.chap.items[0] == 51 || suites.chap.items[0] == 53);
  for (int id : suites.nar.items) {
    const auto& u = view.at(id);
    EXPECT_EQ(u.kind, UtteranceKind::narration);
    EXPECT_TRUE(u.chapter_id == 51 || u.chapter_id == 53);
  }
  for (int id : suites.dia.items) EXPECT_EQ(view.at(id).kind, UtteranceKind::dialogue);
  EXPECT_TRUE(std::is_sorted(suites.dia.items.begin(), suites.dia.items.end()));
  EXPECT_EQ(build_testsets(corpus, held, TestSizes{10, 20, 1}, 3).dia, suites.dia);
  EXPECT_THROW(build_testsets(corpus, held, TestSizes{10, 20, 3}, 3), ValidationError);
  EXPECT_THROW(build_testsets(corpus, held, TestSizes{10, 1000, 1}, 3), ValidationError);
}

TEST_F(Eval, OracleScoresPerfectly) {
  const auto gen = oracle_generator(corpus.world, kMap);
  const auto r = evaluate(gen, view, suites.dia, InferenceMode::ctx_inst, exact, kMap);
  EXPECT_EQ(r.suite, "DIA");
  EXPECT_EQ(r.items, 20u);
  EXPECT_EQ(r.per, 0.0);
  EXPECT_EQ(r.token_accuracy, 1.0);
  EXPECT_EQ(r.ss, 1.0);
  EXPECT_EQ(r.class_rate, 1.0);
  for (std::size_t k = 0; k < 3; ++k) {
    if (r.rate_high[k] == 0.0 && r.rate_low[k] == 0.0) continue;  // emotion absent from the suite
    EXPECT_EQ(r.rate_high[k], 1.0);
    EXPECT_EQ(r.rate_low[k], 0.0);
    EXPECT_EQ(r.delta_hl[k], 1.0);
  }
  const auto chap = evaluate(gen, view, suites.chap, InferenceMode::ctx_inst, exact, kMap);
  EXPECT_EQ(chap.per, 0.0);
  if (chap.carry_positions > 0) {
    EXPECT_EQ(chap.carry_accuracy, 1.0);
  }
}

TEST_F(Eval, PlainModeLosesInstructionAndCarry) {
  const auto gen = oracle_generator(corpus.world, kMap);
  const auto plain = evaluate(gen, view, suites.dia, InferenceMode::plain, exact, kMap);
  EXPECT_GT(plain.per, 0.5);  // neutral rendering of emotional lines
  EXPECT_EQ(plain.classified, 0u);
  // neutral lines only: without an instruction block the oracle renders neutral,
  // so plain and ctx then differ by the carry alone
  std::vector<int> laugh;
  for (int id : laugh_context_items(view))
    if (!view.at(id).attributes.mixed() && view.at(id).attributes.primary() == Emotion::neutral) laugh.push_back(id);
  ASSERT_FALSE(laugh.empty());
  const auto p = evaluate_items(gen, view, laugh, InferenceMode::plain, exact, kMap);
  const auto c = evaluate_items(gen, view, laugh, InferenceMode::ctx, exact, kMap);
  EXPECT_EQ(c.carry_accuracy, 1.0);
  EXPECT_LT(p.carry_accuracy, 0.2);
}

TEST_F(Eval, TextUnrelatedResamplesDeterministically) {
  const auto& u = view.at(suites.dia.items[0]);
  const auto a = resample_attributes(u, false, 9);
  EXPECT_EQ(a, resample_attributes(u, false, 9));
  EXPECT_NE(a.primary(), Emotion::neutral);
  const auto m = resample_attributes(u, true, 9);
  EXPECT_TRUE(m.mixed());
  EXPECT_EQ(attribute_violation(m), "");
  EvalOptions o = exact;
  o.text_unrelated = true;
  const auto gen = oracle_generator(corpus.world, kMap);
  EXPECT_EQ(evaluate(gen, view, suites.dia, InferenceMode::ctx_inst, o, kMap).class_rate, 1.0);
  EXPECT_THROW(evaluate(gen, view, suites.nar, InferenceMode::ctx_inst, o, kMap), ValidationError);
  EXPECT_THROW(evaluate(gen, view, suites.nar, InferenceMode::inst, exact, kMap), ValidationError);
}

TEST(Metrics, F1FromConfusion) {
  std::array<std::array<int, kLabels>, kLabels> cm{};
  cm[1][1] = 3;
  cm[1][2] = 1;
  cm[2][2] = 2;
  const auto f = f1_scores(cm);
  EXPECT_DOUBLE_EQ(f[0], 0.0);
  EXPECT_DOUBLE_EQ(f[1], 6.0 / 7.0);
  EXPECT_DOUBLE_EQ(f[2], 4.0 / 5.0);
}

TEST(Metrics, RecordRoundTrip) {
  MetricsReport r;
  r.suite = "DIA";
  r.mode = "ctx_inst";
  r.tag = "stage3";
  r.items = 7;
  r.per = 0.1234567890123;
  r.f1 = {0.1, 0.2, 0.3, 0.4};
  r.delta_hl = {0.5, -0.25, 1.0};
  r.confusion[2][3] = 4;
  EXPECT_EQ(parse_metrics_record(metrics_record(r)), r);
  EXPECT_NE(metrics_table(std::vector<MetricsReport>{r}).find("stage3"), std::string::npos);
}

TEST_F(Eval, ThresholdSweepAndAblationErrors) {
  AblationInputs in;
  in.reference = &corpus;
  in.heldout = &corpus;
  in.suites = suites;
  const auto rep = run_ablation("threshold_sweep", in);
  ASSERT_EQ(rep.rows.size(), 4u);
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    EXPECT_GE(rep.rows[i].second[1], rep.rows[i - 1].second[1]);
  EXPECT_DOUBLE_EQ(rep.at("decoupled-0.8", "threshold"), 0.8);
  EXPECT_THROW(rep.at("decoupled-0.8", "nope"), ValidationError);
  EXPECT_THROW(run_ablation("decoupling", in), ValidationError);
  EXPECT_THROW(run_ablation("bogus", in), ValidationError);
  EXPECT_THROW(run_ablation("threshold_sweep", AblationInputs{}), ValidationError);
}

TEST_F(Eval, ReportFiles) {
  const auto gen = oracle_generator(corpus.world, kMap);
  std::vector<MetricsReport> ms{evaluate(gen, view, suites.nar, InferenceMode::ctx, exact, kMap)};
  AblationInputs in;
  in.reference = in.heldout = &corpus;
  std::vector<ComparisonReport> abl{run_ablation("threshold_sweep", in)};
  const auto path = std::filesystem::temp_directory_path() / "audiobook_report_test" / "report.txt";
  emit_report(ms, abl, path, 0xabc, 7);
  const auto back = read_metrics_records(path.string() + ".jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], ms[0]);
  std::ifstream t(path);
  std::string first;
  std::getline(t, first);
  EXPECT_EQ(first, "# config 0000000000000abc seed 7");
  EXPECT_THROW(emit_report({}, {}, path, 0, 0), ValidationError);
  std::filesystem::remove_all(path.parent_path());
}

}  // namespace
