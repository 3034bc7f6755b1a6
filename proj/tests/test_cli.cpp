// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  fs::path dir = fs::temp_directory_path() / "audiobook_cli_test";
  void SetUp() override {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  Result run(const std::string& args) const {
    const auto log = dir / "stdout.txt";
    const std::string cmd =
        std::string(AUDIOBOOK_CLI) + " --out-dir " + (dir / "out").string() + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream is(log);
    std::stringstream ss;
    ss << is.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
  }
  fs::path write(const std::string& name, const std::string& body) const {
    std::ofstream(dir / name) << body;
    return dir / name;
  }
};

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("synth hello").code, 1);  // neither --checkpoint nor --oracle
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, InvalidConfigExitsTwo) {
  const auto bad = write("bad.json", R"({"model": {"layers": 3}})");
  const auto r = run("--config " + bad.string() + " compile-instruction calm");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("model.layers"), std::string::npos);
  EXPECT_EQ(run("--config " + write("trunc.json", "{").string() + " compile-instruction calm").code, 2);
}

TEST_F(Cli, MissingFilesExitThree) {
  EXPECT_EQ(run("extract " + (dir / "none.txt").string()).code, 3);
  EXPECT_EQ(run("--config /nonexistent.json compile-instruction calm").code, 3);
  EXPECT_EQ(run("pipeline --no-train --cache " + (dir / "empty").string()).code, 3);
}

TEST_F(Cli, CompileInstruction) {
  const auto r = run("compile-instruction 'shouted angrily, quickly'");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("emotion angry:1 intensity high volume high speed fast"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("tokens 17 25 28 31"), std::string::npos) << r.out;
}

TEST_F(Cli, ExtractWritesScript) {
  const auto in = write("novel.txt", "Chapter 1\nThe rain fell. Mary said softly, \"Come home.\"\n");
  const auto r = run("extract " + in.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("1 chapters, 3 lines, 0 unattributed"), std::string::npos) << r.out;
  std::ifstream is(dir / "out" / "script.jsonl");
  std::string last, line;
  while (std::getline(is, line)) last = line;
  EXPECT_NE(last.find(R"("speaker":"Mary")"), std::string::npos) << last;
  EXPECT_NE(last.find(R"("instruction":"Mary said softly,")"), std::string::npos) << last;
}

TEST_F(Cli, OracleSynthIsExact) {
  const auto r = run("synth --oracle --speaker 2 --instruction 'shouted angrily' --pre 'she laughed' 'the door'");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("proxy PER 0.0000"), std::string::npos) << r.out;
  EXPECT_EQ(run("synth --oracle --mode bogus 'the door'").code, 1);  // unknown mode name
}

TEST_F(Cli, DataCastAndWorld) {
  ASSERT_EQ(run("make-world").code, 0);
  const auto corpus = dir / "out" / "reference_corpus.jsonl";
  ASSERT_TRUE(fs::exists(corpus));
  const auto c = run("cast --corpus " + corpus.string() + " --threshold 0.68");
  ASSERT_EQ(c.code, 0) << c.out;
  EXPECT_TRUE(fs::exists(dir / "out" / "prompts.jsonl"));
  ASSERT_EQ(run("build-data --stage 2 --corpus " + corpus.string()).code, 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "stage2_dataset.jsonl"));
  EXPECT_EQ(run("build-data --stage 4").code, 1);
  EXPECT_EQ(run("make-world --corpus nope").code, 1);
}

TEST_F(Cli, EvalReportAndAblation) {
  const auto e = run("eval --oracle --suite DIA");
  ASSERT_EQ(e.code, 0) << e.out;
  const auto rep = run("report " + (dir / "out" / "eval_report.txt.jsonl").string());
  ASSERT_EQ(rep.code, 0) << rep.out;
  EXPECT_NE(rep.out.find("oracle"), std::string::npos);
  EXPECT_EQ(run("ablate threshold_sweep").code, 0);
  EXPECT_EQ(run("ablate context_text").code, 2);  // needs checkpoints
}

TEST_F(Cli, OraclePipeline) {
  const auto r = run("pipeline --oracle");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("mean       0.000000"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "out" / "pipeline" / "chapter_0.jsonl"));
}

}  // namespace
