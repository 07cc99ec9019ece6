#include <gtest/gtest.h>

#include <cstdio>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "test_support.hpp"
#include "tdass/bytes.hpp"

using namespace tdass;

namespace {

struct Result {
  int status = -1;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(TDASS_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int raw = ::pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

// One small corpus and pretrain checkpoint shared by the tests below.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test_util::TempDir;
    ASSERT_EQ(run("synth-data --seed 3 --speakers 10,10,35 --out " + q(*dir_ / "data")).status, 0);
    ASSERT_EQ(run("pretrain --data " + q(*dir_ / "data") + " --exclude-speaker 2 --steps 2 --out " +
                  q(*dir_ / "pre.ckpt"))
                  .status,
              0);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string data() { return q(*dir_ / "data"); }
  static std::string pre() { return q(*dir_ / "pre.ckpt"); }
  static test_util::TempDir* dir_;
};

test_util::TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST(Cli, UnknownFlagExitsTwo) {
  EXPECT_EQ(run("pretrain --bogus 1").status, 2);
  EXPECT_EQ(run("").status, 2);
}

TEST(Cli, HelpExitsZero) {
  const Result r = run("finetune --help");
  EXPECT_EQ(r.status, 0);
  EXPECT_NE(r.output.find("--no-classifier"), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  const Result r = run("gradcheck");
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("(ok)"), std::string::npos);
}

TEST(Cli, MissingDataExitsOne) {
  const Result r = run("pretrain --data /nonexistent/tdass --exclude-speaker 2 --steps 1 --out /tmp/x.ckpt");
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.output.rfind("error: ", 0), 0u) << r.output;
}

TEST_F(CliPipeline, SynthRefusesNonEmptyDirectory) {
  EXPECT_EQ(run("synth-data --out " + data()).status, 1);
}

TEST_F(CliPipeline, BudgetBeyondTargetUtterancesExitsOne) {
  const Result r = run("finetune --data " + data() + " --ckpt " + pre() +
                       " --target 2 --budget 700 --steps 1 --out " + q(*dir_ / "x.ckpt"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
}

TEST_F(CliPipeline, FinetuneWritesTraceAndEvalReport) {
  const auto out = *dir_ / "fine.ckpt";
  const Result f = run("finetune --data " + data() + " --ckpt " + pre() + " --target 2 --budget 30 --steps 3 --out " +
                       q(out));
  ASSERT_EQ(f.status, 0) << f.output;
  EXPECT_NE(f.output.find("target L_GLS"), std::string::npos);
  std::istringstream trace(read_file_bytes(out.string() + ".trace.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(trace, line)) ++rows;
  EXPECT_EQ(rows, 4u);

  const auto report = *dir_ / "mcd.csv";
  const Result e = run("eval-mcd --data " + data() + " --ckpt " + q(out) + " --report " + q(report));
  ASSERT_EQ(e.status, 0) << e.output;
  std::istringstream in(read_file_bytes(report));
  std::getline(in, line);
  EXPECT_EQ(line, "utt_id,speaker,mcd_db");
  rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(line.rfind("s2_", 0), 0u) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 20u);

  const Result all = run("eval-mcd --data " + data() + " --ckpt " + q(out) + " --split val --speaker -1 --report " +
                         q(*dir_ / "val.csv"));
  ASSERT_EQ(all.status, 0) << all.output;
  EXPECT_NE(all.output.find("over 12 utterances"), std::string::npos) << all.output;
}

TEST_F(CliPipeline, PlotWritesPgmAndCsv) {
  const auto out = *dir_ / "plot.pgm";
  const Result r = run("plot-mel --data " + data() + " --utt s2_u0040 --ckpt " + pre() + " --out " + q(out));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(read_file_bytes(out).rfind("P5\n", 0), 0u);
  EXPECT_TRUE(std::filesystem::exists(*dir_ / "plot.csv"));
}

TEST_F(CliPipeline, SeedComesFromEnvironment) {
  const auto a = *dir_ / "env_a", b = *dir_ / "env_b";
  ASSERT_EQ(run("synth-data --speakers 2,2,2 --seed 9 --out " + q(a)).status, 0);
  ASSERT_EQ(std::system(("TDASS_SEED=9 " + std::string(TDASS_CLI_PATH) + " synth-data --speakers 2,2,2 --out " +
                         q(b) + " > /dev/null")
                            .c_str()),
            0);
  EXPECT_EQ(read_file_bytes(a / "xvectors.tsv"), read_file_bytes(b / "xvectors.tsv"));
}
