#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

namespace fs = std::filesystem;
using sslb::testing::TempDir;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdout captured; stderr is discarded.
Outcome cli(const std::string& args, const TempDir& scratch) {
  const fs::path capture = scratch / "stdout.txt";
  const std::string cmd = std::string("env -u SSLB_OUT_DIR '") + SSLB_CLI_PATH + "' " + args + " > '" +
                          capture.string() + "' 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(capture);
  std::ostringstream os;
  os << f.rdbuf();
  o.out = os.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::size_t count_lines(const std::string& s, const std::string& prefix) {
  std::istringstream is(s);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) n += line.rfind(prefix, 0) == 0;
  return n;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

// Fast settings: small images and a single epoch.
const std::string kQuick = " --synthetic --image-size 8 --epochs 1";

}  // namespace

TEST(Cli, SynthWritesTwoClassDirectoriesReproducibly) {
  TempDir t("cli_synth");
  ASSERT_EQ(cli("synth --out '" + (t / "a").string() + "' --seed 3", t).code, 0);
  ASSERT_EQ(cli("synth --out '" + (t / "b").string() + "' --seed 3", t).code, 0);
  std::size_t images = 0, dirs = 0;
  for (const auto& e : fs::directory_iterator(t / "a")) {
    if (!e.is_directory()) continue;
    ++dirs;
    for (const auto& f : fs::directory_iterator(e.path())) {
      ++images;
      const fs::path twin = t / "b" / e.path().filename() / f.path().filename();
      ASSERT_EQ(slurp(f.path()), slurp(twin)) << f.path();
    }
  }
  EXPECT_EQ(dirs, 2u);
  EXPECT_EQ(images, 204u);
}

TEST(Cli, SynthRejectsBadParameters) {
  TempDir t("cli_synth0");
  EXPECT_EQ(cli("synth --out '" + (t / "s").string() + "' --per-class 0", t).code, 2);
  EXPECT_EQ(cli("synth --out '" + (t / "s").string() + "' --difficulty 0", t).code, 2);
}

TEST(Cli, TrainPrintsOneLinePerEpoch) {
  TempDir t("cli_train1");
  auto r = cli("train --out '" + (t / "o").string() + "'" + kQuick, t);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(r.out, "epoch "), 1u);
  EXPECT_EQ(count_lines(r.out, "BEST "), 1u);
  EXPECT_TRUE(fs::exists(t / "o" / "results.csv"));
  EXPECT_TRUE(fs::exists(t / "o" / "scenario_seed1.txt"));
}

TEST(Cli, TrainDefaultsToFiftyEpochs) {
  TempDir t("cli_train50");
  auto r = cli("train --out '" + (t / "o").string() + "' --synthetic --image-size 8 --method supervised", t);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(count_lines(r.out, "epoch "), 50u);
  EXPECT_EQ(count_lines(r.out, "BEST "), 1u);
}

TEST(Cli, UnknownMethodIsUsageErrorAndWritesNothing) {
  TempDir t("cli_bogus");
  EXPECT_EQ(cli("train --out '" + (t / "o").string() + "' --method bogus" + kQuick, t).code, 2);
  EXPECT_FALSE(fs::exists(t / "o"));
  EXPECT_EQ(cli("train --out '" + (t / "o").string() + "' --no-such-flag" + kQuick, t).code, 2);
  EXPECT_FALSE(fs::exists(t / "o"));
}

TEST(Cli, ExperimentWritesOneRowPerRun) {
  TempDir t("cli_exp");
  auto r = cli("experiment --out '" + (t / "o").string() + "' --seeds 2 --nl 10 --neg-frac 0.8" + kQuick, t);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines(slurp(t / "o" / "results.csv"), ""), 1u + 8u);
  for (const char* f : {"summary.csv", "gains.csv", "summary.txt", "experiment.config"}) {
    EXPECT_TRUE(fs::exists(t / "o" / f)) << f;
  }
}

TEST(Cli, ResumeWithDifferentConfigIsRejected) {
  TempDir t("cli_resume");
  const std::string base = "experiment --out '" + (t / "o").string() + "' --seeds 1 --nl 10 --neg-frac 0.8" +
                           " --method supervised" + kQuick;
  ASSERT_EQ(cli(base, t).code, 0);
  const std::string before = slurp(t / "o" / "results.csv");
  EXPECT_EQ(cli(base + " --resume --lr 0.01", t).code, 3);
  EXPECT_EQ(slurp(t / "o" / "results.csv"), before);
  auto again = cli(base + " --resume", t);
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("1 of 1 runs already complete"), std::string::npos) << again.out;
  EXPECT_EQ(slurp(t / "o" / "results.csv"), before);
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  TempDir t("cli_config");
  {
    std::ofstream f(t / "run.cfg");
    f << "# quick run\nsynthetic = true\nimage-size=8\nepochs=3\nmethod=supervised\n";
  }
  auto r = cli("train --out '" + (t / "o").string() + "' --config '" + (t / "run.cfg").string() + "'", t);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(count_lines(r.out, "epoch "), 3u);
  r = cli("train --out '" + (t / "o").string() + "' --config '" + (t / "run.cfg").string() + "' --epochs 2", t);
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(count_lines(r.out, "epoch "), 2u);
}

TEST(Cli, ConfigEchoReproducesTheRun) {
  TempDir t("cli_echo");
  const fs::path a = t / "a", b = t / "b";
  ASSERT_EQ(cli("experiment --out '" + a.string() + "' --seeds 2 --nl 10 --neg-frac 0.7 --method mixmatch" +
                    kQuick + " --gamma 3 --lr 0.003",
                t)
                .code,
            0);
  ASSERT_EQ(cli("experiment --out '" + b.string() + "' --config '" + (a / "experiment.config").string() + "'", t)
                .code,
            0);
  EXPECT_EQ(slurp(b / "experiment.config"), slurp(a / "experiment.config"));
  EXPECT_EQ(slurp(b / "results.csv"), slurp(a / "results.csv"));
}

TEST(Cli, ReportRebuildsSummaries) {
  TempDir t("cli_report");
  ASSERT_EQ(cli("experiment --out '" + (t / "o").string() + "' --seeds 1 --nl 10 --neg-frac 0.8" + kQuick, t).code,
            0);
  const std::string summary = slurp(t / "o" / "summary.csv");
  fs::remove(t / "o" / "summary.csv");
  EXPECT_EQ(cli("report --out '" + (t / "o").string() + "'", t).code, 0);
  EXPECT_EQ(slurp(t / "o" / "summary.csv"), summary);
  EXPECT_EQ(cli("report --out '" + (t / "missing").string() + "'", t).code, 2);
  EXPECT_GT(count_files(t / "o"), 0u);
}
