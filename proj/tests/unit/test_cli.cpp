// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "moesim/simulator.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MOESIM_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("moesim_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("gen-trace --no-such-flag"), 1);
  EXPECT_EQ(run("simulate --trace x --strategy nope"), 1);
  EXPECT_EQ(run("gen-trace --experts 1 --out " + path("a")), 1);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, DataErrors) {
  EXPECT_EQ(run("simulate --trace " + path("missing.txt")), 2);
  std::ofstream(path("bad.txt")) << "moesim-trace version=1 layers=1\n";
  EXPECT_EQ(run("simulate --trace " + path("bad.txt")), 2);
  std::ofstream(path("bad.csv")) << "not,metrics\n";
  EXPECT_EQ(run("report --metrics " + path("bad.csv")), 2);
}

TEST_F(Cli, ResidentAllUtilizationColumn) {
  ASSERT_EQ(run("gen-trace --layers 2 --experts 8 --d-model 8 --batches 5 --skew 0 --seed 2 --out " + path("t")), 0);
  ASSERT_EQ(run("simulate --trace " + path("t/trace.txt") + " --strategy resident-all --out " + path("s")), 0);
  std::ifstream in(path("s/metrics_resident-all.csv"));
  const auto rows = moesim::read_metrics_csv(in);
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) {
    EXPECT_LE(r.utilization, 1.0);
    EXPECT_EQ(r.experts, 8);
  }
}

TEST_F(Cli, ChainIsDeterministic) {
  for (const char* run_dir : {"r1", "r2"}) {
    const std::string out = path(run_dir);
    ASSERT_EQ(run("gen-trace --layers 2 --experts 4 --d-model 8 --batch-size 16 --batches 6 --seed 5 --out " + out), 0);
    ASSERT_EQ(run("train --trace " + out + "/trace.txt --epochs 2 --sru-layers 2 --seed 5 --out " + out), 0);
    ASSERT_EQ(run("simulate --trace " + out + "/trace.txt --params " + out +
                  "/params.json --strategy replicated --mode concurrent --out " + out), 0);
    ASSERT_EQ(run("report --metrics " + out + "/metrics_replicated.csv --plot latency --out " + out + "/rep"), 0);
  }
  for (const char* f : {"trace.txt", "params.json", "loss.csv", "metrics_replicated.csv", "rep/summary.csv",
                        "rep/summary.txt", "rep/plot_batch_replicated_latency.csv"}) {
    const std::string a = slurp(dir_ / "r1" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir_ / "r2" / f)) << f;
  }
}

TEST_F(Cli, CompareWritesAllStrategies) {
  ASSERT_EQ(run("gen-trace --layers 1 --experts 64 --d-model 8 --batches 4 --hot-experts 2 --seed 1 --out " + path("h")), 0);
  ASSERT_EQ(run("compare --trace " + path("h/trace.txt") + " --t-compute 20 --out " + path("c")), 0);
  std::ifstream in(path("c/compare.csv"));
  const auto rows = moesim::read_metrics_csv(in);
  EXPECT_EQ(rows.size(), 12u);
  EXPECT_FALSE(slurp(dir_ / "c" / "summary.txt").empty());
}
