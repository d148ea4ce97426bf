#include <gtest/gtest.h>

#include "test_util.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#ifdef GMN_CLI_PATH

using namespace gmn;
using namespace gmn::testing;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun cli(const std::string& args, const fs::path& dir) {
  fs::path log = dir / "cli.log";
  std::string cmd = std::string("\"") + GMN_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  int status = std::system(cmd.c_str());
  CliRun r;
  r.code = status == -1 ? -1 : WEXITSTATUS(status);
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { dir_ = scratch_dir("cli"); }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpDocumentsEveryFlag) {
  const std::map<std::string, std::vector<std::string>> flags = {
      {"", {"--threads", "generate", "fit", "tune", "benchmark", "analyze", "metrics"}},
      {"generate", {"--n", "--d", "--K", "--m", "--svw", "--svu", "--sww", "--swu", "--suu", "--edge-family",
                    "--sigma2", "--loops", "--seed", "--out"}},
      {"fit", {"--out", "--hyper", "--tune", "--folds", "--train-fraction", "--grid", "--cv-seed", "--partition",
               "--tune-alpha", "--refit", "--no-refit", "--edge-family", "--sigma2", "--eta", "--tol", "--max-iter",
               "--patience", "--oracle-ranks", "--symmetrize"}},
      {"tune", {"--out", "--folds", "--train-fraction", "--grid", "--cv-seed", "--partition", "--tune-alpha",
                "--refit", "--no-refit", "--symmetrize"}},
      {"benchmark", {"--config", "--out", "--summary"}},
      {"analyze", {"--dataset", "--lobes", "--nperm", "--dims", "--out", "--seed", "--hyper", "--tune", "--folds",
                   "--grid", "--fisher", "--no-regress", "--symmetrize"}},
      {"metrics", {"--truth", "--fit", "--out"}},
  };
  for (const auto& [sub, expected] : flags) {
    CliRun r = cli(sub + " --help", dir_);
    EXPECT_EQ(r.code, 0) << sub;
    for (const auto& f : expected) EXPECT_NE(r.output.find(f), std::string::npos) << sub << " help lacks " << f;
  }
}

TEST_F(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(cli("", dir_).code, 1);
  EXPECT_EQ(cli("frobnicate", dir_).code, 1);
  EXPECT_EQ(cli("fit " + q(dir_ / "absent"), dir_).code, 1);
  EXPECT_EQ(cli("generate --n 5 --d 2 --m 2,2 --out " + q(dir_ / "g"), dir_).code, 1);  // d(1+K+M) > n
  EXPECT_EQ(cli("generate --n 50 --d 1 --K 3 --m 2,2 --out " + q(dir_ / "g"), dir_).code, 1);
  CliRun r = cli("fit " + q(dir_ / "absent"), dir_);
  EXPECT_NE(r.output.find("manifest"), std::string::npos);
}

TEST_F(Cli, GenerateFitMetricsRoundTrip) {
  fs::path data = dir_ / "data", out = dir_ / "fit";
  ASSERT_EQ(cli("generate --n 50 --d 2 --K 2 --m 3,3 --svw 0.2 --seed 7 --out " + q(data), dir_).code, 0);
  EXPECT_TRUE(fs::exists(data / "manifest.json"));
  EXPECT_TRUE(fs::exists(data / "truth" / "truth.json"));
  EXPECT_TRUE(fs::exists(data / "truth" / "V.csv"));
  CliRun f = cli("--threads 1 fit " + q(data) + " --hyper 1,1 --out " + q(out), dir_);
  ASSERT_EQ(f.code, 0) << f.output;
  json meta = read_json_file(out / "fit.json");
  EXPECT_EQ(meta["c1"], 1.0);
  EXPECT_EQ(meta["hyperparameters"]["lambda1"].size(), 2u);
  EXPECT_TRUE(meta["refit"].get<bool>());
  ASSERT_EQ(cli("metrics --truth " + q(data / "truth") + " --fit " + q(out) + " --out " + q(dir_ / "m.json"), dir_).code, 0);
  json m = read_json_file(dir_ / "m.json");
  EXPECT_LT(m["arfe"]["Theta"].get<double>(), 0.5);
  EXPECT_EQ(m["rfe"]["R"].size(), 6u);

  // Same inputs give the same matrices.
  fs::path again = dir_ / "fit2";
  ASSERT_EQ(cli("fit " + q(data) + " --hyper 1,1 --out " + q(again), dir_).code, 0);
  EXPECT_EQ((read_matrix_csv(out / "S.csv") - read_matrix_csv(again / "S.csv")).norm(), 0.0);
}

TEST_F(Cli, FitFlagsReachTheSolver) {
  fs::path data = dir_ / "data";
  ASSERT_EQ(cli("generate --n 30 --d 1 --m 2,2 --seed 3 --out " + q(data), dir_).code, 0);
  fs::path out = dir_ / "fit";
  ASSERT_EQ(cli("fit " + q(data) + " --no-refit --eta 0.5 --tol 1e-4 --max-iter 7 --out " + q(out), dir_).code, 0);
  json meta = read_json_file(out / "fit.json");
  EXPECT_FALSE(meta["refit"].get<bool>());
  EXPECT_EQ(meta["hyperparameters"]["eta1"], 0.5);
  EXPECT_EQ(meta["hyperparameters"]["max_iter"], 7);
  for (const auto& t : meta["traces"]) EXPECT_LE(t["iterations"].get<int>(), 7);
  std::ifstream trace(out / "trace.csv");
  std::string header;
  std::getline(trace, header);
  EXPECT_EQ(header, "iteration,subproblem,loss");

  write_json_file(dir_ / "ranks.json", json{{"d", 1}});
  fs::path oracle = dir_ / "oracle";
  ASSERT_EQ(cli("fit " + q(data) + " --oracle-ranks " + q(dir_ / "ranks.json") + " --out " + q(oracle), dir_).code, 0);
  EXPECT_EQ(read_json_file(oracle / "fit.json")["signatures"]["S"]["p"], 1);

  EXPECT_EQ(cli("fit " + q(data) + " --hyper 0,1", dir_).code, 1);
  EXPECT_EQ(cli("fit " + q(data) + " --hyper 1,1 --tune", dir_).code, 1);
  EXPECT_EQ(cli("fit " + q(data) + " --edge-family bernoulli_logit", dir_).code, 1);  // non-binary layers
}

TEST_F(Cli, DivergentLearningRateExitsWithTwo) {
  fs::path data = dir_ / "data";
  ASSERT_EQ(cli("generate --n 30 --d 1 --m 3,3 --seed 4 --out " + q(data), dir_).code, 0);
  CliRun r = cli("fit " + q(data) + " --eta 3 --no-refit --out " + q(dir_ / "fit"), dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--eta"), std::string::npos);
}

TEST_F(Cli, TuneWritesCvJson) {
  fs::path data = dir_ / "data";
  ASSERT_EQ(cli("generate --n 30 --d 1 --m 2,2 --seed 5 --out " + q(data), dir_).code, 0);
  ASSERT_EQ(cli("tune " + q(data) + " --folds 2 --grid 0.5,2", dir_).code, 0);
  json cv = read_json_file(data / "cv.json");
  EXPECT_EQ(cv["first"].size(), 2u);
  EXPECT_EQ(cv["second"]["grid"].size(), 2u);
  EXPECT_TRUE(cv.contains("hyperparameters"));
}

TEST_F(Cli, BenchmarkWritesTheDocumentedSchema) {
  json cfg = json::parse(R"({"vary": "n", "values": [30], "seeds": 1, "methods": ["gmn", "mase"],
                             "base": {"M": 4, "K": 2, "d": 1}})");
  write_json_file(dir_ / "sweep.json", cfg);
  ASSERT_EQ(cli("benchmark --config " + q(dir_ / "sweep.json") + " --out " + q(dir_ / "results.csv"), dir_).code, 0);
  std::ifstream in(dir_ / "results.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, sweep_csv_header());
  EXPECT_TRUE(fs::exists(dir_ / "results_summary.csv"));

  write_json_file(dir_ / "bad.json", json::parse(R"({"base": {"angles": {"s_vx": 0.1}}})"));
  CliRun bad = cli("benchmark --config " + q(dir_ / "bad.json"), dir_);
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("base.angles.s_vx"), std::string::npos) << bad.output;
}

TEST_F(Cli, AnalyzeOutputs) {
  fs::path data = dir_ / "data";
  ASSERT_EQ(cli("generate --n 24 --d 1 --m 2,2 --seed 6 --out " + q(data), dir_).code, 0);
  json lobes{{"labels", json::array()}};
  for (int i = 0; i < 24; ++i) lobes["labels"].push_back(i % 3 == 0 ? "a" : "b");
  write_json_file(dir_ / "lobes.json", lobes);
  fs::path out = dir_ / "an";
  CliRun r = cli("analyze --dataset " + q(data) + " --lobes " + q(dir_ / "lobes.json") + " --nperm 3 --dims 1 --out " + q(out),
              dir_);
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream emb(out / "group_embeddings.csv");
  std::string header;
  std::getline(emb, header);
  EXPECT_EQ(header, "node,lobe,group,dim1");
  json meta = read_json_file(out / "analysis.json");
  EXPECT_TRUE(meta["aligned"].is_boolean());
  EXPECT_EQ(meta["n_perm_used"], 3);
}

#endif
