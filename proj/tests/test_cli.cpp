#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "capsfuse/io.hpp"
#include "cli.hpp"

using namespace capsfuse;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = CAPSFUSE_FIXTURES;

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "capsfuse");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("capsfuse_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string synth(const std::string& name, const std::string& n = "120", const std::string& dim = "4") {
    const auto r = invoke({"synth", "--mode", "separable", "--n", n, "--seed", "3", "--out", path(name),
                           "--text-dim", dim, "--image-dim", dim, "--numeric-dim", "3"});
    EXPECT_EQ(r.code, 0) << r.err;
    return path(name);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(invoke({"--help"}).code, 0);
  EXPECT_EQ(invoke({"train", "--help"}).code, 0);
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"synth", "--mode", "separable", "--out", path("x"), "--bogus"}).code, 2);
  EXPECT_EQ(invoke({"synth", "--mode", "separable", "--out", path("x"), "--positive-rate", "1.5"}).code, 2);
  EXPECT_EQ(invoke({"synth", "--mode", "swirl", "--out", path("x")}).code, 2);
  EXPECT_EQ(invoke({"train"}).code, 2);
}

TEST_F(Cli, SynthIsDeterministicAndWritesSidecar) {
  const auto a = synth("a.cfds");
  const auto b = synth("b.cfds");
  EXPECT_EQ(io::read_file(a), io::read_file(b));
  const auto meta = json::parse(io::read_file(a + ".json"));
  EXPECT_EQ(meta["format"], "cfds");
  EXPECT_EQ(meta["n"], 120);
  EXPECT_EQ(meta["dims"]["image"], 4);
  const auto csv = synth("c.csv");
  EXPECT_EQ(json::parse(io::read_file(csv + ".json"))["format"], "csv");
  EXPECT_EQ(io::read_file(csv).rfind("label,", 0), 0u);
}

TEST_F(Cli, TrainEvalAndReport) {
  const auto data = synth("d.cfds");
  const auto out = path("run");
  auto r = invoke({"train", "--data", data, "--fusion", "concat", "--epochs", "3", "--n-seeds", "2", "--seed", "5",
                   "--out", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(r.out);
  EXPECT_EQ(report["strategy"], "concat");
  EXPECT_EQ(report["seeds"], json::array({5, 6}));
  EXPECT_EQ(report["per_seed"].size(), 2u);
  for (const char* k : {"auc_mean", "auc_std", "pauc_mean", "pauc_std", "f1_mean", "f1_std"})
    EXPECT_TRUE(report["aggregate"].contains(k)) << k;
  EXPECT_EQ(io::read_file(out + "/report.json"), r.out);
  EXPECT_TRUE(fs::exists(out + "/run_config.json"));
  const auto log = io::read_file(out + "/trainlog_seed5.csv");
  EXPECT_EQ(log.rfind("epoch,train_loss,val_loss,val_auc\n", 0), 0u);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);

  // Evaluating the saved model reproduces the training report's test metrics.
  r = invoke({"eval", "--model", out + "/model_seed5.cfmd", "--data", data, "--trace", path("trace.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = json::parse(r.out);
  EXPECT_EQ(ev["seed"], 5);
  EXPECT_DOUBLE_EQ(ev["auc"].get<double>(), report["per_seed"][0]["auc"].get<double>());
  const auto trace = io::read_file(path("trace.jsonl"));
  EXPECT_EQ(std::size_t(std::count(trace.begin(), trace.end(), '\n')),
            ev["n_pos"].get<std::size_t>() + ev["n_neg"].get<std::size_t>());

  r = invoke({"report", out + "/report.json", "--markdown"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("| concat | 2 |"), std::string::npos) << r.out;
  r = invoke({"report", out + "/report.json"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(json::parse(r.out)[0]["strategy"], "concat");
}

TEST_F(Cli, TrainFromConfigFile) {
  const auto data = synth("d.cfds");
  io::write_file_atomic(path("cfg.json"), R"({"data": ")" + data + R"(", "model": {"fusion": "capsnet", "n_primary": 2,
    "primary_dim": 4, "digit_dim": 4}, "train": {"epochs": 1, "patience": 0}, "eval": {"n_seeds": 1},
    "output": ")" + path("cfgrun") + R"("})");
  const auto r = invoke({"train", "--config", path("cfg.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["strategy"], "capsnet");
  EXPECT_TRUE(fs::exists(path("cfgrun/model_seed0.cfmd")));

  io::write_file_atomic(path("bad.json"), R"({"model": {"inputs": {"image": 4}}})");
  EXPECT_EQ(invoke({"train", "--config", path("bad.json"), "--data", data}).code, 2);
}

TEST_F(Cli, EvalRejectsMismatchedWidths) {
  const auto data = synth("d.cfds");
  ASSERT_EQ(invoke({"train", "--data", data, "--fusion", "add", "--epochs", "1", "--n-seeds", "1", "--out",
                    path("run")}).code,
            0);
  const auto other = synth("wide.cfds", "120", "6");
  const auto r = invoke({"eval", "--model", path("run/model_seed0.cfmd"), "--data", other});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("dimension"), std::string::npos);
  EXPECT_EQ(invoke({"eval", "--model", path("missing.cfmd"), "--data", data}).code, 1);
}

TEST_F(Cli, TinyDatasetIsDegenerate) {
  const auto r = invoke({"train", "--data", (kFixtures / "tiny_dataset.csv").string(), "--epochs", "1"});
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST_F(Cli, SelectCategoriesOnNewsMatrix) {
  const auto r = invoke({"select-categories", "--matrix", (kFixtures / "news_similarity.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_DOUBLE_EQ(j["max_pair"]["similarity"].get<double>(), 0.544);
  EXPECT_DOUBLE_EQ(j["min_pair"]["similarity"].get<double>(), -0.060);
  EXPECT_EQ(j["selected"]["anchor_distinct"]["first"], "Mortgage");
  EXPECT_EQ(j["selected"]["anchor_distinct"]["second"], "Netherlands");
  EXPECT_EQ(j["selected"]["min_pair"]["first"], "InterestRate");
  EXPECT_EQ(j["categories"].size(), 6u);

  EXPECT_EQ(invoke({"select-categories", "--matrix", (kFixtures / "asymmetric_similarity.csv").string()}).code, 5);
  EXPECT_EQ(invoke({"select-categories"}).code, 2);
}

TEST_F(Cli, SelectCategoriesFromEmbeddings) {
  io::write_file_atomic(path("emb.csv"), "category,x,y\nA,1,0\nB,0.6,0.8\nC,-1,0\n");
  const auto r = invoke({"select-categories", "--embeddings", path("emb.csv"), "--out", path("sel.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(io::read_file(path("sel.json")));
  EXPECT_DOUBLE_EQ(j["max_pair"]["similarity"].get<double>(), 0.6);
  EXPECT_DOUBLE_EQ(j["min_pair"]["similarity"].get<double>(), -1.0);
}

TEST_F(Cli, SentimentAverages) {
  const auto r = invoke({"sentiment", "--table", (kFixtures / "news_sentiment.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_NEAR(j["Interest rate"].get<double>(), 0.287, 1e-12);
  EXPECT_NEAR(j["Unemployment"].get<double>(), -0.391, 1e-12);
}

TEST(CliHelpers, ReportJsonAggregatesSampleStd) {
  std::vector<SeedRun> runs(2);
  runs[0].seed = 1;
  runs[0].log.test.auc = 0.8;
  runs[0].log.test.f1 = 0.5;
  runs[1].seed = 2;
  runs[1].log.test.auc = 0.9;
  runs[1].log.test.f1 = 0.7;
  const auto j = json::parse(cli::report_json(FusionStrategy::CapsNet, 0.1, runs));
  EXPECT_EQ(j["strategy"], "capsnet");
  EXPECT_NEAR(j["aggregate"]["auc_mean"].get<double>(), 0.85, 1e-12);
  EXPECT_NEAR(j["aggregate"]["auc_std"].get<double>(), std::sqrt(0.005), 1e-12);
  EXPECT_NEAR(j["aggregate"]["f1_std"].get<double>(), std::sqrt(0.02), 1e-12);

  const auto table = cli::markdown_table({j.dump()});
  EXPECT_NE(table.find("| capsnet | 2 | 0.850 ± 0.071 |"), std::string::npos) << table;
  EXPECT_THROW(cli::markdown_table({"{"}), FormatError);
}

TEST(CliHelpers, TrainLogCsv) {
  TrainLog log;
  log.epochs.push_back({1, 0.5, 0.25, 0.75});
  EXPECT_EQ(cli::train_log_csv(log), "epoch,train_loss,val_loss,val_auc\n1,0.5,0.25,0.75\n");
}

TEST(CliHelpers, ThreadBudgetHonoursEnvironment) {
  ::setenv("CAPSFUSE_THREADS", "3", 1);
  EXPECT_EQ(cli::thread_budget(), 3u);
  ::setenv("CAPSFUSE_THREADS", "zero", 1);
  EXPECT_GE(cli::thread_budget(), 1u);
  ::setenv("CAPSFUSE_THREADS", "0", 1);
  EXPECT_GE(cli::thread_budget(), 1u);
  ::unsetenv("CAPSFUSE_THREADS");
}
