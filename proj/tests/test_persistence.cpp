#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "capsfuse/config.hpp"
#include "capsfuse/errors.hpp"
#include "capsfuse/model_io.hpp"
#include "capsfuse/synthetic.hpp"
#include "capsfuse/trace.hpp"

using namespace capsfuse;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(FusionStrategy s) {
  ModelConfig c;
  c.strategy = s;
  c.inputs = {4, 4, 5, 3};
  c.n_primary = 2;
  c.primary_dim = 3;
  c.digit_dim = 3;
  c.numeric_hidden = {4};
  c.numeric_embed_dim = 3;
  c.fused_dim = 4;
  c.classifier_hidden = 3;
  return c;
}

MultimodalDataset small_data() {
  SynthSpec s;
  s.n = 60;
  s.dims = {4, 4, 5, 3};
  s.positive_rate = 0.4;
  s.seed = 2;
  return gen_synthetic(s);
}

}  // namespace

TEST(RunConfig, ParsesEverySection) {
  const auto c = parse_run_config(R"({
    "data": {"path": "d.cfds"},
    "model": {"fusion": "xattn", "n_primary": 4, "routing_iters": 2, "apply_squash_primary": false,
              "share_text_weights": true, "numeric_hidden": [16], "d_f": 32},
    "train": {"epochs": 7, "batch_size": 8, "learning_rate": 0.01, "optimizer": "sgd", "loss": "margin",
              "class_weights": [1, 3.5], "seed": 9, "patience": 0, "restarts": 2,
              "split": {"train": 0.6, "val": 0.2, "test": 0.2}},
    "eval": {"fpr_max": 0.2, "n_seeds": 3},
    "output": {"directory": "runs/x"}
  })");
  EXPECT_EQ(c.data, "d.cfds");
  EXPECT_EQ(c.model.strategy, FusionStrategy::CrossAttention);
  EXPECT_EQ(c.model.n_primary, 4u);
  EXPECT_EQ(c.model.routing_iters, 2u);
  EXPECT_FALSE(c.model.apply_squash_primary);
  EXPECT_TRUE(c.model.share_text_weights);
  EXPECT_EQ(c.model.numeric_hidden, (std::vector<std::size_t>{16}));
  EXPECT_EQ(c.model.fused_dim, 32u);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.train.optimizer, OptimizerKind::Sgd);
  EXPECT_EQ(c.train.loss, LossKind::Margin);
  ASSERT_TRUE(c.train.class_weights.has_value());
  EXPECT_EQ((*c.train.class_weights)[1], 3.5);
  EXPECT_EQ(c.train.restarts, 2u);
  EXPECT_EQ(c.train.split.train, 0.6);
  EXPECT_EQ(c.eval.fpr_max, 0.2);
  EXPECT_EQ(c.eval.n_seeds, 3u);
  EXPECT_EQ(c.output, "runs/x");
}

TEST(RunConfig, DefaultsAndShorthands) {
  const auto c = parse_run_config(R"({"data": "x.csv", "output": "o"})");
  EXPECT_EQ(c.data, "x.csv");
  EXPECT_EQ(c.output, "o");
  EXPECT_EQ(c.model, ModelConfig{});
  EXPECT_EQ(c.train, TrainConfig{});
  EXPECT_EQ(c.eval, EvalConfig{});
}

TEST(RunConfig, RoundTripsThroughJson) {
  RunConfig c;
  c.data = "a/b.cfds";
  c.model.strategy = FusionStrategy::Concatenation;
  c.model.routing_iters = 5;
  c.train.class_weights = std::array<double, 2>{0.25, 4.0};
  c.train.learning_rate = 0.0123;
  c.eval.n_seeds = 2;
  c.output = "z";
  EXPECT_EQ(parse_run_config(to_json(c)), c);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_run_config(R"({"modle": {}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"routing_iter": 3}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"routing_iters": "3"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"routing_iters": -1}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"apply_squash_primary": 1}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"fusion": "sum"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"inputs": {"image": 3}}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"class_weights": "balanced"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"split": {"train": 0.9, "val": 0.2, "test": 0.1}}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"eval": {"fpr_max": 0}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"eval": {"n_seeds": 0}})"), ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
}

TEST(ModelConfigJson, CarriesInputWidths) {
  auto c = small_model(FusionStrategy::CapsNet);
  const auto text = model_config_to_json(c);
  EXPECT_EQ(json::parse(text)["inputs"]["image"], 5);
  EXPECT_EQ(model_config_from_json(text), c);
  TrainConfig t;
  t.restarts = 4;
  EXPECT_EQ(train_config_from_json(train_config_to_json(t)), t);
}

class ModelFiles : public ::testing::TestWithParam<FusionStrategy> {};

TEST_P(ModelFiles, RoundTripPreservesParametersAndPredictions) {
  const auto mc = small_model(GetParam());
  auto model = make_model(mc, 11);
  TrainConfig t;
  t.seed = 7;
  t.epochs = 3;
  const auto bytes = encode_model(*model, t);
  EXPECT_EQ(bytes.substr(0, 4), "CFMD");
  auto loaded = decode_model(bytes);
  EXPECT_EQ(loaded.model->config(), mc);
  EXPECT_EQ(loaded.train, t);
  EXPECT_EQ(loaded.model->snapshot(), model->snapshot());
  EXPECT_EQ(encode_model(*loaded.model, loaded.train), bytes);

  const auto ds = small_data();
  const std::vector<std::size_t> idx{0, 5, 9};
  EXPECT_EQ(loaded.model->predict(ds.batch(idx)), model->predict(ds.batch(idx)));
}

INSTANTIATE_TEST_SUITE_P(All, ModelFiles,
                         ::testing::Values(FusionStrategy::CapsNet, FusionStrategy::Addition,
                                           FusionStrategy::Concatenation, FusionStrategy::CrossAttention),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(ModelFiles, CorruptionIsFormatError) {
  auto model = make_model(small_model(FusionStrategy::Addition), 1);
  const auto bytes = encode_model(*model, {});
  for (std::size_t cut : {0ul, 6ul, 20ul, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(decode_model(bytes.substr(0, cut)), FormatError) << cut;
  EXPECT_THROW(decode_model(bytes + '\0'), FormatError);
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_model(bad), FormatError);
}

TEST(ModelFiles, WriteAndReadFromDisk) {
  auto model = make_model(small_model(FusionStrategy::CapsNet), 4);
  const auto dir = fs::temp_directory_path() / "capsfuse_test_persistence";
  fs::create_directories(dir);
  write_model(*model, {}, dir / "m.cfmd");
  EXPECT_EQ(read_model(dir / "m.cfmd").model->snapshot(), model->snapshot());
  EXPECT_THROW(read_model(dir / "missing.cfmd"), Error);
}

TEST(Trace, CapsNetRecordsHaveEveryField) {
  const auto ds = small_data();
  auto model = make_model(small_model(FusionStrategy::CapsNet), 3);
  const std::vector<std::size_t> idx{4, 2, 8};
  const auto trace = collect_trace(*model, ds, idx);
  ASSERT_EQ(trace.size(), 3u);
  EXPECT_EQ(trace[0].index, 4u);
  const auto text = to_jsonl(trace);
  std::istringstream lines(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    EXPECT_EQ(j["index"], idx[n]);
    EXPECT_EQ(j["label"], ds.labels()[idx[n]]);
    for (const char* role : {"text_a", "text_b", "image", "numeric"}) {
      const auto& m = j["routing"][role];
      ASSERT_EQ(m.size(), 2u);
      for (const auto& row : m) EXPECT_NEAR(row[0].get<double>() + row[1].get<double>(), 1.0, 1e-12);
    }
    for (const char* key : {"text", "image", "numeric"}) {
      EXPECT_EQ(j["confidence"][key].size(), 2u);
      EXPECT_TRUE(j["omega"].contains(key));
    }
    EXPECT_EQ(j["f"].size(), 6u);
    EXPECT_EQ(j["g"].size(), 2u);
    EXPECT_EQ(j["probs"].size(), 2u);
    ++n;
  }
  EXPECT_EQ(n, 3u);
  // Key order is stable for diffing.
  EXPECT_EQ(text.find("{\"index\""), 0u);
}

TEST(Trace, BaselineRecordsCarryProbabilitiesOnly) {
  const auto ds = small_data();
  auto model = make_model(small_model(FusionStrategy::Addition), 3);
  const std::vector<std::size_t> idx{1};
  const auto j = json::parse(to_json_line(collect_trace(*model, ds, idx)[0]));
  EXPECT_TRUE(j["routing"].empty());
  EXPECT_FALSE(j.contains("confidence"));
  EXPECT_EQ(j["probs"].size(), 2u);
}
