#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <thread>

#include "capsfuse/config.hpp"
#include "capsfuse/errors.hpp"
#include "capsfuse/io.hpp"
#include "capsfuse/model_io.hpp"
#include "capsfuse/synthetic.hpp"
#include "capsfuse/text_analysis.hpp"
#include "capsfuse/trace.hpp"

namespace capsfuse::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Raised by select-categories when the matrix breaks its invariants.
class MatrixError : public Error {
 public:
  using Error::Error;
};

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::to_string(v);
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    io::write_file_atomic(path, text);
  }
}

ojson pair_json(const CategoryPair& p) {
  return {{"first", p.first}, {"second", p.second}, {"similarity", p.similarity}};
}

ojson metric_json(const metrics::MetricReport& r) {
  return {{"auc", r.auc},
          {"pauc_raw", r.pauc_raw},
          {"pauc_std", r.pauc_standardized},
          {"fpr_max", r.fpr_max},
          {"f1", r.f1},
          {"threshold", r.threshold},
          {"confusion", {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}}},
          {"n_pos", r.n_pos},
          {"n_neg", r.n_neg}};
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string mode;
  std::string out;
  std::string noisy_role = "image";
  SynthSpec spec;
  std::size_t text_dim = 32, image_dim = 32, numeric_dim = 6;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* cmd = app.add_subcommand("synth", "Generate a synthetic multimodal dataset plus a JSON sidecar");
  cmd->add_option("--mode", a.mode, "separable | redundant | xor (xor_cross_modal) | noisy (noisy_modality)")->required();
  cmd->add_option("--n", a.spec.n, "Number of samples (>= 20)")->capture_default_str();
  cmd->add_option("--seed", a.spec.seed, "Generator seed")->capture_default_str();
  cmd->add_option("--out", a.out, "Dataset path; a .csv extension selects CSV, anything else the binary format")
      ->required();
  cmd->add_option("--positive-rate", a.spec.positive_rate, "Bernoulli rate of label 1")->capture_default_str();
  cmd->add_option("--noise-sigma", a.spec.noise_sigma, "Noise std on informative channels")->capture_default_str();
  cmd->add_option("--offset-norm", a.spec.offset_norm, "Length of each modality's fixed mean vector")
      ->capture_default_str();
  cmd->add_option("--noisy-role", a.noisy_role, "Modality replaced by noise in noisy mode")->capture_default_str();
  cmd->add_option("--text-dim", a.text_dim, "Width of text_a and text_b")->capture_default_str();
  cmd->add_option("--image-dim", a.image_dim, "Width of image")->capture_default_str();
  cmd->add_option("--numeric-dim", a.numeric_dim, "Width of the raw numeric features")->capture_default_str();
}

int cmd_synth(SynthArgs& a, std::ostream& out) {
  a.spec.mode = parse_synth_mode(a.mode);
  a.spec.noisy_role = parse_role(a.noisy_role);
  a.spec.dims = {a.text_dim, a.text_dim, a.image_dim, a.numeric_dim};
  const auto ds = gen_synthetic(a.spec);
  if (auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_dataset(ds, a.out);

  std::size_t positives = 0;
  for (auto y : ds.labels()) positives += y;
  const ojson sidecar = {
      {"format", fs::path(a.out).extension() == ".csv" ? "csv" : "cfds"},
      {"mode", std::string(to_string(a.spec.mode))},
      {"n", a.spec.n},
      {"seed", a.spec.seed},
      {"positive_rate", a.spec.positive_rate},
      {"noise_sigma", a.spec.noise_sigma},
      {"offset_norm", a.spec.offset_norm},
      {"noisy_role", std::string(to_string(a.spec.noisy_role))},
      {"dims", {{"text_a", a.text_dim}, {"text_b", a.text_dim}, {"image", a.image_dim}, {"numeric", a.numeric_dim}}},
      {"n_positive", positives},
  };
  io::write_file_atomic(a.out + ".json", sidecar.dump(2) + "\n");
  out << "wrote " << a.out << " (" << ds.size() << " samples, " << positives << " positive)\n";
  return kOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, fusion, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_seeds, epochs, restarts;
  std::optional<double> fpr_max;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train one fusion strategy over several seeds and write a report");
  cmd->add_option("--config", a.config, "RunConfig JSON (see below); flags override it");
  cmd->add_option("--data", a.data, "Dataset path (overrides data.path)");
  cmd->add_option("--fusion", a.fusion, "capsnet | add | concat | xattn (overrides model.fusion)");
  cmd->add_option("--seed", a.seed, "First seed (overrides train.seed)");
  cmd->add_option("--n-seeds", a.n_seeds, "Number of consecutive seeds (overrides eval.n_seeds)");
  cmd->add_option("--fpr-max", a.fpr_max, "Upper FPR of the partial-AUC band (overrides eval.fpr_max)");
  cmd->add_option("--epochs", a.epochs, "Overrides train.epochs");
  cmd->add_option("--restarts", a.restarts, "Overrides train.restarts");
  cmd->add_option("--out", a.out, "Output directory (overrides output.directory)");
  cmd->footer("Config keys and their defaults:\n" + to_json(RunConfig{}) +
              "\ntrain.class_weights is \"auto\" or [w0, w1]; train.optimizer is adam | sgd; train.loss is "
              "cross_entropy | margin.\nCAPSFUSE_THREADS caps how many seeds train concurrently.");
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.data.empty()) cfg.data = a.data;
  if (!a.fusion.empty()) cfg.model.strategy = parse_fusion_strategy(a.fusion);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.n_seeds) cfg.eval.n_seeds = *a.n_seeds;
  if (a.fpr_max) cfg.eval.fpr_max = *a.fpr_max;
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.restarts) cfg.train.restarts = *a.restarts;
  if (!a.out.empty()) cfg.output = a.out;
  if (cfg.data.empty()) throw ConfigError("no dataset given (use --data or data.path)");

  const auto ds = read_dataset(cfg.data);
  cfg.model.inputs = ds.input_dims();
  cfg.validate();

  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.eval.n_seeds; ++i) seeds.push_back(cfg.train.seed + i);
  const auto runs = train_seeds(ds, cfg.model, cfg.train, seeds, thread_budget(), cfg.eval.fpr_max);

  fs::create_directories(cfg.output);
  for (const auto& run : runs) {
    auto train_cfg = cfg.train;
    train_cfg.seed = run.seed;
    const std::string tag = "seed" + std::to_string(run.seed);
    write_model(*run.model, train_cfg, cfg.output / ("model_" + tag + ".cfmd"));
    io::write_file_atomic(cfg.output / ("trainlog_" + tag + ".csv"), train_log_csv(run.log));
  }
  io::write_file_atomic(cfg.output / "run_config.json", to_json(cfg) + "\n");
  const auto report = report_json(cfg.model.strategy, cfg.eval.fpr_max, runs);
  io::write_file_atomic(cfg.output / "report.json", report);
  out << report;
  return kOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string model, data, out, trace;
  double fpr_max = 0.10;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval", "Evaluate a saved model on the test split it was trained with");
  cmd->add_option("--model", a.model, "Model file written by train")->required();
  cmd->add_option("--data", a.data, "Dataset the model was trained on")->required();
  cmd->add_option("--fpr-max", a.fpr_max, "Upper FPR of the partial-AUC band")->capture_default_str();
  cmd->add_option("--out", a.out, "Report JSON path (default: stdout)");
  cmd->add_option("--trace", a.trace, "Write per-sample routing traces of the test split as JSON lines");
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  auto loaded = read_model(a.model);
  const auto ds = read_dataset(a.data);
  if (loaded.model->config().inputs != ds.input_dims())
    throw DimensionError("model expects modality widths that differ from the dataset's");
  const auto split = stratified_split(ds.int_labels(), loaded.train.split, loaded.train.seed);
  const auto report = evaluate(*loaded.model, ds, split, a.fpr_max);
  ojson j = {{"strategy", std::string(to_string(loaded.model->strategy()))}, {"seed", loaded.train.seed}};
  j.update(metric_json(report));
  emit(j.dump(2) + "\n", a.out, out);
  if (!a.trace.empty()) emit(to_jsonl(collect_trace(*loaded.model, ds, split.test)), a.trace, out);
  return kOk;
}

// --- select-categories / sentiment -------------------------------------------

struct SelectArgs {
  std::string matrix, embeddings, out;
};

void add_select(CLI::App& app, SelectArgs& a) {
  auto* cmd = app.add_subcommand("select-categories", "Rank news categories by cosine similarity");
  auto* m = cmd->add_option("--matrix", a.matrix, "Similarity matrix CSV");
  auto* e = cmd->add_option("--embeddings", a.embeddings, "Category embeddings CSV");
  m->excludes(e);
  cmd->add_option("--out", a.out, "Report JSON path (default: stdout)");
}

int cmd_select(const SelectArgs& a, std::ostream& out) {
  if (a.matrix.empty() == a.embeddings.empty()) throw ConfigError("give exactly one of --matrix or --embeddings");
  SimilarityMatrix m;
  try {
    m = a.matrix.empty() ? cosine_matrix(parse_embeddings_csv(io::read_file(a.embeddings)))
                         : parse_similarity_csv(io::read_file(a.matrix));
    m.validate();
  } catch (const ValidationError& e) {
    throw MatrixError(e.what());
  }
  const auto anchor = select_categories(m, SelectionRule::AnchorDistinct);
  const auto minimum = select_categories(m, SelectionRule::MinPair);
  ojson means = ojson::array();
  for (const auto& [name, v] : anchor.mean_similarity) means.push_back({{"category", name}, {"mean", v}});
  const ojson j = {
      {"categories", m.names},
      {"mean_similarity", means},
      {"max_pair", pair_json(anchor.max_pair)},
      {"min_pair", pair_json(anchor.min_pair)},
      {"selected", {{"anchor_distinct", pair_json(anchor.selected)}, {"min_pair", pair_json(minimum.selected)}}},
  };
  emit(j.dump(2) + "\n", a.out, out);
  return kOk;
}

struct SentimentArgs {
  std::string table, out;
};

void add_sentiment(CLI::App& app, SentimentArgs& a) {
  auto* cmd = app.add_subcommand("sentiment", "Average per-document sentiment scores by category");
  cmd->add_option("--table", a.table, "CSV with one column per category")->required();
  cmd->add_option("--out", a.out, "JSON path (default: stdout)");
}

int cmd_sentiment(const SentimentArgs& a, std::ostream& out) {
  ojson j = ojson::object();
  for (const auto& [name, mean] : aggregate_sentiment(parse_sentiment_csv(io::read_file(a.table)))) j[name] = mean;
  emit(j.dump(2) + "\n", a.out, out);
  return kOk;
}

// --- report -------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> files;
  bool markdown = false;
  std::string out;
};

void add_report(CLI::App& app, ReportArgs& a) {
  auto* cmd = app.add_subcommand("report", "Combine training reports");
  cmd->add_option("reports", a.files, "report.json files")->required();
  cmd->add_flag("--markdown", a.markdown, "Render a comparison table instead of JSON");
  cmd->add_option("--out", a.out, "Output path (default: stdout)");
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<std::string> docs;
  for (const auto& f : a.files) docs.push_back(io::read_file(f));
  if (a.markdown) {
    emit(markdown_table(docs), a.out, out);
    return kOk;
  }
  ojson all = ojson::array();
  for (const auto& d : docs) {
    const auto j = ojson::parse(d);
    all.push_back({{"strategy", j.at("strategy")}, {"aggregate", j.at("aggregate")}});
  }
  emit(all.dump(2) + "\n", a.out, out);
  return kOk;
}

}  // namespace

std::size_t thread_budget() {
  if (const char* env = std::getenv("CAPSFUSE_THREADS")) {
    std::size_t n = 0;
    const std::string_view s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec == std::errc{} && ptr == s.data() + s.size() && n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string report_json(FusionStrategy strategy, double fpr_max, const std::vector<SeedRun>& runs) {
  ojson per_seed = ojson::array();
  ojson seeds = ojson::array();
  std::vector<double> auc, pauc, f1;
  for (const auto& r : runs) {
    const auto& t = r.log.test;
    seeds.push_back(r.seed);
    per_seed.push_back({{"seed", r.seed}, {"auc", t.auc}, {"pauc_std", t.pauc_standardized}, {"f1", t.f1},
                        {"threshold", t.threshold}});
    auc.push_back(t.auc);
    pauc.push_back(t.pauc_standardized);
    f1.push_back(t.f1);
  }
  const auto a = mean_std(auc), p = mean_std(pauc), f = mean_std(f1);
  const ojson j = {
      {"strategy", std::string(to_string(strategy))},
      {"fpr_max", fpr_max},
      {"seeds", seeds},
      {"per_seed", per_seed},
      {"aggregate",
       {{"auc_mean", a.mean}, {"auc_std", a.std}, {"pauc_mean", p.mean}, {"pauc_std", p.std}, {"f1_mean", f.mean},
        {"f1_std", f.std}}},
  };
  return j.dump(2) + "\n";
}

std::string train_log_csv(const TrainLog& log) {
  std::string s = "epoch,train_loss,val_loss,val_auc\n";
  for (const auto& e : log.epochs)
    s += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_loss) + "," + fmt(e.val_auc) + "\n";
  return s;
}

std::string markdown_table(const std::vector<std::string>& report_documents) {
  auto cell = [](const ojson& agg, const char* mean, const char* std) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f ± %.3f", agg.at(mean).get<double>(), agg.at(std).get<double>());
    return std::string(buf);
  };
  std::string s = "| Fusion strategy | Seeds | AUC | pAUC (std.) | F1 |\n|---|---|---|---|---|\n";
  for (const auto& doc : report_documents) {
    ojson j;
    try {
      j = ojson::parse(doc);
    } catch (const ojson::parse_error&) {
      throw FormatError("report is not valid JSON");
    }
    if (!j.contains("aggregate") || !j.contains("strategy")) throw FormatError("report lacks strategy/aggregate");
    const auto& agg = j.at("aggregate");
    s += "| " + j.at("strategy").get<std::string>() + " | " + std::to_string(j.value("seeds", ojson::array()).size()) +
         " | " + cell(agg, "auc_mean", "auc_std") + " | " + cell(agg, "pauc_mean", "pauc_std") + " | " +
         cell(agg, "f1_mean", "f1_std") + " |\n";
  }
  return s;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FusionCapsNet multimodal fusion: synthetic data, training, evaluation and reporting", "capsfuse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "capsfuse 0.1.0");
  app.footer(
      "Exit codes: 0 ok, 1 I/O or format error, 2 usage, 3 dimension mismatch, 4 degenerate data, 5 invalid "
      "matrix.");

  SynthArgs synth;
  TrainArgs train_args;
  EvalArgs eval;
  SelectArgs select;
  SentimentArgs sentiment;
  ReportArgs report;
  add_synth(app, synth);
  add_train(app, train_args);
  add_eval(app, eval);
  add_select(app, select);
  add_sentiment(app, sentiment);
  add_report(app, report);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const auto& name = app.get_subcommands().front()->get_name();
    if (name == "synth") return cmd_synth(synth, out);
    if (name == "train") return cmd_train(train_args, out);
    if (name == "eval") return cmd_eval(eval, out);
    if (name == "select-categories") return cmd_select(select, out);
    if (name == "sentiment") return cmd_sentiment(sentiment, out);
    return cmd_report(report, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << "\n";
    return kDimension;
  } catch (const MatrixError& e) {
    err << "invalid matrix: " << e.what() << "\n";
    return kInvalidMatrix;
  } catch (const UndefinedMetricError& e) {
    err << "degenerate data: " << e.what() << "\n";
    return kDegenerate;
  } catch (const ContractError& e) {
    err << "degenerate data: " << e.what() << "\n";
    return kDegenerate;
  } catch (const ValidationError& e) {
    err << "invalid data: " << e.what() << "\n";
    return kDegenerate;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace capsfuse::cli
