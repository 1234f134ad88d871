#include "capsfuse/config.hpp"

#include <algorithm>
#include <initializer_list>

#include "capsfuse/errors.hpp"
#include "capsfuse/io.hpp"
#include "json_config.hpp"

namespace capsfuse {

using nlohmann::json;

namespace {

void require_object(const json& j, std::string_view section) {
  if (!j.is_object()) throw ConfigError("config section '" + std::string(section) + "' must be an object");
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view section) {
  require_object(j, section);
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in config section '" + std::string(section) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError("");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + std::string(section) + "." + key + "' has the wrong type");
  }
}

}  // namespace

namespace detail {

json model_json(const ModelConfig& c, bool with_inputs) {
  json j = {
      {"fusion", std::string(to_string(c.strategy))},
      {"n_classes", c.n_classes},
      {"n_primary", c.n_primary},
      {"primary_dim", c.primary_dim},
      {"digit_dim", c.digit_dim},
      {"routing_iters", c.routing_iters},
      {"apply_squash_primary", c.apply_squash_primary},
      {"share_text_weights", c.share_text_weights},
      {"numeric_hidden", c.numeric_hidden},
      {"numeric_embed_dim", c.numeric_embed_dim},
      {"d_f", c.fused_dim},
      {"classifier_hidden", c.classifier_hidden},
  };
  if (with_inputs) {
    j["inputs"] = {{"text_a", c.inputs.text_a},
                   {"text_b", c.inputs.text_b},
                   {"image", c.inputs.image},
                   {"numeric", c.inputs.numeric}};
  }
  return j;
}

ModelConfig model_from_json(const json& j) {
  check_keys(j,
             {"fusion", "n_classes", "n_primary", "primary_dim", "digit_dim", "routing_iters",
              "apply_squash_primary", "share_text_weights", "numeric_hidden", "numeric_embed_dim", "d_f",
              "classifier_hidden", "inputs"},
             "model");
  ModelConfig c;
  if (auto it = j.find("fusion"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config key 'model.fusion' must be a string");
    c.strategy = parse_fusion_strategy(it->get<std::string>());
  }
  read(j, "n_classes", c.n_classes, "model");
  read(j, "n_primary", c.n_primary, "model");
  read(j, "primary_dim", c.primary_dim, "model");
  read(j, "digit_dim", c.digit_dim, "model");
  read(j, "routing_iters", c.routing_iters, "model");
  read(j, "apply_squash_primary", c.apply_squash_primary, "model");
  read(j, "share_text_weights", c.share_text_weights, "model");
  if (auto it = j.find("numeric_hidden"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("config key 'model.numeric_hidden' must be an array");
    c.numeric_hidden.clear();
    for (const auto& v : *it) {
      if (!v.is_number_unsigned()) throw ConfigError("model.numeric_hidden entries must be positive integers");
      c.numeric_hidden.push_back(v.get<std::size_t>());
    }
  }
  read(j, "numeric_embed_dim", c.numeric_embed_dim, "model");
  read(j, "d_f", c.fused_dim, "model");
  read(j, "classifier_hidden", c.classifier_hidden, "model");
  if (auto it = j.find("inputs"); it != j.end()) {
    check_keys(*it, {"text_a", "text_b", "image", "numeric"}, "model.inputs");
    read(*it, "text_a", c.inputs.text_a, "model.inputs");
    read(*it, "text_b", c.inputs.text_b, "model.inputs");
    read(*it, "image", c.inputs.image, "model.inputs");
    read(*it, "numeric", c.inputs.numeric, "model.inputs");
  }
  return c;
}

json train_json(const TrainConfig& c) {
  json j = {
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"optimizer", std::string(to_string(c.optimizer))},
      {"loss", std::string(to_string(c.loss))},
      {"seed", c.seed},
      {"patience", c.patience},
      {"restarts", c.restarts},
      {"split", {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}}},
  };
  if (c.class_weights)
    j["class_weights"] = {(*c.class_weights)[0], (*c.class_weights)[1]};
  else
    j["class_weights"] = "auto";
  return j;
}

TrainConfig train_from_json(const json& j) {
  check_keys(j,
             {"epochs", "batch_size", "learning_rate", "optimizer", "loss", "class_weights", "seed", "patience",
              "restarts", "split"},
             "train");
  TrainConfig c;
  read(j, "epochs", c.epochs, "train");
  read(j, "batch_size", c.batch_size, "train");
  read(j, "learning_rate", c.learning_rate, "train");
  read(j, "seed", c.seed, "train");
  read(j, "patience", c.patience, "train");
  read(j, "restarts", c.restarts, "train");
  if (auto it = j.find("optimizer"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config key 'train.optimizer' must be a string");
    c.optimizer = parse_optimizer(it->get<std::string>());
  }
  if (auto it = j.find("loss"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config key 'train.loss' must be a string");
    c.loss = parse_loss(it->get<std::string>());
  }
  if (auto it = j.find("class_weights"); it != j.end()) {
    if (it->is_string() && it->get<std::string>() == "auto") {
      c.class_weights.reset();
    } else if (it->is_array() && it->size() == 2 && (*it)[0].is_number() && (*it)[1].is_number()) {
      c.class_weights = std::array<double, 2>{(*it)[0].get<double>(), (*it)[1].get<double>()};
    } else {
      throw ConfigError("train.class_weights must be \"auto\" or a pair of numbers");
    }
  }
  if (auto it = j.find("split"); it != j.end()) {
    check_keys(*it, {"train", "val", "test"}, "train.split");
    read(*it, "train", c.split.train, "train.split");
    read(*it, "val", c.split.val, "train.split");
    read(*it, "test", c.split.test, "train.split");
  }
  return c;
}

}  // namespace detail

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (!(eval.fpr_max > 0.0 && eval.fpr_max <= 1.0)) throw ConfigError("eval.fpr_max must lie in (0, 1]");
  if (eval.n_seeds < 1) throw ConfigError("eval.n_seeds must be >= 1");
}

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, {"data", "model", "train", "eval", "output"}, "<root>");
  RunConfig c;
  if (auto it = j.find("data"); it != j.end()) {
    if (it->is_string()) {
      c.data = it->get<std::string>();
    } else {
      check_keys(*it, {"path"}, "data");
      if (auto p = it->find("path"); p != it->end()) {
        if (!p->is_string()) throw ConfigError("config key 'data.path' must be a string");
        c.data = p->get<std::string>();
      }
    }
  }
  if (auto it = j.find("model"); it != j.end()) {
    c.model = detail::model_from_json(*it);
    if (it->contains("inputs")) throw ConfigError("model.inputs is taken from the dataset and may not be set");
  }
  if (auto it = j.find("train"); it != j.end()) c.train = detail::train_from_json(*it);
  if (auto it = j.find("eval"); it != j.end()) {
    check_keys(*it, {"fpr_max", "n_seeds"}, "eval");
    read(*it, "fpr_max", c.eval.fpr_max, "eval");
    read(*it, "n_seeds", c.eval.n_seeds, "eval");
  }
  if (auto it = j.find("output"); it != j.end()) {
    if (it->is_string()) {
      c.output = it->get<std::string>();
    } else {
      check_keys(*it, {"directory"}, "output");
      if (auto p = it->find("directory"); p != it->end()) {
        if (!p->is_string()) throw ConfigError("config key 'output.directory' must be a string");
        c.output = p->get<std::string>();
      }
    }
  }
  if (c.eval.n_seeds < 1) throw ConfigError("eval.n_seeds must be >= 1");
  if (!(c.eval.fpr_max > 0.0 && c.eval.fpr_max <= 1.0)) throw ConfigError("eval.fpr_max must lie in (0, 1]");
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(io::read_file(path)); }

std::string to_json(const RunConfig& c) {
  json j = {
      {"data", {{"path", c.data.string()}}},
      {"model", detail::model_json(c.model, false)},
      {"train", detail::train_json(c.train)},
      {"eval", {{"fpr_max", c.eval.fpr_max}, {"n_seeds", c.eval.n_seeds}}},
      {"output", {{"directory", c.output.string()}}},
  };
  return j.dump(2);
}

std::string model_config_to_json(const ModelConfig& config) { return detail::model_json(config, true).dump(); }

ModelConfig model_config_from_json(std::string_view json_text) {
  try {
    return detail::model_from_json(json::parse(json_text));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
}

std::string train_config_to_json(const TrainConfig& config) { return detail::train_json(config).dump(); }

TrainConfig train_config_from_json(std::string_view json_text) {
  try {
    return detail::train_from_json(json::parse(json_text));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
}

}  // namespace capsfuse
