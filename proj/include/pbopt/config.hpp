// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_CONFIG_HPP_
#define PBOPT_CONFIG_HPP_

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbopt/dataset.hpp"
#include "pbopt/optim.hpp"
#include "pbopt/pipeline.hpp"

namespace pbopt::harness {

using json = nlohmann::json;

/// Configuration errors carry the offending key so misconfigurations are
/// directly actionable.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ModelConfig {
  std::vector<int> hidden;
  std::string activation = "relu";
  std::string loss = "softmax_cross_entropy";
};

struct PipelineConfig {
  std::string schedule = "pipelined_backprop";
  int micro_batch = 1;
  /// Unset: canonical stage delays. A single value applies uniformly.
  std::optional<std::vector<int>> delays;
  std::string consistency = "inconsistent";
};

struct ExperimentConfig {
  std::string name = "run";
  /// train = sequential SGDM; pb = pipelined backpropagation;
  /// delay = delayed-gradient simulation without a pipeline.
  std::string mode = "pb";
  data::DatasetSpec dataset;
  ModelConfig model;
  optim::OptimizerConfig optimizer;
  /// Present when optimizer.eta was derived from effective_step * (1 - m).
  std::optional<double> effective_step;
  PipelineConfig pipeline;
  long steps = 0;
  long eval_every = 0;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  bool shuffle = true;
};

namespace detail {

inline void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("config: missing key '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for key '" + std::string(key) + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for key '" + std::string(key) + "' in " + where);
  }
}

inline std::optional<double> opt_double(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) {
    throw ConfigError("config: key '" + std::string(key) + "' in " + where + " must be a number");
  }
  return j.at(key).get<double>();
}

inline data::DatasetKind dataset_kind(const std::string& s) {
  if (s == "gaussian_blobs") return data::DatasetKind::kGaussianBlobs;
  if (s == "two_spirals") return data::DatasetKind::kTwoSpirals;
  if (s == "quadratic_regression") return data::DatasetKind::kQuadraticRegression;
  if (s == "csv_file") return data::DatasetKind::kCsvFile;
  throw ConfigError("config: unknown dataset.kind '" + s + "'");
}

inline std::string dataset_kind_name(data::DatasetKind k) {
  switch (k) {
    case data::DatasetKind::kGaussianBlobs:
      return "gaussian_blobs";
    case data::DatasetKind::kTwoSpirals:
      return "two_spirals";
    case data::DatasetKind::kQuadraticRegression:
      return "quadratic_regression";
    case data::DatasetKind::kCsvFile:
      return "csv_file";
  }
  return "?";
}

inline optim::Method method_from_name(const std::string& s) {
  if (s == "plain") return optim::Method::kPlain;
  if (s == "gsc") return optim::Method::kGsc;
  if (s == "lwp") return optim::Method::kLwp;
  if (s == "lwp_plus_gsc") return optim::Method::kLwpPlusGsc;
  if (s == "grad_shrink") return optim::Method::kGradShrink;
  if (s == "weight_stash") return optim::Method::kWeightStash;
  if (s == "spectrain") return optim::Method::kSpecTrain;
  throw ConfigError("config: unknown mitigation.method '" + s + "'");
}

inline std::string method_name(optim::Method m) {
  switch (m) {
    case optim::Method::kPlain:
      return "plain";
    case optim::Method::kGsc:
      return "gsc";
    case optim::Method::kLwp:
      return "lwp";
    case optim::Method::kLwpPlusGsc:
      return "lwp_plus_gsc";
    case optim::Method::kGradShrink:
      return "grad_shrink";
    case optim::Method::kWeightStash:
      return "weight_stash";
    case optim::Method::kSpecTrain:
      return "spectrain";
  }
  return "?";
}

inline pipeline::Consistency consistency_from_name(const std::string& s) {
  if (s == "consistent") return pipeline::Consistency::kConsistent;
  if (s == "inconsistent") return pipeline::Consistency::kInconsistent;
  if (s == "stashed") return pipeline::Consistency::kStashed;
  throw ConfigError("config: unknown consistency '" + s + "'");
}

}  // namespace detail

inline optim::MitigationSpec parse_mitigation(const json& j) {
  detail::expect_keys(j, {"method", "a", "b", "T", "t_scale", "d_scale", "form", "gamma"},
                      "optimizer.mitigation");
  optim::MitigationSpec mit;
  mit.method = detail::method_from_name(
      detail::get_or<std::string>(j, "method", "plain", "optimizer.mitigation"));
  mit.a = detail::opt_double(j, "a", "optimizer.mitigation");
  mit.b = detail::opt_double(j, "b", "optimizer.mitigation");
  mit.T = detail::opt_double(j, "T", "optimizer.mitigation");
  mit.t_scale = detail::opt_double(j, "t_scale", "optimizer.mitigation");
  mit.d_scale = detail::opt_double(j, "d_scale", "optimizer.mitigation");
  const std::string form =
      detail::get_or<std::string>(j, "form", "velocity", "optimizer.mitigation");
  if (form == "velocity") {
    mit.form = optim::PredictForm::kVelocity;
  } else if (form == "weight_difference") {
    mit.form = optim::PredictForm::kWeightDifference;
  } else {
    throw ConfigError("config: unknown mitigation.form '" + form + "'");
  }
  mit.gamma = detail::get_or<double>(j, "gamma", 1.0, "optimizer.mitigation");
  try {
    mit.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return mit;
}

inline ExperimentConfig parse_config(const json& j) {
  detail::expect_keys(j,
                      {"name", "mode", "dataset", "model", "optimizer", "pipeline", "steps",
                       "eval_every", "seeds", "output_dir", "shuffle"},
                      "top level");
  ExperimentConfig cfg;
  cfg.name = detail::get_or<std::string>(j, "name", "run", "top level");
  cfg.mode = detail::get_or<std::string>(j, "mode", "pb", "top level");
  if (cfg.mode != "train" && cfg.mode != "pb" && cfg.mode != "delay") {
    throw ConfigError("config: mode must be one of train|pb|delay, got '" + cfg.mode + "'");
  }

  if (!j.contains("dataset")) throw ConfigError("config: missing key 'dataset' in top level");
  {
    const json& d = j.at("dataset");
    detail::expect_keys(d, {"kind", "n_samples", "n_features", "n_classes", "noise", "seed", "path"},
                        "dataset");
    cfg.dataset.kind = detail::dataset_kind(detail::require<std::string>(d, "kind", "dataset"));
    cfg.dataset.n_samples = detail::get_or<int>(d, "n_samples", 0, "dataset");
    cfg.dataset.n_features = detail::get_or<int>(d, "n_features", 0, "dataset");
    cfg.dataset.n_classes = detail::get_or<int>(d, "n_classes", 0, "dataset");
    cfg.dataset.noise = detail::get_or<double>(d, "noise", 0.0, "dataset");
    cfg.dataset.seed = detail::get_or<std::uint64_t>(d, "seed", 0, "dataset");
    cfg.dataset.path = detail::get_or<std::string>(d, "path", "", "dataset");
    try {
      cfg.dataset.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::expect_keys(m, {"hidden", "activation", "loss"}, "model");
    cfg.model.hidden = detail::get_or<std::vector<int>>(m, "hidden", {}, "model");
    cfg.model.activation = detail::get_or<std::string>(m, "activation", "relu", "model");
    cfg.model.loss = detail::get_or<std::string>(m, "loss", "softmax_cross_entropy", "model");
  }
  if (cfg.model.activation != "relu" && cfg.model.activation != "tanh" &&
      cfg.model.activation != "identity") {
    throw ConfigError("config: unknown model.activation '" + cfg.model.activation + "'");
  }
  if (cfg.model.loss != "softmax_cross_entropy" && cfg.model.loss != "mean_squared_error") {
    throw ConfigError("config: unknown model.loss '" + cfg.model.loss + "'");
  }

  if (!j.contains("optimizer")) throw ConfigError("config: missing key 'optimizer' in top level");
  {
    const json& o = j.at("optimizer");
    detail::expect_keys(o, {"eta", "momentum", "effective_step", "mitigation"}, "optimizer");
    cfg.optimizer.momentum = detail::require<double>(o, "momentum", "optimizer");
    const auto eta = detail::opt_double(o, "eta", "optimizer");
    cfg.effective_step = detail::opt_double(o, "effective_step", "optimizer");
    if (eta && cfg.effective_step) {
      throw ConfigError("config: optimizer.eta and optimizer.effective_step are exclusive");
    }
    if (eta) {
      cfg.optimizer.eta = *eta;
    } else if (cfg.effective_step) {
      // Fixed total gradient contribution: eta = effective_step * (1 - m).
      cfg.optimizer.eta = *cfg.effective_step * (1.0 - cfg.optimizer.momentum);
    } else {
      throw ConfigError("config: optimizer needs eta or effective_step");
    }
    if (o.contains("mitigation")) cfg.optimizer.mitigation = parse_mitigation(o.at("mitigation"));
    try {
      cfg.optimizer.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  if (j.contains("pipeline")) {
    const json& p = j.at("pipeline");
    detail::expect_keys(p, {"schedule", "micro_batch", "delays", "consistency"}, "pipeline");
    cfg.pipeline.schedule =
        detail::get_or<std::string>(p, "schedule", "pipelined_backprop", "pipeline");
    if (cfg.pipeline.schedule != "pipelined_backprop" && cfg.pipeline.schedule != "fill_and_drain") {
      throw ConfigError("config: unknown pipeline.schedule '" + cfg.pipeline.schedule + "'");
    }
    cfg.pipeline.micro_batch = detail::get_or<int>(p, "micro_batch", 1, "pipeline");
    if (p.contains("delays") && !p.at("delays").is_null()) {
      const json& d = p.at("delays");
      if (d.is_string()) {
        if (d.get<std::string>() != "auto") {
          throw ConfigError("config: pipeline.delays string form must be \"auto\"");
        }
      } else if (d.is_number_integer()) {
        cfg.pipeline.delays = std::vector<int>{d.get<int>()};
      } else if (d.is_array()) {
        cfg.pipeline.delays = d.get<std::vector<int>>();
      } else {
        throw ConfigError("config: pipeline.delays must be \"auto\", an integer or an array");
      }
    }
    cfg.pipeline.consistency =
        detail::get_or<std::string>(p, "consistency", "inconsistent", "pipeline");
    detail::consistency_from_name(cfg.pipeline.consistency);  // validate
  }

  cfg.steps = detail::get_or<long>(j, "steps", 0, "top level");
  if (cfg.steps < 0) throw ConfigError("config: steps must be >= 0");
  cfg.eval_every = detail::get_or<long>(j, "eval_every", 0, "top level");
  cfg.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds", {0}, "top level");
  if (cfg.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  cfg.output_dir = detail::get_or<std::string>(j, "output_dir", "", "top level");
  cfg.shuffle = detail::get_or<bool>(j, "shuffle", true, "top level");
  return cfg;
}

inline json mitigation_to_json(const optim::MitigationSpec& mit) {
  json j;
  j["method"] = detail::method_name(mit.method);
  if (mit.a) j["a"] = *mit.a;
  if (mit.b) j["b"] = *mit.b;
  if (mit.T) j["T"] = *mit.T;
  if (mit.t_scale) j["t_scale"] = *mit.t_scale;
  if (mit.d_scale) j["d_scale"] = *mit.d_scale;
  j["form"] = mit.form == optim::PredictForm::kVelocity ? "velocity" : "weight_difference";
  j["gamma"] = mit.gamma;
  return j;
}

/// Full round-trippable snapshot: parse_config(config_to_json(cfg)) rebuilds
/// an identical configuration.
inline json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["mode"] = cfg.mode;
  json d;
  d["kind"] = detail::dataset_kind_name(cfg.dataset.kind);
  d["n_samples"] = cfg.dataset.n_samples;
  d["n_features"] = cfg.dataset.n_features;
  d["n_classes"] = cfg.dataset.n_classes;
  d["noise"] = cfg.dataset.noise;
  d["seed"] = cfg.dataset.seed;
  if (!cfg.dataset.path.empty()) d["path"] = cfg.dataset.path;
  j["dataset"] = d;
  json m;
  m["hidden"] = cfg.model.hidden;
  m["activation"] = cfg.model.activation;
  m["loss"] = cfg.model.loss;
  j["model"] = m;
  json o;
  if (cfg.effective_step) {
    o["effective_step"] = *cfg.effective_step;
  } else {
    o["eta"] = cfg.optimizer.eta;
  }
  o["momentum"] = cfg.optimizer.momentum;
  o["mitigation"] = mitigation_to_json(cfg.optimizer.mitigation);
  j["optimizer"] = o;
  json p;
  p["schedule"] = cfg.pipeline.schedule;
  p["micro_batch"] = cfg.pipeline.micro_batch;
  if (cfg.pipeline.delays) {
    p["delays"] = *cfg.pipeline.delays;
  } else {
    p["delays"] = "auto";
  }
  p["consistency"] = cfg.pipeline.consistency;
  j["pipeline"] = p;
  j["steps"] = cfg.steps;
  j["eval_every"] = cfg.eval_every;
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  j["shuffle"] = cfg.shuffle;
  return j;
}

/// Resolves one dotted path ("optimizer.mitigation.gamma") inside a config
/// document. Intermediate objects must exist; the mutated document is
/// re-validated by parse_config so unknown keys still fail loudly.
inline void set_config_value(json& doc, const std::string& param_path, const json& value) {
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = param_path.find('.', start);
    const std::string key = param_path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("config: bad param path '" + param_path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) {
      if (!node->contains(key)) (*node)[key] = json::object();
      if (!(*node)[key].is_object()) {
        throw ConfigError("config: param path '" + param_path + "' crosses a non-object");
      }
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace pbopt::harness

#endif  // PBOPT_CONFIG_HPP_
