// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_HARNESS_HPP_
#define PBOPT_HARNESS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbopt/config.hpp"
#include "pbopt/dataset.hpp"
#include "pbopt/model.hpp"
#include "pbopt/pipeline.hpp"
#include "pbopt/stats.hpp"

namespace pbopt::harness {

// Experiment orchestration: seeded runs, aggregation and persistence. Every
// artifact file is written next to a JSON snapshot that reproduces it
// bit for bit.

struct EvalResult {
  double loss = 0.0;
  std::optional<double> accuracy;
};

/// Mean per-sample loss (and accuracy for classification) over the full
/// dataset at fixed weights.
inline EvalResult evaluate(const model::Model& m, const std::vector<ParamVector>& weights,
                           const data::Dataset& ds) {
  EvalResult res;
  double correct = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto fwd = model::forward(m, ds.x[i], weights, ds.targets[i]);
    res.loss += fwd.loss;
    if (ds.classification && model::argmax(fwd.activations.back()) == ds.labels[i]) {
      correct += 1.0;
    }
  }
  res.loss /= static_cast<double>(ds.size());
  if (ds.classification) res.accuracy = correct / static_cast<double>(ds.size());
  return res;
}

inline model::Model build_model(const ModelConfig& mc, const data::Dataset& ds) {
  const model::StageKind act = mc.activation == "relu"  ? model::StageKind::kRelu
                               : mc.activation == "tanh" ? model::StageKind::kTanh
                                                         : model::StageKind::kIdentity;
  const bool ce = mc.loss == "softmax_cross_entropy";
  if (ce && !ds.classification) {
    throw ConfigError("config: softmax_cross_entropy needs a classification dataset");
  }
  if (!ce && ds.classification) {
    throw ConfigError("config: mean_squared_error needs a regression dataset");
  }
  const int out = ds.classification ? ds.n_classes : 1;
  return model::Model::mlp(ds.n_features, mc.hidden, out, act,
                           ce ? model::StageKind::kSoftmaxCrossEntropy
                              : model::StageKind::kMeanSquaredError);
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // One splitmix64 scramble keeps the init and order streams decoupled.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

struct RunResult {
  std::uint64_t seed = 0;
  pipeline::RunTrace trace;
  EvalResult final_eval;
  /// Mean training loss over the final min(2000, steps) records.
  double tail_loss = std::numeric_limits<double>::quiet_NaN();
};

inline double tail_loss(const pipeline::RunTrace& trace, std::size_t window = 2000) {
  if (trace.records.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t k = std::min(window, trace.records.size());
  double s = 0.0;
  for (std::size_t i = trace.records.size() - k; i < trace.records.size(); ++i) {
    s += trace.records[i].loss;
  }
  return s / static_cast<double>(k);
}

/// One seeded run in the configured mode. The dataset is generated from the
/// dataset seed (shared across runs); the run seed drives weight init and
/// the sample order.
inline RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
  const data::Dataset ds = data::gen_dataset(cfg.dataset);
  const model::Model m = build_model(cfg.model, ds);
  Rng init_rng(detail::mix_seed(seed, 0));
  auto weights = model::init_weights(m, init_rng);
  data::SampleStream stream(ds, detail::mix_seed(seed, 1), cfg.shuffle);

  RunResult res;
  res.seed = seed;
  if (cfg.mode == "train") {
    res.trace = pipeline::sequential_train(m, stream, cfg.optimizer, std::move(weights), cfg.steps,
                                           cfg.pipeline.micro_batch);
  } else if (cfg.mode == "pb") {
    pipeline::PipelineSpec spec;
    spec.schedule = cfg.pipeline.schedule == "fill_and_drain"
                        ? pipeline::Schedule::kFillAndDrain
                        : pipeline::Schedule::kPipelinedBackprop;
    spec.micro_batch = cfg.pipeline.micro_batch;
    if (cfg.pipeline.delays) {
      spec.delays = cfg.pipeline.delays->size() == 1
                        ? std::vector<int>(m.stages.size(), cfg.pipeline.delays->front())
                        : *cfg.pipeline.delays;
    }
    spec.consistency = detail::consistency_from_name(cfg.pipeline.consistency);
    res.trace = pipeline::pb_train(m, stream, spec, cfg.optimizer, std::move(weights), cfg.steps);
  } else if (cfg.mode == "delay") {
    std::vector<int> delays(m.stages.size(), 0);
    if (cfg.pipeline.delays) {
      delays = cfg.pipeline.delays->size() == 1
                   ? std::vector<int>(m.stages.size(), cfg.pipeline.delays->front())
                   : *cfg.pipeline.delays;
    }
    res.trace = pipeline::uniform_delay_train(
        m, stream, delays, detail::consistency_from_name(cfg.pipeline.consistency),
        cfg.optimizer, std::move(weights), cfg.steps, cfg.pipeline.micro_batch);
  } else {
    throw ConfigError("config: unknown mode '" + cfg.mode + "'");
  }

  if (cfg.steps > 0 && !res.trace.final_weights.empty()) {
    res.final_eval = evaluate(m, res.trace.final_weights, ds);
  }
  res.tail_loss = tail_loss(res.trace);
  return res;
}

inline void write_trace_csv(const pipeline::RunTrace& trace, int stages, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path);
  out << "step,sample_id,loss,correct";
  for (int s = 0; s < stages; ++s) out << ",stage" << s << "_wnorm";
  out << "\n";
  for (const auto& rec : trace.records) {
    out << rec.step << "," << rec.sample_id << "," << detail::fmt_double(rec.loss) << ","
        << detail::fmt_double(rec.correct);
    for (double w : rec.stage_weight_norm) out << "," << detail::fmt_double(w);
    out << "\n";
  }
}

inline pipeline::RunTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trace_csv: cannot open " + path);
  pipeline::RunTrace trace;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_trace_csv: " + path + ": empty");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    pipeline::TraceRecord rec;
    try {
      std::getline(ss, cell, ',');
      rec.step = std::stol(cell);
      std::getline(ss, cell, ',');
      rec.sample_id = std::stol(cell);
      std::getline(ss, cell, ',');
      rec.loss = std::stod(cell);
      std::getline(ss, cell, ',');
      rec.correct = std::stod(cell);
      while (std::getline(ss, cell, ',')) rec.stage_weight_norm.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw std::runtime_error("read_trace_csv: " + path + ":" + std::to_string(line_no) +
                               ": bad row");
    }
    trace.records.push_back(std::move(rec));
  }
  trace.steps_run = static_cast<long>(trace.records.size());
  return trace;
}

struct ExperimentSummary {
  json document;
  bool any_diverged = false;
};

/// Runs every seed, writes one trace + config snapshot per run and an
/// aggregate summary. Seeds are aggregated in sorted order so the result is
/// independent of the order they are listed or executed in.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg,
                                        const std::string& output_dir) {
  namespace fs = std::filesystem;
  if (!output_dir.empty()) fs::create_directories(output_dir);
  const auto out_path = [&](const std::string& leaf) {
    return output_dir.empty() ? leaf : output_dir + "/" + leaf;
  };

  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  const data::Dataset ds = data::gen_dataset(cfg.dataset);
  const model::Model m = build_model(cfg.model, ds);

  ExperimentSummary summary;
  json runs = json::array();
  std::vector<double> losses;
  std::vector<double> accs;
  int divergence_count = 0;

  for (std::uint64_t seed : seeds) {
    RunResult run = run_single(cfg, seed);
    const std::string run_id = cfg.name + "_s" + std::to_string(seed);
    write_trace_csv(run.trace, m.stage_count(), out_path(run_id + ".trace.csv"));
    {
      ExperimentConfig snap_cfg = cfg;
      snap_cfg.seeds = {seed};
      json snap = config_to_json(snap_cfg);
      std::ofstream out(out_path(run_id + ".config.json"));
      out << snap.dump(2) << "\n";
    }
    json r;
    r["seed"] = seed;
    r["steps_run"] = run.trace.steps_run;
    r["diverged"] = run.trace.diverged;
    if (run.trace.diverged) {
      ++divergence_count;
      r["final_loss"] = nullptr;
      r["final_accuracy"] = nullptr;
    } else if (cfg.steps > 0) {
      r["final_loss"] = run.final_eval.loss;
      if (run.final_eval.accuracy) {
        r["final_accuracy"] = *run.final_eval.accuracy;
        accs.push_back(*run.final_eval.accuracy);
      } else {
        r["final_accuracy"] = nullptr;
      }
      losses.push_back(run.final_eval.loss);
    } else {
      r["final_loss"] = nullptr;
      r["final_accuracy"] = nullptr;
    }
    if (std::isnan(run.tail_loss)) {
      r["tail_loss"] = nullptr;
    } else {
      r["tail_loss"] = run.tail_loss;
    }
    if (cfg.eval_every > 0 && !run.trace.records.empty()) {
      // Windowed training metrics as a cheap learning curve.
      json evals = json::array();
      double acc_loss = 0.0, acc_correct = 0.0;
      long count = 0;
      for (const auto& rec : run.trace.records) {
        acc_loss += rec.loss;
        acc_correct += rec.correct;
        ++count;
        if ((rec.step + 1) % cfg.eval_every == 0) {
          evals.push_back({rec.step + 1, acc_loss / count, acc_correct / count});
          acc_loss = acc_correct = 0.0;
          count = 0;
        }
      }
      r["train_curve"] = evals;
    }
    runs.push_back(std::move(r));
  }

  json agg;
  if (!losses.empty()) {
    agg["mean_final_loss"] = stats::mean(losses);
    agg["std_final_loss"] = losses.size() >= 2 ? json(stats::sample_std(losses)) : json(nullptr);
  } else {
    agg["mean_final_loss"] = nullptr;
    agg["std_final_loss"] = nullptr;
  }
  agg["mean_final_accuracy"] = accs.empty() ? json(nullptr) : json(stats::mean(accs));
  agg["divergence_count"] = divergence_count;
  agg["n_seeds"] = seeds.size();

  summary.document["name"] = cfg.name;
  summary.document["mode"] = cfg.mode;
  summary.document["config"] = config_to_json(cfg);
  summary.document["runs"] = runs;
  summary.document["aggregate"] = agg;
  summary.any_diverged = divergence_count > 0;

  std::ofstream out(out_path(cfg.name + ".summary.json"));
  out << summary.document.dump(2) << "\n";
  return summary;
}

struct SweepRow {
  json value;
  double mean_final_loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> std_final_loss;
  std::optional<double> mean_final_accuracy;
  int divergence_count = 0;
  int n_seeds = 0;

  bool operator==(const SweepRow& other) const {
    const auto eq = [](const std::optional<double>& a, const std::optional<double>& b) {
      return a.has_value() == b.has_value() && (!a || *a == *b);
    };
    const bool loss_eq = (std::isnan(mean_final_loss) && std::isnan(other.mean_final_loss)) ||
                         mean_final_loss == other.mean_final_loss;
    return value == other.value && loss_eq && eq(std_final_loss, other.std_final_loss) &&
           eq(mean_final_accuracy, other.mean_final_accuracy) &&
           divergence_count == other.divergence_count && n_seeds == other.n_seeds;
  }
};

struct SweepResult {
  std::string param_path;
  std::vector<SweepRow> rows;
};

/// Grid of runs over one config key; per value, metrics aggregate over the
/// (seed-sorted) seeds. Diverged runs are excluded from the means and
/// reported in the divergence count.
inline SweepResult sweep(const ExperimentConfig& base, const std::string& param_path,
                         const std::vector<json>& values) {
  SweepResult result;
  result.param_path = param_path;
  json base_doc = config_to_json(base);
  for (const json& value : values) {
    json doc = base_doc;
    set_config_value(doc, param_path, value);
    ExperimentConfig cfg = parse_config(doc);

    std::vector<std::uint64_t> seeds = cfg.seeds;
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

    SweepRow row;
    row.value = value;
    row.n_seeds = static_cast<int>(seeds.size());
    std::vector<double> losses;
    std::vector<double> accs;
    for (std::uint64_t seed : seeds) {
      RunResult run = run_single(cfg, seed);
      if (run.trace.diverged) {
        ++row.divergence_count;
        continue;
      }
      losses.push_back(run.final_eval.loss);
      if (run.final_eval.accuracy) accs.push_back(*run.final_eval.accuracy);
    }
    if (!losses.empty()) row.mean_final_loss = stats::mean(losses);
    if (losses.size() >= 2) row.std_final_loss = stats::sample_std(losses);
    if (!accs.empty()) row.mean_final_accuracy = stats::mean(accs);
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline void write_sweep_csv(const SweepResult& sweep_result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sweep_csv: cannot open " + path);
  out << "param,value,mean_final_loss,std_final_loss,mean_final_accuracy,divergence_count,n_seeds\n";
  for (const auto& row : sweep_result.rows) {
    out << sweep_result.param_path << ",";
    if (row.value.is_string()) {
      out << row.value.get<std::string>();
    } else {
      out << row.value.dump();
    }
    out << "," << (std::isnan(row.mean_final_loss) ? "" : detail::fmt_double(row.mean_final_loss));
    out << "," << (row.std_final_loss ? detail::fmt_double(*row.std_final_loss) : "");
    out << ","
        << (row.mean_final_accuracy ? detail::fmt_double(*row.mean_final_accuracy) : "");
    out << "," << row.divergence_count << "," << row.n_seeds << "\n";
  }
}

inline SweepResult read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_sweep_csv: cannot open " + path);
  SweepResult result;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    SweepRow row;
    std::getline(ss, cell, ',');
    result.param_path = cell;
    std::getline(ss, cell, ',');
    row.value = json::parse(cell, nullptr, false);
    if (row.value.is_discarded()) row.value = cell;
    std::getline(ss, cell, ',');
    row.mean_final_loss = cell.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(cell);
    std::getline(ss, cell, ',');
    if (!cell.empty()) row.std_final_loss = std::stod(cell);
    std::getline(ss, cell, ',');
    if (!cell.empty()) row.mean_final_accuracy = std::stod(cell);
    std::getline(ss, cell, ',');
    row.divergence_count = std::stoi(cell);
    std::getline(ss, cell, ',');
    row.n_seeds = std::stoi(cell);
    result.rows.push_back(std::move(row));
  }
  return result;
}

}  // namespace pbopt::harness

#endif  // PBOPT_HARNESS_HPP_
