// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: quadratic-analysis exports (heatmaps, half-life
// search, horizon sweeps), the three trainers, config sweeps and the
// utilization helpers. Every artifact CSV is written next to a JSON sidecar
// that reproduces it.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pbopt/harness.hpp"
#include "pbopt/pipeline.hpp"
#include "pbopt/quadratic.hpp"

namespace {

namespace pq = pbopt::quad;
namespace pp = pbopt::pipeline;
namespace ph = pbopt::harness;
using nlohmann::json;

std::string default_out_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("PBOPT_OUT_DIR")) return env;
  return ".";
}

std::string out_path(const std::string& dir, const std::string& leaf) {
  std::filesystem::create_directories(dir);
  return dir + "/" + leaf;
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << doc.dump(2) << "\n";
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

pq::RecMethod method_from_string(const std::string& s) {
  if (s == "gdm") return pq::RecMethod::kGdm;
  if (s == "gsc") return pq::RecMethod::kGsc;
  if (s == "lwp") return pq::RecMethod::kLwp;
  if (s == "lwp_w_plus_gsc" || s == "combined") return pq::RecMethod::kLwpWPlusGsc;
  throw CLI::ValidationError("--method", "expected gdm|gsc|lwp|lwp_w_plus_gsc");
}

std::vector<json> parse_value_list(const std::string& csv) {
  std::vector<json> values;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    json v = json::parse(tok, nullptr, false);
    if (v.is_discarded()) v = tok;
    values.push_back(v);
  }
  if (values.empty()) throw CLI::ValidationError("--values", "empty value list");
  return values;
}

std::vector<double> parse_double_list(const std::string& csv, const char* flag) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      values.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "bad number '" + tok + "'");
    }
  }
  if (values.empty()) throw CLI::ValidationError(flag, "empty list");
  return values;
}

ph::ExperimentConfig load_config(const std::string& path, const std::string& mode,
                                 std::optional<std::uint64_t> seed,
                                 std::optional<long> steps_override) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw CLI::ValidationError("--config", path + ": " + std::string(e.what()));
  }
  doc["mode"] = mode;
  if (seed) doc["seeds"] = json::array({*seed});
  if (steps_override) doc["steps"] = *steps_override;
  return ph::parse_config(doc);
}

int run_training(const ph::ExperimentConfig& cfg, const std::string& out_dir) {
  auto summary = ph::run_experiment(cfg, out_dir);
  const auto& agg = summary.document["aggregate"];
  const std::string loss = agg["mean_final_loss"].is_null()
                               ? std::string("n/a")
                               : fmt(agg["mean_final_loss"].get<double>());
  const std::string acc = agg["mean_final_accuracy"].is_null()
                              ? std::string("n/a")
                              : fmt(agg["mean_final_accuracy"].get<double>());
  std::printf("%s: %zu seed(s), mean final loss %s, mean accuracy %s, %d diverged -> %s\n",
              cfg.name.c_str(), cfg.seeds.size(), loss.c_str(), acc.c_str(),
              agg["divergence_count"].get<int>(),
              (out_dir + "/" + cfg.name + ".summary.json").c_str());
  return summary.any_diverged ? 1 : 0;
}

json search_spec_json(const pq::SearchSpec& spec) {
  return json{{"x_min", spec.x_min},
              {"x_max", spec.x_max},
              {"interval_samples", spec.interval_samples},
              {"m_points", spec.m_points},
              {"m_min", spec.m_min},
              {"m_max", spec.m_max},
              {"refine_rounds", spec.refine_rounds},
              {"refine_points", spec.refine_points}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delay-compensated momentum optimization toolkit"};
  app.require_subcommand(1);

  auto* util = app.add_subcommand("util", "Utilization arithmetic");
  bool util_pipeline = false, util_dp = false;
  std::vector<std::string> util_args;
  util->add_flag("--pipeline", util_pipeline, "Fill-and-drain pipeline bound N/(N+2S)");
  util->add_flag("--dp", util_dp, "Data-parallel utilization FLOP*RATE/PEAK");
  util->add_option("params", util_args, "key=value parameters (N=, S= or FLOP=, RATE=, PEAK=)");

  auto* heat = app.add_subcommand("quad-heatmap", "Dominant-root magnitude over (m, eta*lambda)");
  std::string heat_method = "gdm", heat_out, heat_name = "heatmap";
  int heat_delay = 1, heat_m_points = 100, heat_el_points = 120;
  double heat_m_min = 0.0, heat_m_max = 0.99, heat_el_min = 1e-3, heat_el_max = 10.0;
  double heat_a = -1.0, heat_b = -1.0, heat_T = -1.0;
  heat->add_option("--method", heat_method, "gdm|gsc|lwp|lwp_w_plus_gsc")->capture_default_str();
  heat->add_option("--delay", heat_delay, "gradient delay D")->capture_default_str();
  heat->add_option("--m-min", heat_m_min)->capture_default_str();
  heat->add_option("--m-max", heat_m_max)->capture_default_str();
  heat->add_option("--m-points", heat_m_points)->capture_default_str();
  heat->add_option("--el-min", heat_el_min, "smallest eta*lambda")->capture_default_str();
  heat->add_option("--el-max", heat_el_max, "largest eta*lambda")->capture_default_str();
  heat->add_option("--el-points", heat_el_points)->capture_default_str();
  heat->add_option("--a", heat_a, "spike coefficient a (default m^D)");
  heat->add_option("--b", heat_b, "spike coefficient b (default (1-m^D)/(1-m))");
  heat->add_option("--T", heat_T, "prediction horizon (default D)");
  heat->add_option("--out", heat_out, "output directory (default $PBOPT_OUT_DIR or .)");
  heat->add_option("--name", heat_name)->capture_default_str();

  auto* half = app.add_subcommand("quad-halflife", "Optimal half-life for a condition number");
  std::string half_method = "gdm", half_out, half_name = "halflife";
  double half_kappa = 1e3;
  int half_delay = 0;
  pq::SearchSpec half_spec;
  half->add_option("--method", half_method)->capture_default_str();
  half->add_option("--kappa", half_kappa, "condition number")->capture_default_str();
  half->add_option("--delay", half_delay)->capture_default_str();
  half->add_option("--interval-samples", half_spec.interval_samples)->capture_default_str();
  half->add_option("--m-points", half_spec.m_points)->capture_default_str();
  half->add_option("--refine-rounds", half_spec.refine_rounds)->capture_default_str();
  half->add_option("--out", half_out, "output directory");
  half->add_option("--name", half_name)->capture_default_str();

  auto* qsweep = app.add_subcommand("quad-sweep", "Half-life vs momentum and horizon scale");
  std::string qs_out, qs_name = "quadsweep", qs_tscales = "0,0.5,1,1.5,2,2.5,3";
  double qs_kappa = 1e3;
  int qs_delay = 5, qs_m_points = 50;
  double qs_m_min = 0.0, qs_m_max = 0.9999;
  pq::SearchSpec qs_spec;
  qsweep->add_option("--kappa", qs_kappa)->capture_default_str();
  qsweep->add_option("--delay", qs_delay)->capture_default_str();
  qsweep->add_option("--t-scales", qs_tscales, "comma list of horizon scales T/D")
      ->capture_default_str();
  qsweep->add_option("--m-min", qs_m_min)->capture_default_str();
  qsweep->add_option("--m-max", qs_m_max)->capture_default_str();
  qsweep->add_option("--m-points", qs_m_points)->capture_default_str();
  qsweep->add_option("--interval-samples", qs_spec.interval_samples)->capture_default_str();
  qsweep->add_option("--out", qs_out, "output directory");
  qsweep->add_option("--name", qs_name)->capture_default_str();

  std::string train_config, train_out;
  std::uint64_t train_seed_val = 0;
  long train_steps_val = 0;
  auto* train = app.add_subcommand("train", "Sequential SGDM training");
  train->add_option("--config", train_config, "experiment config JSON")->required();
  train->add_option("--out", train_out, "output directory");
  auto* train_seed_opt = train->add_option("--seed", train_seed_val, "override the seed list");
  auto* train_steps_opt = train->add_option("--steps", train_steps_val, "override step count");

  std::string pb_config, pb_out;
  std::uint64_t pb_seed_val = 0;
  auto* pbt = app.add_subcommand("pb-train", "Pipelined backpropagation training");
  pbt->add_option("--config", pb_config, "experiment config JSON")->required();
  pbt->add_option("--out", pb_out, "output directory");
  auto* pb_seed_opt = pbt->add_option("--seed", pb_seed_val, "override the seed list");

  std::string dt_config, dt_out, dt_consistency;
  std::uint64_t dt_seed_val = 0;
  int dt_delay = -1;
  auto* dtt = app.add_subcommand("delay-train", "Delayed-gradient training (no pipeline)");
  dtt->add_option("--config", dt_config, "experiment config JSON")->required();
  dtt->add_option("--delay", dt_delay, "uniform delay override");
  dtt->add_option("--consistency", dt_consistency, "consistent|inconsistent|stashed");
  dtt->add_option("--out", dt_out, "output directory");
  auto* dt_seed_opt = dtt->add_option("--seed", dt_seed_val, "override the seed list");

  auto* sweep_cmd = app.add_subcommand("sweep", "Grid of runs over one config key");
  std::string sw_config, sw_param, sw_values, sw_out, sw_mode = "pb";
  sweep_cmd->add_option("--config", sw_config, "experiment config JSON")->required();
  sweep_cmd->add_option("--param", sw_param, "dotted config path, e.g. optimizer.mitigation.gamma")
      ->required();
  sweep_cmd->add_option("--values", sw_values, "comma-separated values")->required();
  sweep_cmd->add_option("--mode", sw_mode, "train|pb|delay")->capture_default_str();
  sweep_cmd->add_option("--out", sw_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion") {
      return app.exit(e);
    }
    std::cerr << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    if (*util) {
      double n = -1, s = -1, flop = -1, rate = -1, peak = -1;
      for (const auto& kv : util_args) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
          std::cerr << "util: expected key=value, got '" << kv << "'\n";
          return 2;
        }
        const std::string key = kv.substr(0, eq);
        double value = 0.0;
        try {
          value = std::stod(kv.substr(eq + 1));
        } catch (const std::exception&) {
          std::cerr << "util: bad number in '" << kv << "'\n";
          return 2;
        }
        if (key == "N") {
          n = value;
        } else if (key == "S") {
          s = value;
        } else if (key == "FLOP") {
          flop = value;
        } else if (key == "RATE") {
          rate = value;
        } else if (key == "PEAK") {
          peak = value;
        } else {
          std::cerr << "util: unknown key '" << key << "'\n";
          return 2;
        }
      }
      if (util_pipeline == util_dp) {
        std::cerr << "util: pass exactly one of --pipeline or --dp\n";
        return 2;
      }
      if (util_pipeline) {
        if (n < 1 || s < 1) {
          std::cerr << "util --pipeline needs N= and S=\n";
          return 2;
        }
        const double u = pp::pipeline_utilization(static_cast<long>(n), static_cast<long>(s));
        const auto fd = pp::fill_drain_steps(static_cast<long>(n), static_cast<long>(s));
        std::printf("%.6f\n", u);
        std::printf("fill-and-drain steps per update: %ld (single-pass workers: %ld)\n",
                    fd.conservative, fd.optimistic);
      } else {
        if (flop <= 0 || rate <= 0 || peak <= 0) {
          std::cerr << "util --dp needs FLOP=, RATE= and PEAK=\n";
          return 2;
        }
        const auto u = pp::dp_utilization(flop, rate, peak);
        std::printf("%.6f%s\n", u.value,
                    u.inputs_consistent ? "" : " (inconsistent inputs: exceeds peak)");
      }
      return 0;
    }

    if (*heat) {
      const auto method = method_from_string(heat_method);
      const auto m_grid = pq::linspace(heat_m_min, heat_m_max, heat_m_points);
      const auto el_grid = pq::logspace(heat_el_min, heat_el_max, heat_el_points);
      const auto hm = pq::stability_heatmap(
          method, heat_delay, m_grid, el_grid,
          heat_a >= 0 ? std::optional<double>(heat_a) : std::nullopt,
          heat_b >= 0 ? std::optional<double>(heat_b) : std::nullopt,
          heat_T >= 0 ? std::optional<double>(heat_T) : std::nullopt);
      const std::string dir = default_out_dir(heat_out);
      const std::string csv = out_path(dir, heat_name + ".csv");
      std::ofstream out(csv);
      out << "m,eta_lambda,r_max,stable\n";
      long unstable = 0;
      for (std::size_t i = 0; i < m_grid.size(); ++i) {
        for (std::size_t j = 0; j < el_grid.size(); ++j) {
          const double r = hm.r_max[i][j];
          unstable += r >= 1.0;
          out << fmt(m_grid[i]) << "," << fmt(el_grid[j]) << "," << fmt(r) << ","
              << (r < 1.0 ? 1 : 0) << "\n";
        }
      }
      write_json(out_path(dir, heat_name + ".config.json"),
                 json{{"command", "quad-heatmap"},
                      {"method", heat_method},
                      {"delay", heat_delay},
                      {"m_min", heat_m_min},
                      {"m_max", heat_m_max},
                      {"m_points", heat_m_points},
                      {"el_min", heat_el_min},
                      {"el_max", heat_el_max},
                      {"el_points", heat_el_points},
                      {"a", heat_a >= 0 ? json(heat_a) : json(nullptr)},
                      {"b", heat_b >= 0 ? json(heat_b) : json(nullptr)},
                      {"T", heat_T >= 0 ? json(heat_T) : json(nullptr)}});
      std::printf("quad-heatmap: %zu x %zu cells (%ld unstable) -> %s\n", m_grid.size(),
                  el_grid.size(), unstable, csv.c_str());
      return 0;
    }

    if (*half) {
      const auto method = method_from_string(half_method);
      const auto res = pq::optimal_halflife(method, half_kappa, half_delay, half_spec);
      const std::string dir = default_out_dir(half_out);
      const std::string csv = out_path(dir, half_name + ".csv");
      std::ofstream out(csv);
      out << "method,kappa,delay,m_star,eta_lambda_star,r_star,half_life,feasible\n";
      out << half_method << "," << fmt(half_kappa) << "," << half_delay << "," << fmt(res.m_star)
          << "," << fmt(res.eta_star) << "," << fmt(res.r_star) << "," << fmt(res.half_life) << ","
          << (res.feasible ? 1 : 0) << "\n";
      write_json(out_path(dir, half_name + ".config.json"),
                 json{{"command", "quad-halflife"},
                      {"method", half_method},
                      {"kappa", half_kappa},
                      {"delay", half_delay},
                      {"search_spec", search_spec_json(half_spec)}});
      std::printf("quad-halflife: %s kappa=%g D=%d -> half-life %.4g (r*=%.6f, m*=%.4f) -> %s\n",
                  half_method.c_str(), half_kappa, half_delay, res.half_life, res.r_star,
                  res.m_star, csv.c_str());
      return res.feasible ? 0 : 1;
    }

    if (*qsweep) {
      const auto m_grid = pq::linspace(qs_m_min, qs_m_max, qs_m_points);
      const auto t_scales = parse_double_list(qs_tscales, "--t-scales");
      const auto rows = pq::momentum_horizon_sweep(qs_kappa, qs_delay, m_grid, t_scales, qs_spec);
      const std::string dir = default_out_dir(qs_out);
      const std::string csv = out_path(dir, qs_name + ".csv");
      std::ofstream out(csv);
      out << "m,T_scale,half_life,r_star,stable\n";
      for (const auto& row : rows) {
        out << fmt(row.m) << "," << fmt(row.t_scale) << "," << fmt(row.half_life) << ","
            << fmt(row.r_star) << "," << (row.feasible ? 1 : 0) << "\n";
      }
      write_json(out_path(dir, qs_name + ".config.json"),
                 json{{"command", "quad-sweep"},
                      {"kappa", qs_kappa},
                      {"delay", qs_delay},
                      {"t_scales", t_scales},
                      {"m_min", qs_m_min},
                      {"m_max", qs_m_max},
                      {"m_points", qs_m_points},
                      {"search_spec", search_spec_json(qs_spec)}});
      std::printf("quad-sweep: %zu rows -> %s\n", rows.size(), csv.c_str());
      return 0;
    }

    if (*train) {
      auto cfg = load_config(
          train_config, "train",
          train_seed_opt->count() ? std::optional<std::uint64_t>(train_seed_val) : std::nullopt,
          train_steps_opt->count() ? std::optional<long>(train_steps_val) : std::nullopt);
      return run_training(cfg, default_out_dir(!train_out.empty() ? train_out : cfg.output_dir));
    }
    if (*pbt) {
      auto cfg = load_config(
          pb_config, "pb",
          pb_seed_opt->count() ? std::optional<std::uint64_t>(pb_seed_val) : std::nullopt,
          std::nullopt);
      return run_training(cfg, default_out_dir(!pb_out.empty() ? pb_out : cfg.output_dir));
    }
    if (*dtt) {
      auto cfg = load_config(
          dt_config, "delay",
          dt_seed_opt->count() ? std::optional<std::uint64_t>(dt_seed_val) : std::nullopt,
          std::nullopt);
      if (dt_delay >= 0) cfg.pipeline.delays = std::vector<int>{dt_delay};
      if (!dt_consistency.empty()) {
        ph::detail::consistency_from_name(dt_consistency);  // validate
        cfg.pipeline.consistency = dt_consistency;
      }
      return run_training(cfg, default_out_dir(!dt_out.empty() ? dt_out : cfg.output_dir));
    }

    if (*sweep_cmd) {
      auto cfg = load_config(sw_config, sw_mode, std::nullopt, std::nullopt);
      const auto values = parse_value_list(sw_values);
      auto result = ph::sweep(cfg, sw_param, values);
      const std::string dir = default_out_dir(!sw_out.empty() ? sw_out : cfg.output_dir);
      const std::string csv = out_path(dir, cfg.name + ".sweep.csv");
      ph::write_sweep_csv(result, csv);
      json sidecar;
      sidecar["command"] = "sweep";
      sidecar["param"] = sw_param;
      sidecar["values"] = values;
      sidecar["config"] = ph::config_to_json(cfg);
      write_json(out_path(dir, cfg.name + ".sweep.config.json"), sidecar);
      int total_div = 0;
      for (const auto& row : result.rows) total_div += row.divergence_count;
      std::printf("sweep %s over %zu values x %zu seeds (%d diverged) -> %s\n", sw_param.c_str(),
                  values.size(), cfg.seeds.size(), total_div, csv.c_str());
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ph::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
