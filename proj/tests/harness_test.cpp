// SPDX-License-Identifier: Apache-2.0
#include "pbopt/harness.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pbopt/dataset.hpp"
#include "pbopt/stats.hpp"

namespace ph = pbopt::harness;
namespace pd = pbopt::data;
namespace pm = pbopt::model;
using pbopt::ParamVector;
using pbopt::Rng;
using nlohmann::json;

namespace {

json toy_config_json() {
  return json{
      {"name", "toy"},
      {"mode", "train"},
      {"dataset",
       {{"kind", "gaussian_blobs"},
        {"n_samples", 200},
        {"n_features", 4},
        {"n_classes", 2},
        {"noise", 0.5},
        {"seed", 7}}},
      {"model", {{"hidden", {8}}, {"activation", "relu"}, {"loss", "softmax_cross_entropy"}}},
      {"optimizer", {{"eta", 0.004}, {"momentum", 0.9}, {"mitigation", {{"method", "plain"}}}}},
      {"pipeline", {{"schedule", "pipelined_backprop"}, {"consistency", "consistent"}}},
      {"steps", 200},
      {"eval_every", 100},
      {"seeds", {0, 1}},
      {"shuffle", true},
  };
}

std::filesystem::path temp_dir(const char* leaf) {
  auto dir = std::filesystem::temp_directory_path() / leaf;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Dataset, BlobsDeterministicBytes) {
  pd::DatasetSpec spec;
  spec.kind = pd::DatasetKind::kGaussianBlobs;
  spec.n_samples = 100;
  spec.n_features = 3;
  spec.n_classes = 2;
  spec.noise = 0.3;
  spec.seed = 7;
  auto a = pd::gen_dataset(spec);
  auto b = pd::gen_dataset(spec);
  EXPECT_TRUE(a == b);
  // Balanced within one sample.
  int c0 = 0;
  for (int l : a.labels) c0 += l == 0;
  EXPECT_LE(std::abs(2 * c0 - 100), 1);
}

TEST(Dataset, NoiselessBlobsAreLinearlySeparable) {
  pd::DatasetSpec spec;
  spec.kind = pd::DatasetKind::kGaussianBlobs;
  spec.n_samples = 120;
  spec.n_features = 4;
  spec.n_classes = 3;
  spec.noise = 0.0;
  spec.seed = 5;
  auto ds = pd::gen_dataset(spec);
  // Train a bare linear classifier; it must reach 100% train accuracy.
  auto m = pm::Model::mlp(4, {}, 3, pm::StageKind::kIdentity,
                          pm::StageKind::kSoftmaxCrossEntropy);
  Rng rng(0);
  auto weights = pm::init_weights(m, rng);
  pd::SampleStream stream(ds, 3);
  pbopt::optim::OptimizerConfig cfg;
  cfg.eta = 0.05;
  cfg.momentum = 0.9;
  auto trace = pbopt::pipeline::sequential_train(m, stream, cfg, weights, 2000);
  auto eval = ph::evaluate(m, trace.final_weights, ds);
  ASSERT_TRUE(eval.accuracy.has_value());
  EXPECT_DOUBLE_EQ(*eval.accuracy, 1.0);
}

TEST(Dataset, CsvRoundTrip) {
  pd::DatasetSpec spec;
  spec.kind = pd::DatasetKind::kTwoSpirals;
  spec.n_samples = 64;
  spec.n_features = 2;
  spec.n_classes = 2;
  spec.noise = 0.1;
  spec.seed = 9;
  auto ds = pd::gen_dataset(spec);
  auto path = (temp_dir("pbopt_csv") / "spirals.csv").string();
  pd::write_csv(ds, path);
  auto back = pd::read_csv(path);
  EXPECT_TRUE(ds == back);
}

TEST(Dataset, CsvParseErrorNamesLine) {
  auto dir = temp_dir("pbopt_badcsv");
  auto path = (dir / "bad.csv").string();
  std::ofstream out(path);
  out << "feature_0,label\n0.5,0\nnot_a_number,1\n";
  out.close();
  try {
    pd::read_csv(path);
    FAIL() << "expected parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, RegressionTargetsFollowLinearGroundTruth) {
  pd::DatasetSpec spec;
  spec.kind = pd::DatasetKind::kQuadraticRegression;
  spec.n_samples = 50;
  spec.n_features = 3;
  spec.noise = 0.0;
  spec.seed = 11;
  auto ds = pd::gen_dataset(spec);
  EXPECT_FALSE(ds.classification);
  EXPECT_EQ(ds.target_dim(), 1);
  EXPECT_EQ(ds.targets.size(), 50u);
}

TEST(Config, RejectsUnknownKeys) {
  auto doc = toy_config_json();
  doc["optimizer"]["mitigation"]["typo_key"] = 1.0;
  try {
    ph::parse_config(doc);
    FAIL() << "expected ConfigError";
  } catch (const ph::ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("typo_key"), std::string::npos);
  }
}

TEST(Config, RoundTripsThroughJson) {
  auto cfg = ph::parse_config(toy_config_json());
  auto cfg2 = ph::parse_config(ph::config_to_json(cfg));
  EXPECT_EQ(ph::config_to_json(cfg), ph::config_to_json(cfg2));
}

TEST(Config, EffectiveStepDerivesEta) {
  auto doc = toy_config_json();
  doc["optimizer"].erase("eta");
  doc["optimizer"]["effective_step"] = 0.05;
  auto cfg = ph::parse_config(doc);
  EXPECT_NEAR(cfg.optimizer.eta, 0.05 * (1.0 - 0.9), 1e-15);

  doc["optimizer"]["eta"] = 0.01;  // both set: error
  EXPECT_THROW(ph::parse_config(doc), ph::ConfigError);
}

TEST(Config, DelayFormsParse) {
  auto doc = toy_config_json();
  doc["pipeline"]["delays"] = "auto";
  EXPECT_FALSE(ph::parse_config(doc).pipeline.delays.has_value());
  doc["pipeline"]["delays"] = 16;
  EXPECT_EQ(ph::parse_config(doc).pipeline.delays->size(), 1u);
  doc["pipeline"]["delays"] = {4, 2, 0};
  EXPECT_EQ(ph::parse_config(doc).pipeline.delays->size(), 3u);
  doc["pipeline"]["delays"] = "sometimes";
  EXPECT_THROW(ph::parse_config(doc), ph::ConfigError);
}

TEST(RunExperiment, ZeroStepsDegenerate) {
  auto doc = toy_config_json();
  doc["steps"] = 0;
  doc["seeds"] = {0};
  auto cfg = ph::parse_config(doc);
  auto dir = temp_dir("pbopt_zero");
  auto summary = ph::run_experiment(cfg, dir.string());
  EXPECT_FALSE(summary.any_diverged);
  EXPECT_EQ(summary.document["runs"][0]["steps_run"], 0);
  EXPECT_TRUE(summary.document["aggregate"]["mean_final_loss"].is_null());
  auto trace = ph::read_trace_csv((dir / "toy_s0.trace.csv").string());
  EXPECT_TRUE(trace.records.empty());
}

TEST(RunExperiment, DeterministicSummaries) {
  auto cfg = ph::parse_config(toy_config_json());
  auto d1 = temp_dir("pbopt_det1");
  auto d2 = temp_dir("pbopt_det2");
  auto s1 = ph::run_experiment(cfg, d1.string());
  auto s2 = ph::run_experiment(cfg, d2.string());
  EXPECT_EQ(s1.document, s2.document);
  EXPECT_EQ(slurp(d1 / "toy_s0.trace.csv"), slurp(d2 / "toy_s0.trace.csv"));
}

TEST(RunExperiment, SnapshotReproducesTraceBitForBit) {
  auto cfg = ph::parse_config(toy_config_json());
  auto d1 = temp_dir("pbopt_snap1");
  ph::run_experiment(cfg, d1.string());
  // Re-run from the persisted snapshot of seed 1.
  json snap = json::parse(slurp(d1 / "toy_s1.config.json"));
  auto cfg2 = ph::parse_config(snap);
  auto d2 = temp_dir("pbopt_snap2");
  ph::run_experiment(cfg2, d2.string());
  EXPECT_EQ(slurp(d1 / "toy_s1.trace.csv"), slurp(d2 / "toy_s1.trace.csv"));
}

TEST(RunExperiment, SequentialEqualsZeroDelayPb) {
  auto doc = toy_config_json();
  doc["steps"] = 400;
  auto cfg_train = ph::parse_config(doc);
  doc["mode"] = "pb";
  doc["pipeline"]["delays"] = 0;
  auto cfg_pb = ph::parse_config(doc);
  auto r_train = ph::run_single(cfg_train, 3);
  auto r_pb = ph::run_single(cfg_pb, 3);
  ASSERT_FALSE(r_train.trace.diverged);
  const double rel = std::abs(r_train.final_eval.loss - r_pb.final_eval.loss) /
                     std::max(1.0, std::abs(r_train.final_eval.loss));
  EXPECT_LT(rel, 1e-12);
}

TEST(TraceCsv, RoundTripsExactly) {
  auto cfg = ph::parse_config(toy_config_json());
  auto run = ph::run_single(cfg, 0);
  auto dir = temp_dir("pbopt_trace");
  auto path = (dir / "t.trace.csv").string();
  ph::write_trace_csv(run.trace, 4, path);
  auto back = ph::read_trace_csv(path);
  ASSERT_EQ(back.records.size(), run.trace.records.size());
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    EXPECT_EQ(back.records[i].step, run.trace.records[i].step);
    EXPECT_EQ(back.records[i].loss, run.trace.records[i].loss);
    EXPECT_EQ(back.records[i].correct, run.trace.records[i].correct);
    EXPECT_EQ(back.records[i].stage_weight_norm, run.trace.records[i].stage_weight_norm);
  }
}

TEST(Sweep, GammaOneReproducesPlainRow) {
  auto doc = toy_config_json();
  doc["mode"] = "pb";
  doc["pipeline"]["delays"] = "auto";
  doc["optimizer"]["mitigation"]["method"] = "grad_shrink";
  doc["optimizer"]["mitigation"]["gamma"] = 0.5;
  auto cfg = ph::parse_config(doc);
  auto swept = ph::sweep(cfg, "optimizer.mitigation.gamma", {json(1.0)});

  auto plain_doc = toy_config_json();
  plain_doc["mode"] = "pb";
  plain_doc["pipeline"]["delays"] = "auto";
  auto plain_cfg = ph::parse_config(plain_doc);
  std::vector<double> losses;
  for (std::uint64_t seed : {0ULL, 1ULL}) {
    losses.push_back(ph::run_single(plain_cfg, seed).final_eval.loss);
  }
  ASSERT_EQ(swept.rows.size(), 1u);
  EXPECT_EQ(swept.rows[0].mean_final_loss, pbopt::stats::mean(losses));
}

TEST(Sweep, AggregationIsSeedOrderIndependent) {
  auto doc = toy_config_json();
  doc["seeds"] = {2, 0, 1};
  auto cfg_a = ph::parse_config(doc);
  doc["seeds"] = {1, 2, 0};
  auto cfg_b = ph::parse_config(doc);
  auto sa = ph::sweep(cfg_a, "optimizer.eta", {json(0.004), json(0.002)});
  auto sb = ph::sweep(cfg_b, "optimizer.eta", {json(0.004), json(0.002)});
  ASSERT_EQ(sa.rows.size(), sb.rows.size());
  for (std::size_t i = 0; i < sa.rows.size(); ++i) EXPECT_TRUE(sa.rows[i] == sb.rows[i]);
}

TEST(Sweep, CsvRoundTrips) {
  auto doc = toy_config_json();
  doc["steps"] = 50;
  auto cfg = ph::parse_config(doc);
  auto res = ph::sweep(cfg, "optimizer.eta", {json(0.004), json(0.001)});
  auto dir = temp_dir("pbopt_sweepcsv");
  auto path = (dir / "sweep.csv").string();
  ph::write_sweep_csv(res, path);
  auto back = ph::read_sweep_csv(path);
  ASSERT_EQ(back.rows.size(), res.rows.size());
  EXPECT_EQ(back.param_path, res.param_path);
  for (std::size_t i = 0; i < res.rows.size(); ++i) EXPECT_TRUE(back.rows[i] == res.rows[i]);
}

TEST(Sweep, UnknownParamPathFails) {
  auto cfg = ph::parse_config(toy_config_json());
  EXPECT_THROW(ph::sweep(cfg, "optimizer.mitigation.no_such_knob", {json(1.0)}), ph::ConfigError);
}

// Sweep over the uniform delay with no mitigation: damage grows with the
// delay on the standing toy task.
TEST(Sweep, DelayDamageIsMonotone) {
  json doc = {
      {"name", "delay_sweep"},
      {"mode", "delay"},
      {"dataset",
       {{"kind", "gaussian_blobs"},
        {"n_samples", 2000},
        {"n_features", 8},
        {"n_classes", 2},
        {"noise", 0.5},
        {"seed", 7}}},
      {"model", {{"hidden", {32}}, {"activation", "relu"}, {"loss", "softmax_cross_entropy"}}},
      {"optimizer", {{"eta", 5.5e-3}, {"momentum", 0.9869}, {"mitigation", {{"method", "plain"}}}}},
      {"pipeline", {{"delays", 0}, {"consistency", "consistent"}}},
      {"steps", 6000},
      {"seeds", {0, 1, 2, 3, 4, 5, 6, 7}},
  };
  auto cfg = ph::parse_config(doc);
  auto res = ph::sweep(cfg, "pipeline.delays", {json(0), json(4), json(16)});
  ASSERT_EQ(res.rows.size(), 3u);
  for (const auto& row : res.rows) EXPECT_EQ(row.divergence_count, 0);
  EXPECT_LE(res.rows[0].mean_final_loss, res.rows[1].mean_final_loss);
  EXPECT_LE(res.rows[1].mean_final_loss, res.rows[2].mean_final_loss);
}

// Momentum sweeps at a fixed effective step (eta scaled as (1-m)) and fixed
// delay: without mitigation the best momentum is moderate, with the combined
// mitigation the best momentum moves up.
TEST(Sweep, CombinedMitigationPrefersHigherMomentum) {
  json doc = {
      {"name", "mom_sweep"},
      {"mode", "delay"},
      {"dataset",
       {{"kind", "gaussian_blobs"},
        {"n_samples", 2000},
        {"n_features", 8},
        {"n_classes", 2},
        {"noise", 0.5},
        {"seed", 7}}},
      {"model", {{"hidden", {32}}, {"activation", "relu"}, {"loss", "softmax_cross_entropy"}}},
      {"optimizer",
       {{"effective_step", 0.3}, {"momentum", 0.9}, {"mitigation", {{"method", "plain"}}}}},
      {"pipeline", {{"delays", 16}, {"consistency", "consistent"}}},
      {"steps", 6000},
      {"seeds", {0, 1, 2, 3, 4}},
  };
  const std::vector<json> moms = {json(0.5), json(0.9), json(0.9869), json(0.995)};
  auto plain = ph::sweep(ph::parse_config(doc), "optimizer.momentum", moms);
  doc["optimizer"]["mitigation"] = {{"method", "lwp_plus_gsc"}, {"form", "velocity"}};
  auto combined = ph::sweep(ph::parse_config(doc), "optimizer.momentum", moms);

  const auto argmin = [&](const ph::SweepResult& r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
      if (r.rows[i].mean_final_loss < r.rows[best].mean_final_loss) best = i;
    }
    return moms[best].get<double>();
  };
  const double plain_best = argmin(plain);
  const double combined_best = argmin(combined);
  EXPECT_GT(combined_best, plain_best);
}

TEST(Stats, TTestsBehave) {
  std::vector<double> hi = {1.2, 1.1, 1.3, 1.15, 1.25};
  std::vector<double> lo = {1.0, 0.95, 1.05, 0.98, 1.02};
  auto w = pbopt::stats::welch_one_sided_greater(hi, lo);
  EXPECT_LT(w.p_one_sided, 0.01);
  auto p = pbopt::stats::paired_one_sided_greater(hi, lo);
  EXPECT_LT(p.p_one_sided, 0.01);
  auto null = pbopt::stats::welch_one_sided_greater(lo, lo);
  EXPECT_NEAR(null.p_one_sided, 0.5, 1e-9);
}
