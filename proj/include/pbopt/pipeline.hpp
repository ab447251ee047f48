// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_PIPELINE_HPP_
#define PBOPT_PIPELINE_HPP_

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pbopt/dataset.hpp"
#include "pbopt/model.hpp"
#include "pbopt/optim.hpp"
#include "pbopt/param_vector.hpp"

namespace pbopt::pipeline {

// Discrete-time simulation of fine-grained pipelined backpropagation. One
// tick = one micro-batch = one optimizer update per stage. Weight versions
// are tracked per stage: version k is the state after k updates, and the
// forward pass of micro-batch i at stage s reads version max(0, i - D[s]).
// The max(0, .) clamp is exactly the pipeline fill transient: a stage
// receives no gradients (so applies no updates) until its first backward
// pass arrives. Activation routing is emulated rather than buffered: each
// micro-batch is evaluated end to end with the historically correct weights,
// which reproduces the delay and consistency semantics without simulating
// wall-clock concurrency.

enum class Schedule { kPipelinedBackprop, kFillAndDrain };
enum class Consistency { kConsistent, kInconsistent, kStashed };

struct PipelineSpec {
  Schedule schedule = Schedule::kPipelinedBackprop;
  int micro_batch = 1;
  /// Per-stage forward delay in updates; empty means the canonical
  /// fine-grained schedule stage_delays(S).
  std::vector<int> delays;
  Consistency consistency = Consistency::kInconsistent;
};

/// Canonical per-stage delays of fine-grained PB at micro-batch one:
/// D[s] = 2 (S - 1 - s). The final stage always sees fresh weights.
inline std::vector<int> stage_delays(int stages) {
  if (stages < 1) throw std::invalid_argument("stage_delays: S must be >= 1");
  std::vector<int> d(static_cast<std::size_t>(stages));
  for (int s = 0; s < stages; ++s) d[static_cast<std::size_t>(s)] = 2 * (stages - 1 - s);
  return d;
}

struct SpecTrainHorizon {
  int forward = 0;
  int backward = 0;
};

/// Vertical-sync prediction horizons: every stage predicts to the common
/// point where the sample's update lands. With a sample entering at t0,
/// stage s runs its forward at t0+s and its backward at t0+2S-2-s, so
/// T_fwd[s] = 2(S-1) - s and T_bwd[s] = s.
inline std::vector<SpecTrainHorizon> spectrain_horizons(int stages) {
  if (stages < 1) throw std::invalid_argument("spectrain_horizons: S must be >= 1");
  std::vector<SpecTrainHorizon> h(static_cast<std::size_t>(stages));
  for (int s = 0; s < stages; ++s) {
    h[static_cast<std::size_t>(s)] = {2 * (stages - 1) - s, s};
  }
  return h;
}

/// Utilization upper bound of fill-and-drain pipelining: N / (N + 2S).
inline double pipeline_utilization(long n, long s) {
  if (n < 1 || s < 1) throw std::invalid_argument("pipeline_utilization: N, S must be >= 1");
  return static_cast<double>(n) / static_cast<double>(n + 2 * s);
}

struct DpUtilization {
  double value = 0.0;
  /// False when the claimed throughput exceeds the hardware peak.
  bool inputs_consistent = true;
};

inline DpUtilization dp_utilization(double flop_per_sample, double samples_per_sec,
                                    double peak_flops) {
  if (flop_per_sample <= 0.0 || samples_per_sec <= 0.0 || peak_flops <= 0.0) {
    throw std::invalid_argument("dp_utilization: inputs must be positive");
  }
  DpUtilization u;
  u.value = flop_per_sample * samples_per_sec / peak_flops;
  u.inputs_consistent = u.value <= 1.0;
  return u;
}

struct FillDrainSteps {
  /// Steps per update when a worker processes one transformation per tick.
  long conservative = 0;  // N + 2S - 2
  /// Steps per update when idle workers speed through single passes.
  long optimistic = 0;  // N + S
};

inline FillDrainSteps fill_drain_steps(long n, long s) {
  if (n < 1 || s < 1) throw std::invalid_argument("fill_drain_steps: N, S must be >= 1");
  return {n + 2 * s - 2, n + s};
}

struct TraceRecord {
  long step = 0;
  long sample_id = 0;
  double loss = 0.0;
  /// Fraction of the micro-batch classified correctly (0/1 at batch one);
  /// 0 for regression.
  double correct = 0.0;
  std::vector<double> stage_weight_norm;
};

struct RunTrace {
  std::vector<TraceRecord> records;
  bool diverged = false;
  long steps_run = 0;
  std::vector<ParamVector> final_weights;
};

/// Observer for delay bookkeeping: called once per (tick, stage) with the
/// weight versions used on the forward and backward passes.
using StepProbe = std::function<void(long step, int stage, long fwd_version, long bwd_version)>;

namespace detail {

struct StagePlan {
  double a = 1.0;
  double b = 0.0;
  double t_fwd = 0.0;
  double t_bwd = 0.0;
  optim::PredictForm form = optim::PredictForm::kVelocity;
  bool spectrain = false;
  double grad_scale = 1.0;
  Consistency consistency = Consistency::kInconsistent;
};

/// Resolves the per-stage update rule from the run-level mitigation spec and
/// this stage's delay. Defaults follow the delay: spike coefficients use
/// a = m^D, b = (1-m^D)/(1-m), and the prediction horizon is T = D (or
/// t_scale * D when a scale is configured).
inline StagePlan make_stage_plan(const optim::OptimizerConfig& cfg, int delay, int stage_index,
                                 int stages, Consistency base) {
  const optim::MitigationSpec& mit = cfg.mitigation;
  StagePlan plan;
  plan.consistency = base;
  plan.form = mit.form;
  const auto spike_delay = [&]() {
    return mit.d_scale ? static_cast<int>(std::lround(*mit.d_scale * delay)) : delay;
  };
  const auto horizon = [&]() {
    if (mit.T) return *mit.T;
    if (mit.t_scale) return *mit.t_scale * delay;
    return static_cast<double>(delay);
  };
  switch (mit.method) {
    case optim::Method::kPlain:
      break;
    case optim::Method::kGsc: {
      auto [da, db] = optim::sc_default_coeffs(cfg.momentum, spike_delay());
      plan.a = mit.a.value_or(da);
      plan.b = mit.b.value_or(db);
      break;
    }
    case optim::Method::kLwp:
      plan.t_fwd = horizon();
      break;
    case optim::Method::kLwpPlusGsc: {
      auto [da, db] = optim::sc_default_coeffs(cfg.momentum, spike_delay());
      plan.a = mit.a.value_or(da);
      plan.b = mit.b.value_or(db);
      plan.t_fwd = horizon();
      break;
    }
    case optim::Method::kGradShrink:
      plan.grad_scale = std::pow(mit.gamma, delay);
      break;
    case optim::Method::kWeightStash:
      plan.consistency = Consistency::kStashed;
      break;
    case optim::Method::kSpecTrain:
      plan.spectrain = true;
      plan.form = optim::PredictForm::kVelocity;
      plan.t_fwd = static_cast<double>(2 * (stages - 1) - stage_index);
      plan.t_bwd = static_cast<double>(stage_index);
      break;
  }
  return plan;
}

inline void check_spec(const model::Model& m, const PipelineSpec& spec,
                       const optim::OptimizerConfig& cfg) {
  cfg.validate();
  if (spec.micro_batch < 1) throw std::invalid_argument("pipeline: micro_batch must be >= 1");
  if (!spec.delays.empty() && spec.delays.size() != m.stages.size()) {
    throw std::invalid_argument("pipeline: delays length " + std::to_string(spec.delays.size()) +
                                " does not match stage count " + std::to_string(m.stages.size()));
  }
  for (int d : spec.delays) {
    if (d < 0) throw std::invalid_argument("pipeline: delays must be >= 0");
  }
  if (cfg.mitigation.method == optim::Method::kSpecTrain) {
    const auto canonical = stage_delays(m.stage_count());
    if (!spec.delays.empty() && spec.delays != canonical) {
      throw std::invalid_argument(
          "pipeline: the vertical-sync predictor assumes the canonical fine-grained "
          "schedule; custom delay vectors are not supported with it");
    }
  }
}

inline double batch_scale(int micro_batch) { return 1.0 / static_cast<double>(micro_batch); }

struct BatchEval {
  double loss = 0.0;
  double correct = 0.0;
  std::vector<ParamVector> grad_sum;
  bool finite = true;
};

/// Forward/backward over one micro-batch with explicit per-stage forward and
/// backward weight sets; gradients are averaged over the batch.
template <typename FwdWeights, typename BwdWeights>
BatchEval eval_micro_batch(const model::Model& m, const data::Dataset& ds,
                           const std::vector<std::size_t>& idx, const FwdWeights& fwd,
                           const BwdWeights& bwd) {
  BatchEval out;
  out.grad_sum.assign(m.stages.size(), ParamVector());
  for (std::size_t k = 0; k < m.stages.size(); ++k) {
    out.grad_sum[k] = ParamVector(static_cast<std::size_t>(m.stages[k].param_count()));
  }
  for (std::size_t i : idx) {
    auto cache = model::forward(m, ds.x[i], fwd, ds.targets[i]);
    out.loss += cache.loss;
    if (!std::isfinite(cache.loss)) {
      out.finite = false;
      out.loss = cache.loss;
      return out;
    }
    if (ds.classification && model::argmax(cache.activations.back()) == ds.labels[i]) {
      out.correct += 1.0;
    }
    auto grads = model::backward(m, cache, bwd, ds.targets[i]);
    for (std::size_t s = 0; s < grads.size(); ++s) {
      if (!grads[s].empty()) out.grad_sum[s] += grads[s];
    }
  }
  const double scale = batch_scale(static_cast<int>(idx.size()));
  out.loss *= scale;
  out.correct *= scale;
  if (idx.size() > 1) {
    for (auto& g : out.grad_sum) g *= scale;
  }
  return out;
}

inline std::vector<double> weight_norms(const std::vector<ParamVector>& w) {
  std::vector<double> out;
  out.reserve(w.size());
  for (const auto& p : w) out.push_back(p.norm2());
  return out;
}

}  // namespace detail

/// Plain sequential SGDM at the given micro-batch size. This is the
/// synchronous reference the delayed simulators are checked against, and the
/// backing loop of the fill-and-drain schedule (which never exhibits delay).
inline RunTrace sequential_train(const model::Model& m, data::SampleStream& stream,
                                 const optim::OptimizerConfig& cfg,
                                 std::vector<ParamVector> weights, long steps,
                                 int micro_batch = 1) {
  cfg.validate();
  if (micro_batch < 1) throw std::invalid_argument("sequential_train: micro_batch >= 1");
  const data::Dataset& ds = stream.dataset();
  RunTrace trace;
  std::vector<ParamVector> velocity;
  velocity.reserve(weights.size());
  for (const auto& w : weights) velocity.emplace_back(w.size(), 0.0);

  std::vector<std::size_t> idx(static_cast<std::size_t>(micro_batch));
  for (long t = 0; t < steps; ++t) {
    long first_id = t * micro_batch;
    for (auto& i : idx) i = stream.next_index();
    auto batch = detail::eval_micro_batch(m, ds, idx, weights, weights);
    TraceRecord rec;
    rec.step = t;
    rec.sample_id = first_id;
    rec.loss = batch.loss;
    rec.correct = batch.correct;
    if (!batch.finite) {
      rec.stage_weight_norm = detail::weight_norms(weights);
      trace.records.push_back(std::move(rec));
      trace.diverged = true;
      trace.steps_run = t + 1;
      break;
    }
    for (std::size_t s = 0; s < weights.size(); ++s) {
      if (weights[s].empty()) continue;
      ParamVector& v = velocity[s];
      const ParamVector& g = batch.grad_sum[s];
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i];
        weights[s][i] -= cfg.eta * v[i];
      }
    }
    rec.stage_weight_norm = detail::weight_norms(weights);
    trace.records.push_back(std::move(rec));
    trace.steps_run = t + 1;
  }
  trace.final_weights = std::move(weights);
  return trace;
}

/// Pipelined backpropagation. Per tick, each stage's forward weights come
/// from its own history at version max(0, t - D[s]) (optionally moved by the
/// configured weight prediction); the backward weights follow the
/// consistency mode; one optimizer step per stage applies the micro-batch
/// gradient with the stage's mitigation coefficients.
inline RunTrace pb_train(const model::Model& m, data::SampleStream& stream,
                         const PipelineSpec& spec, const optim::OptimizerConfig& cfg,
                         std::vector<ParamVector> init_weights, long steps,
                         const StepProbe& probe = nullptr) {
  detail::check_spec(m, spec, cfg);
  const data::Dataset& ds = stream.dataset();
  const int S = m.stage_count();
  const std::vector<int> delays = spec.delays.empty() ? stage_delays(S) : spec.delays;

  if (spec.schedule == Schedule::kFillAndDrain) {
    // Synchronous schedule: consistent fresh weights, no delays by
    // construction.
    return sequential_train(m, stream, cfg, std::move(init_weights), steps, spec.micro_batch);
  }

  std::vector<detail::StagePlan> plans;
  std::vector<optim::OptState> opt;
  plans.reserve(static_cast<std::size_t>(S));
  opt.reserve(static_cast<std::size_t>(S));
  for (int s = 0; s < S; ++s) {
    plans.push_back(detail::make_stage_plan(cfg, delays[static_cast<std::size_t>(s)], s, S,
                                            spec.consistency));
    opt.emplace_back(std::move(init_weights[static_cast<std::size_t>(s)]),
                     delays[static_cast<std::size_t>(s)]);
  }

  // Bounded stash of forward weights keyed by tick, used when the backward
  // pass must reuse the exact forward weights.
  std::vector<std::deque<std::pair<long, ParamVector>>> stash(static_cast<std::size_t>(S));

  RunTrace trace;
  std::vector<ParamVector> fwd_weights(static_cast<std::size_t>(S));
  std::vector<ParamVector> bwd_weights(static_cast<std::size_t>(S));
  std::vector<std::size_t> idx(static_cast<std::size_t>(spec.micro_batch));

  for (long t = 0; t < steps; ++t) {
    for (auto& i : idx) i = stream.next_index();

    for (int s = 0; s < S; ++s) {
      const auto& plan = plans[static_cast<std::size_t>(s)];
      const long ver = std::max<long>(0, t - delays[static_cast<std::size_t>(s)]);
      ParamVector w = plan.t_fwd != 0.0
                          ? optim::predict_at_version(opt[static_cast<std::size_t>(s)], ver,
                                                      plan.t_fwd, plan.form, cfg.eta, 0)
                          : opt[static_cast<std::size_t>(s)].w_at(ver);
      const bool stashed = plan.consistency == Consistency::kStashed && !plan.spectrain;
      if (stashed) {
        auto& q = stash[static_cast<std::size_t>(s)];
        q.emplace_back(t, w);
        const std::size_t cap = static_cast<std::size_t>(delays[static_cast<std::size_t>(s)]) + 1;
        if (q.size() > cap) q.pop_front();
      }
      fwd_weights[static_cast<std::size_t>(s)] = std::move(w);

      long bwd_ver = t;
      if (plan.spectrain) {
        bwd_weights[static_cast<std::size_t>(s)] = optim::predict_at_version(
            opt[static_cast<std::size_t>(s)], t, plan.t_bwd, optim::PredictForm::kVelocity,
            cfg.eta, 0);
      } else if (plan.consistency == Consistency::kInconsistent) {
        bwd_weights[static_cast<std::size_t>(s)] = opt[static_cast<std::size_t>(s)].w();
      } else if (plan.consistency == Consistency::kConsistent) {
        bwd_weights[static_cast<std::size_t>(s)] = fwd_weights[static_cast<std::size_t>(s)];
        bwd_ver = ver;
      } else {
        auto& q = stash[static_cast<std::size_t>(s)];
        if (q.empty() || q.back().first != t) {
          throw std::logic_error("pipeline: stash miss for tick " + std::to_string(t));
        }
        bwd_weights[static_cast<std::size_t>(s)] = q.back().second;
        q.pop_back();
        bwd_ver = ver;
      }
      if (probe) probe(t, s, ver, bwd_ver);
    }

    auto batch = detail::eval_micro_batch(m, ds, idx, fwd_weights, bwd_weights);
    TraceRecord rec;
    rec.step = t;
    rec.sample_id = t * spec.micro_batch;
    rec.loss = batch.loss;
    rec.correct = batch.correct;
    if (!batch.finite) {
      std::vector<ParamVector> current;
      for (const auto& o : opt) current.push_back(o.w());
      rec.stage_weight_norm = detail::weight_norms(current);
      trace.records.push_back(std::move(rec));
      trace.diverged = true;
      trace.steps_run = t + 1;
      break;
    }
    for (int s = 0; s < S; ++s) {
      const auto& plan = plans[static_cast<std::size_t>(s)];
      ParamVector& g = batch.grad_sum[static_cast<std::size_t>(s)];
      if (plan.grad_scale != 1.0) g *= plan.grad_scale;
      opt[static_cast<std::size_t>(s)].step(g, cfg.eta, cfg.momentum, plan.a, plan.b);
    }
    rec.stage_weight_norm.reserve(static_cast<std::size_t>(S));
    for (const auto& o : opt) rec.stage_weight_norm.push_back(o.w().norm2());
    trace.records.push_back(std::move(rec));
    trace.steps_run = t + 1;
  }

  trace.final_weights.reserve(static_cast<std::size_t>(S));
  for (const auto& o : opt) trace.final_weights.push_back(o.w());
  return trace;
}

/// Delayed-gradient training without a pipeline: a buffer of full past
/// parameter (and velocity) snapshots feeds the forward pass with weights
/// from D steps ago, while updates land on the master copy. With
/// consistency=consistent (or stashed) the backward pass reuses the same old
/// weights; with inconsistent it uses the master weights. A per-stage delay
/// vector generalizes the uniform delay; this is an independent
/// implementation of the semantics pb_train realizes through per-stage
/// version histories, and the two are cross-checked in the tests.
inline RunTrace uniform_delay_train(const model::Model& m, data::SampleStream& stream,
                                    const std::vector<int>& delays, Consistency consistency,
                                    const optim::OptimizerConfig& cfg,
                                    std::vector<ParamVector> init_weights, long steps,
                                    int micro_batch = 1) {
  cfg.validate();
  if (micro_batch < 1) throw std::invalid_argument("uniform_delay_train: micro_batch >= 1");
  if (delays.size() != m.stages.size()) {
    throw std::invalid_argument("uniform_delay_train: delays length must match stage count");
  }
  if (cfg.mitigation.method == optim::Method::kSpecTrain) {
    throw std::invalid_argument(
        "uniform_delay_train: the vertical-sync predictor needs the pipeline schedule");
  }
  const data::Dataset& ds = stream.dataset();
  const int S = m.stage_count();
  int max_delay = 0;
  for (int d : delays) max_delay = std::max(max_delay, d);

  std::vector<detail::StagePlan> plans;
  for (int s = 0; s < S; ++s) {
    plans.push_back(detail::make_stage_plan(cfg, delays[static_cast<std::size_t>(s)], s, S,
                                            consistency));
  }

  struct Snapshot {
    std::vector<ParamVector> w;
    std::vector<ParamVector> v;
  };
  std::vector<ParamVector> master = std::move(init_weights);
  std::vector<ParamVector> velocity;
  velocity.reserve(master.size());
  for (const auto& w : master) velocity.emplace_back(w.size(), 0.0);

  // snapshots.back() is version t; the deque spans the newest versions.
  std::deque<Snapshot> snapshots;
  snapshots.push_back({master, velocity});
  const std::size_t cap = static_cast<std::size_t>(max_delay) + 2;

  const auto snapshot_at = [&](long version, long now) -> const Snapshot& {
    const long oldest = now - static_cast<long>(snapshots.size()) + 1;
    return snapshots[static_cast<std::size_t>(version - oldest)];
  };

  RunTrace trace;
  std::vector<ParamVector> fwd_weights(static_cast<std::size_t>(S));
  std::vector<ParamVector> bwd_weights(static_cast<std::size_t>(S));
  std::vector<std::size_t> idx(static_cast<std::size_t>(micro_batch));

  for (long t = 0; t < steps; ++t) {
    for (auto& i : idx) i = stream.next_index();

    for (int s = 0; s < S; ++s) {
      const auto& plan = plans[static_cast<std::size_t>(s)];
      const long ver = std::max<long>(0, t - delays[static_cast<std::size_t>(s)]);
      const Snapshot& snap = snapshot_at(ver, t);
      ParamVector w = snap.w[static_cast<std::size_t>(s)];
      if (plan.t_fwd != 0.0) {
        if (plan.form == optim::PredictForm::kVelocity) {
          w.axpy(-cfg.eta * plan.t_fwd, snap.v[static_cast<std::size_t>(s)]);
        } else {
          const Snapshot& prev = snapshot_at(std::max<long>(0, ver - 1), t);
          const ParamVector& wp = prev.w[static_cast<std::size_t>(s)];
          const ParamVector& wb = snap.w[static_cast<std::size_t>(s)];
          for (std::size_t i = 0; i < w.size(); ++i) w[i] += plan.t_fwd * (wb[i] - wp[i]);
        }
      }
      fwd_weights[static_cast<std::size_t>(s)] = std::move(w);
      bwd_weights[static_cast<std::size_t>(s)] =
          plan.consistency == Consistency::kInconsistent
              ? master[static_cast<std::size_t>(s)]
              : fwd_weights[static_cast<std::size_t>(s)];
    }

    auto batch = detail::eval_micro_batch(m, ds, idx, fwd_weights, bwd_weights);
    TraceRecord rec;
    rec.step = t;
    rec.sample_id = t * micro_batch;
    rec.loss = batch.loss;
    rec.correct = batch.correct;
    if (!batch.finite) {
      rec.stage_weight_norm = detail::weight_norms(master);
      trace.records.push_back(std::move(rec));
      trace.diverged = true;
      trace.steps_run = t + 1;
      break;
    }
    for (int s = 0; s < S; ++s) {
      const auto& plan = plans[static_cast<std::size_t>(s)];
      ParamVector& g = batch.grad_sum[static_cast<std::size_t>(s)];
      if (g.empty()) continue;
      if (plan.grad_scale != 1.0) g *= plan.grad_scale;
      ParamVector& v = velocity[static_cast<std::size_t>(s)];
      ParamVector& w = master[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = cfg.momentum * v[i] + g[i];
        w[i] -= cfg.eta * (plan.a * v[i] + plan.b * g[i]);
      }
    }
    snapshots.push_back({master, velocity});
    if (snapshots.size() > cap) snapshots.pop_front();
    rec.stage_weight_norm = detail::weight_norms(master);
    trace.records.push_back(std::move(rec));
    trace.steps_run = t + 1;
  }

  trace.final_weights = std::move(master);
  return trace;
}

inline RunTrace uniform_delay_train(const model::Model& m, data::SampleStream& stream, int delay,
                                    Consistency consistency, const optim::OptimizerConfig& cfg,
                                    std::vector<ParamVector> init_weights, long steps,
                                    int micro_batch = 1) {
  if (delay < 0) throw std::invalid_argument("uniform_delay_train: delay must be >= 0");
  std::vector<int> delays(m.stages.size(), delay);
  return uniform_delay_train(m, stream, delays, consistency, cfg, std::move(init_weights), steps,
                             micro_batch);
}

}  // namespace pbopt::pipeline

#endif  // PBOPT_PIPELINE_HPP_
