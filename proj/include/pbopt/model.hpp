// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_MODEL_HPP_
#define PBOPT_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbopt/param_vector.hpp"
#include "pbopt/rng.hpp"

namespace pbopt::model {

// Stage-structured models with exact per-stage gradients. The pipeline
// simulator supplies each stage's weights externally (possibly from an older
// weight version), so forward/backward take the weight set as an argument
// instead of owning it.

enum class StageKind {
  kDense,
  kRelu,
  kTanh,
  kIdentity,
  kSoftmaxCrossEntropy,
  kMeanSquaredError,
};

inline bool is_loss(StageKind k) {
  return k == StageKind::kSoftmaxCrossEntropy || k == StageKind::kMeanSquaredError;
}

inline bool is_activation(StageKind k) {
  return k == StageKind::kRelu || k == StageKind::kTanh || k == StageKind::kIdentity;
}

struct Stage {
  StageKind kind;
  int in_dim = 0;
  int out_dim = 0;

  bool has_params() const { return kind == StageKind::kDense; }

  /// Dense stages hold a row-major weight matrix followed by the bias:
  /// params = [W(out x in), b(out)].
  int param_count() const {
    return kind == StageKind::kDense ? in_dim * out_dim + out_dim : 0;
  }
};

inline Stage dense(int in_dim, int out_dim) { return {StageKind::kDense, in_dim, out_dim}; }
inline Stage activation(StageKind k, int dim) { return {k, dim, dim}; }
inline Stage loss_head(StageKind k, int dim) { return {k, dim, dim}; }

struct Model {
  std::vector<Stage> stages;

  int stage_count() const { return static_cast<int>(stages.size()); }
  int input_dim() const { return stages.front().in_dim; }
  /// Dimension entering the loss head (logits for classification).
  int output_dim() const { return stages.back().in_dim; }
  bool classification() const { return stages.back().kind == StageKind::kSoftmaxCrossEntropy; }

  int total_params() const {
    int n = 0;
    for (const Stage& s : stages) n += s.param_count();
    return n;
  }

  void validate() const {
    if (stages.empty()) throw std::invalid_argument("Model: no stages");
    for (std::size_t s = 0; s + 1 < stages.size(); ++s) {
      if (is_loss(stages[s].kind)) {
        throw std::invalid_argument("Model: loss head must be the final stage");
      }
      if (stages[s].out_dim != stages[s + 1].in_dim) {
        throw std::invalid_argument("Model: stage " + std::to_string(s) + " out_dim " +
                                    std::to_string(stages[s].out_dim) +
                                    " does not match stage " + std::to_string(s + 1) +
                                    " in_dim " + std::to_string(stages[s + 1].in_dim));
      }
    }
    if (!is_loss(stages.back().kind)) {
      throw std::invalid_argument("Model: final stage must be a loss head");
    }
    for (const Stage& s : stages) {
      if (s.in_dim <= 0 || s.out_dim <= 0) {
        throw std::invalid_argument("Model: stage dimensions must be positive");
      }
      if (is_activation(s.kind) && s.in_dim != s.out_dim) {
        throw std::invalid_argument("Model: activation stage must preserve dimension");
      }
    }
  }

  /// Multi-layer perceptron: dense/activation pairs followed by a dense
  /// output layer and a loss head. Every layer becomes its own stage, which
  /// matches how the pipeline assigns delays.
  static Model mlp(int input_dim, const std::vector<int>& hidden, int output_dim,
                   StageKind act, StageKind loss) {
    Model m;
    int d = input_dim;
    for (int h : hidden) {
      m.stages.push_back(dense(d, h));
      m.stages.push_back(activation(act, h));
      d = h;
    }
    m.stages.push_back(dense(d, output_dim));
    m.stages.push_back(loss_head(loss, output_dim));
    m.validate();
    return m;
  }
};

/// Glorot-uniform dense weights, zero biases. Param-free stages get empty
/// vectors so that weight sets are always index-aligned with stages.
inline std::vector<ParamVector> init_weights(const Model& model, Rng& rng) {
  std::vector<ParamVector> out;
  out.reserve(model.stages.size());
  for (const Stage& s : model.stages) {
    ParamVector p(static_cast<std::size_t>(s.param_count()));
    if (s.kind == StageKind::kDense) {
      const double bound = std::sqrt(6.0 / (s.in_dim + s.out_dim));
      for (int i = 0; i < s.in_dim * s.out_dim; ++i) p[i] = rng.uniform(-bound, bound);
      // biases stay zero
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct ForwardResult {
  /// activations[s] is the input to stage s; activations[0] is the network
  /// input and activations.back() is the input to the loss head.
  std::vector<ParamVector> activations;
  double loss = 0.0;
};

namespace detail {

inline void check_weights(const Model& model, const std::vector<ParamVector>& weights) {
  if (weights.size() != model.stages.size()) {
    throw std::invalid_argument("forward: weight set size " + std::to_string(weights.size()) +
                                " does not match stage count " +
                                std::to_string(model.stages.size()));
  }
  for (std::size_t s = 0; s < weights.size(); ++s) {
    if (static_cast<int>(weights[s].size()) != model.stages[s].param_count()) {
      throw std::invalid_argument("forward: stage " + std::to_string(s) +
                                  " expects " + std::to_string(model.stages[s].param_count()) +
                                  " params, got " + std::to_string(weights[s].size()));
    }
  }
}

inline ParamVector dense_apply(const Stage& st, const ParamVector& w, const ParamVector& x) {
  ParamVector y(static_cast<std::size_t>(st.out_dim));
  const int in = st.in_dim;
  const double* bias = w.data() + st.in_dim * st.out_dim;
  for (int o = 0; o < st.out_dim; ++o) {
    double acc = bias[o];
    const double* row = w.data() + o * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

inline double loss_value(const Stage& st, const ParamVector& z, const ParamVector& target) {
  if (static_cast<int>(target.size()) != st.in_dim) {
    throw std::invalid_argument("loss: target length does not match loss head dimension");
  }
  if (st.kind == StageKind::kMeanSquaredError) {
    double s = 0.0;
    for (int i = 0; i < st.in_dim; ++i) {
      const double d = z[i] - target[i];
      s += d * d;
    }
    return s;
  }
  // Softmax cross entropy, computed with a max shift so exp never overflows.
  double zmax = z[0];
  for (int i = 1; i < st.in_dim; ++i) zmax = std::max(zmax, z[i]);
  double sum = 0.0;
  for (int i = 0; i < st.in_dim; ++i) sum += std::exp(z[i] - zmax);
  const double log_sum = std::log(sum);
  double loss = 0.0;
  for (int i = 0; i < st.in_dim; ++i) {
    if (target[i] != 0.0) loss += target[i] * (zmax + log_sum - z[i]);
  }
  return loss;
}

/// Gradient of the loss with respect to the loss-head input.
inline ParamVector loss_input_grad(const Stage& st, const ParamVector& z,
                                   const ParamVector& target) {
  ParamVector g(static_cast<std::size_t>(st.in_dim));
  if (st.kind == StageKind::kMeanSquaredError) {
    for (int i = 0; i < st.in_dim; ++i) g[i] = 2.0 * (z[i] - target[i]);
    return g;
  }
  double zmax = z[0];
  for (int i = 1; i < st.in_dim; ++i) zmax = std::max(zmax, z[i]);
  double sum = 0.0;
  for (int i = 0; i < st.in_dim; ++i) sum += std::exp(z[i] - zmax);
  for (int i = 0; i < st.in_dim; ++i) g[i] = std::exp(z[i] - zmax) / sum - target[i];
  return g;
}

}  // namespace detail

/// Runs the model on one input and returns every stage-boundary activation
/// plus the loss. Pure: two calls with identical arguments give identical
/// results.
inline ForwardResult forward(const Model& model, const ParamVector& input,
                             const std::vector<ParamVector>& weights,
                             const ParamVector& target) {
  detail::check_weights(model, weights);
  if (static_cast<int>(input.size()) != model.input_dim()) {
    throw std::invalid_argument("forward: input length " + std::to_string(input.size()) +
                                " does not match model input dim " +
                                std::to_string(model.input_dim()));
  }
  ForwardResult res;
  res.activations.reserve(model.stages.size());
  res.activations.push_back(input);
  for (std::size_t s = 0; s + 1 < model.stages.size(); ++s) {
    const Stage& st = model.stages[s];
    const ParamVector& x = res.activations.back();
    ParamVector y;
    switch (st.kind) {
      case StageKind::kDense:
        y = detail::dense_apply(st, weights[s], x);
        break;
      case StageKind::kRelu: {
        y = x;
        for (double& v : y) v = v > 0.0 ? v : 0.0;
        break;
      }
      case StageKind::kTanh: {
        y = x;
        for (double& v : y) v = std::tanh(v);
        break;
      }
      case StageKind::kIdentity:
        y = x;
        break;
      default:
        throw std::invalid_argument("forward: loss head before final stage");
    }
    res.activations.push_back(std::move(y));
  }
  res.loss = detail::loss_value(model.stages.back(), res.activations.back(), target);
  return res;
}

/// Backpropagates through the cached activations, evaluating the linear maps
/// with the supplied weights. When `weights` matches the set used to produce
/// the cache this is the exact gradient; the pipeline simulator deliberately
/// passes newer weights here to reproduce inconsistent-weight training.
inline std::vector<ParamVector> backward(const Model& model, const ForwardResult& cache,
                                         const std::vector<ParamVector>& weights,
                                         const ParamVector& target) {
  detail::check_weights(model, weights);
  if (cache.activations.size() != model.stages.size()) {
    throw std::invalid_argument("backward: activation cache does not match model (run forward first)");
  }
  const int S = model.stage_count();
  std::vector<ParamVector> grads(static_cast<std::size_t>(S));
  ParamVector delta = detail::loss_input_grad(model.stages.back(), cache.activations.back(), target);
  grads[S - 1] = ParamVector();  // loss head has no params
  for (int s = S - 2; s >= 0; --s) {
    const Stage& st = model.stages[static_cast<std::size_t>(s)];
    const ParamVector& x = cache.activations[static_cast<std::size_t>(s)];
    switch (st.kind) {
      case StageKind::kDense: {
        const ParamVector& w = weights[static_cast<std::size_t>(s)];
        ParamVector g(static_cast<std::size_t>(st.param_count()));
        const int in = st.in_dim;
        for (int o = 0; o < st.out_dim; ++o) {
          const double d = delta[o];
          double* grow = g.data() + o * in;
          for (int i = 0; i < in; ++i) grow[i] = d * x[i];
          g[in * st.out_dim + o] = d;
        }
        ParamVector dx(static_cast<std::size_t>(in));
        for (int o = 0; o < st.out_dim; ++o) {
          const double d = delta[o];
          const double* row = w.data() + o * in;
          for (int i = 0; i < in; ++i) dx[i] += row[i] * d;
        }
        grads[static_cast<std::size_t>(s)] = std::move(g);
        delta = std::move(dx);
        break;
      }
      case StageKind::kRelu: {
        // Subgradient at 0 is 0.
        for (int i = 0; i < st.in_dim; ++i) {
          if (x[i] <= 0.0) delta[i] = 0.0;
        }
        grads[static_cast<std::size_t>(s)] = ParamVector();
        break;
      }
      case StageKind::kTanh: {
        const ParamVector& y = cache.activations[static_cast<std::size_t>(s) + 1];
        for (int i = 0; i < st.in_dim; ++i) delta[i] *= 1.0 - y[i] * y[i];
        grads[static_cast<std::size_t>(s)] = ParamVector();
        break;
      }
      case StageKind::kIdentity:
        grads[static_cast<std::size_t>(s)] = ParamVector();
        break;
      default:
        throw std::invalid_argument("backward: unexpected loss head");
    }
  }
  return grads;
}

/// Max relative error between analytic gradients and central finite
/// differences over every parameter. Used as the independent oracle for
/// backward().
inline double grad_check(const Model& model, const ParamVector& input,
                         const ParamVector& target, double epsilon,
                         std::vector<ParamVector> weights) {
  if (epsilon <= 0.0) throw std::invalid_argument("grad_check: epsilon must be positive");
  const ForwardResult cache = forward(model, input, weights, target);
  const std::vector<ParamVector> analytic = backward(model, cache, weights, target);
  double max_rel = 0.0;
  for (std::size_t s = 0; s < weights.size(); ++s) {
    for (std::size_t i = 0; i < weights[s].size(); ++i) {
      const double saved = weights[s][i];
      weights[s][i] = saved + epsilon;
      const double lp = forward(model, input, weights, target).loss;
      weights[s][i] = saved - epsilon;
      const double lm = forward(model, input, weights, target).loss;
      weights[s][i] = saved;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = analytic[s][i];
      const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

/// Index of the largest logit; ties resolve to the lowest index.
inline int argmax(const ParamVector& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace pbopt::model

#endif  // PBOPT_MODEL_HPP_
