// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_OPTIM_HPP_
#define PBOPT_OPTIM_HPP_

#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "pbopt/param_vector.hpp"

namespace pbopt::optim {

// Momentum SGD with the delay mitigations: generalized spike compensation
// (a velocity/gradient mix in the weight update), linear weight prediction
// (gradient evaluated at extrapolated weights), their combination, and
// gradient shrinking. Weight stashing and the vertical-sync predictor need
// schedule context and live in the pipeline module; the optimizer treats
// them as plain updates.

enum class Method {
  kPlain,
  kGsc,
  kLwp,
  kLwpPlusGsc,
  kGradShrink,
  kWeightStash,
  kSpecTrain,
};

enum class PredictForm { kVelocity, kWeightDifference };

struct MitigationSpec {
  Method method = Method::kPlain;
  /// Spike-compensation coefficients; unset means the m^D defaults.
  std::optional<double> a;
  std::optional<double> b;
  /// Prediction horizon; unset means horizon = stage delay.
  std::optional<double> T;
  /// Horizon as a multiple of the stage delay (T = t_scale * D).
  std::optional<double> t_scale;
  /// Delay multiplier for the spike coefficients (d_scale=2 doubles the
  /// compensated delay).
  std::optional<double> d_scale;
  PredictForm form = PredictForm::kVelocity;
  double gamma = 1.0;

  bool uses_spike() const { return method == Method::kGsc || method == Method::kLwpPlusGsc; }
  bool uses_prediction() const { return method == Method::kLwp || method == Method::kLwpPlusGsc; }

  void validate() const {
    if (method == Method::kGradShrink && (gamma <= 0.0 || gamma > 1.0)) {
      throw std::invalid_argument("mitigation: gamma must be in (0, 1]");
    }
    if (T && *T < 0.0) throw std::invalid_argument("mitigation: T must be >= 0");
    if (t_scale && *t_scale < 0.0) throw std::invalid_argument("mitigation: t_scale must be >= 0");
  }
};

struct OptimizerConfig {
  double eta = 0.1;
  double momentum = 0.9;
  MitigationSpec mitigation;

  void validate() const {
    if (eta <= 0.0) throw std::invalid_argument("optimizer: eta must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
    }
    mitigation.validate();
  }
};

/// Default spike-compensation coefficients for delay D:
/// a = m^D, b = (1 - m^D) / (1 - m). The b term re-applies the weight-update
/// mass the delayed gradient missed, so the total contribution of each
/// gradient stays eta / (1 - m).
inline std::pair<double, double> sc_default_coeffs(double m, int delay) {
  if (m < 0.0 || m >= 1.0) throw std::invalid_argument("sc_default_coeffs: m must be in [0, 1)");
  if (delay < 0) throw std::invalid_argument("sc_default_coeffs: delay must be >= 0");
  if (delay == 0) return {1.0, 0.0};
  const double md = std::pow(m, delay);
  return {md, (1.0 - md) / (1.0 - m)};
}

/// Spike coefficients matching a linear weight prediction with horizon T on
/// a linear-gradient loss: a + b = 1 + T and m * b = T.
inline std::pair<double, double> gsc_from_lwp(double m, double T) {
  if (m <= 0.0 || m >= 1.0) {
    throw std::domain_error("gsc_from_lwp: requires 0 < m < 1");
  }
  return {1.0 - (1.0 - m) * T / m, T / m};
}

inline ParamVector shrink_gradient(const ParamVector& g, double gamma, int delay) {
  if (gamma <= 0.0 || gamma > 1.0) throw std::invalid_argument("shrink_gradient: gamma in (0, 1]");
  if (delay < 0) throw std::invalid_argument("shrink_gradient: delay must be >= 0");
  ParamVector out = g;
  out *= std::pow(gamma, delay);
  return out;
}

/// Rescales (eta, momentum) from a reference update size N_r to N so the
/// per-sample impulse response is preserved: m = m_r^(N/N_r) and
/// eta = (1 - m) N / ((1 - m_r) N_r) * eta_r.
inline std::pair<double, double> scale_hyperparams(double eta_r, double m_r, int n_r, int n) {
  if (eta_r <= 0.0) throw std::invalid_argument("scale_hyperparams: eta_r must be > 0");
  if (m_r < 0.0 || m_r >= 1.0) throw std::invalid_argument("scale_hyperparams: m_r in [0, 1)");
  if (n_r < 1 || n < 1) throw std::invalid_argument("scale_hyperparams: update sizes must be >= 1");
  const double ratio = static_cast<double>(n) / static_cast<double>(n_r);
  const double m = m_r == 0.0 ? 0.0 : std::pow(m_r, ratio);
  const double eta = (1.0 - m) * n / ((1.0 - m_r) * n_r) * eta_r;
  return {eta, m};
}

/// Weights, velocity and a bounded version history. Version k is the state
/// after k optimizer updates; histories keep the most recent versions so
/// delayed reads and predictions stay exact. Reading an evicted or future
/// version throws instead of silently truncating.
class OptState {
 public:
  OptState() = default;

  /// `max_delay` sizes the history: weights keep max_delay + 2 versions,
  /// velocities max_delay + 1.
  OptState(ParamVector w0, int max_delay)
      : w_capacity_(static_cast<std::size_t>(max_delay) + 2),
        v_capacity_(static_cast<std::size_t>(max_delay) + 1) {
    if (max_delay < 0) throw std::invalid_argument("OptState: max_delay must be >= 0");
    ParamVector v0(w0.size(), 0.0);
    hist_w_.push_back(std::move(w0));
    hist_v_.push_back(std::move(v0));
  }

  long step_count() const { return step_count_; }
  const ParamVector& w() const { return hist_w_.back(); }
  const ParamVector& v() const { return hist_v_.back(); }

  const ParamVector& w_at(long version) const {
    return at(hist_w_, version, "weight");
  }
  const ParamVector& v_at(long version) const {
    return at(hist_v_, version, "velocity");
  }

  /// v' = m v + g; w' = w - eta (a v' + b g). Plain SGDM is (a, b) = (1, 0).
  void step(const ParamVector& g, double eta, double m, double a = 1.0, double b = 0.0) {
    if (g.size() != w().size()) {
      throw std::invalid_argument("OptState::step: gradient length mismatch");
    }
    ParamVector v_next = hist_v_.back();
    v_next *= m;
    v_next += g;
    ParamVector w_next = hist_w_.back();
    for (std::size_t i = 0; i < w_next.size(); ++i) {
      w_next[i] -= eta * (a * v_next[i] + b * g[i]);
    }
    hist_w_.push_back(std::move(w_next));
    hist_v_.push_back(std::move(v_next));
    if (hist_w_.size() > w_capacity_) hist_w_.pop_front();
    if (hist_v_.size() > v_capacity_) hist_v_.pop_front();
    ++step_count_;
  }

 private:
  const ParamVector& at(const std::deque<ParamVector>& hist, long version,
                        const char* what) const {
    const long oldest = step_count_ - static_cast<long>(hist.size()) + 1;
    if (version < oldest || version > step_count_) {
      throw std::out_of_range(std::string("OptState: ") + what + " version " +
                              std::to_string(version) + " outside retained range [" +
                              std::to_string(oldest) + ", " + std::to_string(step_count_) + "]");
    }
    return hist[static_cast<std::size_t>(version - oldest)];
  }

  std::deque<ParamVector> hist_w_;
  std::deque<ParamVector> hist_v_;
  std::size_t w_capacity_ = 2;
  std::size_t v_capacity_ = 1;
  long step_count_ = 0;
};

/// Linear weight prediction from version `base`:
///   velocity form:          w_base - eta * T * v_base
///   weight-difference form: w_base + T * (w_base - w_{base-1})
/// `floor_version` clamps history reads during pipeline fill, when the
/// recurrence has not produced older versions yet.
inline ParamVector predict_at_version(const OptState& state, long base, double T,
                                      PredictForm form, double eta, long floor_version = 0) {
  const ParamVector& wb = state.w_at(base);
  if (T == 0.0) return wb;
  ParamVector out = wb;
  if (form == PredictForm::kVelocity) {
    out.axpy(-eta * T, state.v_at(base));
  } else {
    const long prev = base - 1 < floor_version ? floor_version : base - 1;
    const ParamVector& wp = state.w_at(prev);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += T * (wb[i] - wp[i]);
  }
  return out;
}

/// Prediction of the weights D steps ahead of version t-D, as used on the
/// forward pass: reads w_{t-D} (and v_{t-D} or w_{t-D-1}) from history.
inline ParamVector predict_weights(const OptState& state, int delay, double T,
                                   PredictForm form, double eta) {
  const long base = state.step_count() - delay;
  if (base < 0) {
    throw std::out_of_range("predict_weights: insufficient history (warm up first)");
  }
  if (form == PredictForm::kWeightDifference && T != 0.0 && base - 1 < 0) {
    throw std::out_of_range("predict_weights: weight-difference form needs version t-D-1");
  }
  return predict_at_version(state, base, T, form, eta, base > 0 ? base - 1 : 0);
}

}  // namespace pbopt::optim

#endif  // PBOPT_OPTIM_HPP_
