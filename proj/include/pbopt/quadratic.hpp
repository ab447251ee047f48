// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_QUADRATIC_HPP_
#define PBOPT_QUADRATIC_HPP_

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pbopt/optim.hpp"

namespace pbopt::quad {

// Convergence analysis of delayed momentum updates on a convex quadratic.
// Because the gradient is linear and the eigenbasis decouples coordinates,
// each coordinate of the expected weights follows a scalar linear recurrence
// in the normalized rate eta*lambda. The recurrence for the combined update
// (weight-difference prediction with horizon T plus an (a, b) velocity/
// gradient mix) is
//
//   w[t+1] = (1+m) w[t] - m w[t-1]
//            - eta*lambda (a+b)(T+1) w[t-D]
//            + eta*lambda ((a+b) T + m b (T+1)) w[t-D-1]
//            - eta*lambda m b T w[t-D-2]
//
// and every method here is a special case of it. The characteristic
// polynomial is read off this normal form; the gradient terms enter with
// positive sign on the polynomial side. simulate_recurrence() iterates the
// optimizer equations directly and serves as the ground-truth check for the
// sign and indexing conventions.

enum class RecMethod { kGdm, kGsc, kLwp, kLwpWPlusGsc };

struct QuadraticRecurrence {
  RecMethod method = RecMethod::kGdm;
  double m = 0.0;
  double eta_lambda = 0.1;
  int delay = 0;
  /// Optional overrides; unset uses the method defaults (a = m^D,
  /// b = (1-m^D)/(1-m), T = D).
  std::optional<double> a;
  std::optional<double> b;
  std::optional<double> T;

  struct Coeffs {
    double a = 1.0;
    double b = 0.0;
    double T = 0.0;
  };

  Coeffs resolve() const {
    if (m < 0.0 || m >= 1.0) throw std::invalid_argument("QuadraticRecurrence: m in [0, 1)");
    if (delay < 0) throw std::invalid_argument("QuadraticRecurrence: delay >= 0");
    Coeffs c;
    const bool spike = method == RecMethod::kGsc || method == RecMethod::kLwpWPlusGsc;
    const bool predict = method == RecMethod::kLwp || method == RecMethod::kLwpWPlusGsc;
    if (spike) {
      auto [da, db] = optim::sc_default_coeffs(m, delay);
      c.a = a.value_or(da);
      c.b = b.value_or(db);
    }
    if (predict) c.T = T.value_or(static_cast<double>(delay));
    return c;
  }
};

/// Characteristic polynomial of the expected-weight recurrence, as
/// coefficients in descending powers of z with leading coefficient 1.
/// Trailing zero coefficients (roots at z = 0) are stripped so degenerate
/// parameter choices reduce to the lower-order method exactly.
inline std::vector<double> char_poly(const QuadraticRecurrence& rec) {
  const auto c = rec.resolve();
  const double el = rec.eta_lambda;
  const int d = rec.delay;
  // lag[j] is the coefficient of w[t-j] in w[t+1] = sum_j lag[j] w[t-j].
  std::vector<double> lag(static_cast<std::size_t>(d) + 3, 0.0);
  lag[0] += 1.0 + rec.m;
  lag[1] -= rec.m;
  lag[static_cast<std::size_t>(d)] -= el * (c.a + c.b) * (c.T + 1.0);
  lag[static_cast<std::size_t>(d) + 1] += el * ((c.a + c.b) * c.T + rec.m * c.b * (c.T + 1.0));
  lag[static_cast<std::size_t>(d) + 2] -= el * rec.m * c.b * c.T;

  std::vector<double> coeffs;
  coeffs.reserve(lag.size() + 1);
  coeffs.push_back(1.0);
  for (double v : lag) coeffs.push_back(-v);
  while (coeffs.size() > 2 && coeffs.back() == 0.0) coeffs.pop_back();
  return coeffs;
}

struct RootAnalysis {
  std::vector<double> coefficients;
  std::vector<std::complex<double>> roots;
  double r_max = 0.0;
  bool stable = false;
};

/// |p(z)| by Horner evaluation; used to cross-check reported roots.
inline double eval_poly_abs(const std::vector<double>& coeffs, std::complex<double> z) {
  std::complex<double> acc(0.0, 0.0);
  for (double c : coeffs) acc = acc * z + c;
  return std::abs(acc);
}

namespace detail {

// Parlett-Reinsch balancing with powers of two, including the diagonal.
// Companion matrices can be badly scaled when coefficients span orders of
// magnitude; balancing keeps the eigenvalue computation accurate.
inline void balance_matrix(Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  const double gamma = 0.9;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < n; ++i) {
      const double row_norm = a.row(i).lpNorm<1>();
      const double col_norm = a.col(i).lpNorm<1>();
      if (row_norm == 0.0 || col_norm == 0.0) continue;
      int exponent = 0;
      std::frexp(row_norm / col_norm, &exponent);
      exponent /= 2;
      if (exponent != 0) {
        const double scaled_col = std::ldexp(col_norm, exponent);
        const double scaled_row = std::ldexp(row_norm, -exponent);
        if (scaled_col + scaled_row < gamma * (col_norm + row_norm)) {
          const double scale = std::ldexp(1.0, exponent);
          a.col(i) *= scale;
          a.row(i) /= scale;
          changed = true;
        }
      }
    }
  }
}

}  // namespace detail

/// All complex roots via eigenvalues of the balanced companion matrix.
inline RootAnalysis max_root_magnitude(std::vector<double> coefficients) {
  if (coefficients.empty() || coefficients.size() < 2) {
    throw std::domain_error("max_root_magnitude: polynomial degree must be >= 1");
  }
  if (coefficients.front() == 0.0) {
    throw std::invalid_argument("max_root_magnitude: leading coefficient is zero");
  }
  RootAnalysis res;
  res.coefficients = coefficients;
  const int degree = static_cast<int>(coefficients.size()) - 1;
  const double lead = coefficients.front();

  if (degree == 1) {
    res.roots.emplace_back(-coefficients[1] / lead, 0.0);
  } else {
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
    for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
    for (int i = 0; i < degree; ++i) {
      companion(i, degree - 1) = -coefficients[static_cast<std::size_t>(degree - i)] / lead;
    }
    detail::balance_matrix(companion);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) {
      throw std::runtime_error("max_root_magnitude: eigenvalue computation failed");
    }
    const auto& ev = solver.eigenvalues();
    for (int i = 0; i < degree; ++i) res.roots.emplace_back(ev[i].real(), ev[i].imag());
  }
  res.r_max = 0.0;
  for (const auto& r : res.roots) res.r_max = std::max(res.r_max, std::abs(r));
  res.stable = res.r_max < 1.0;
  return res;
}

struct DecayEstimate {
  double rate = 0.0;
  bool diverged = false;
};

/// Iterates the exact optimizer recurrence (velocity update plus weight
/// update, with delayed / weight-difference-predicted gradient reads) from a
/// constant weight history w0 and zero velocity, and estimates the
/// asymptotic geometric decay rate from the tail of the trajectory. This is
/// the independent oracle for char_poly: it never touches the polynomial.
///
/// The rate is fitted on the log of the lag-state norm over the last quarter
/// of the run, through envelope peaks when the trajectory oscillates. The
/// state is renormalized by powers of two whenever it leaves [2^-512, 2^512]
/// so arbitrarily small rates do not underflow.
inline DecayEstimate simulate_recurrence(const QuadraticRecurrence& rec, int steps, double w0) {
  if (steps < 200) throw std::invalid_argument("simulate_recurrence: steps must be >= 200");
  const auto c = rec.resolve();
  const double el = rec.eta_lambda;
  const int d = rec.delay;

  // hist.front() = w[t-D-1], hist.back() = w[t]; u = eta * velocity.
  std::deque<double> hist(static_cast<std::size_t>(d) + 2, w0);
  double u = 0.0;
  double log2_scale = 0.0;
  const double log_cap = std::log(1e100);

  std::vector<double> log_norm(static_cast<std::size_t>(steps),
                               -std::numeric_limits<double>::infinity());
  DecayEstimate out;
  int produced = 0;
  for (int t = 0; t < steps; ++t) {
    const double w_del = hist[1];        // w[t-D]
    const double w_del_prev = hist[0];   // w[t-D-1]
    const double pred = w_del + c.T * (w_del - w_del_prev);
    const double g = el * pred;
    u = rec.m * u + g;
    const double w_next = hist.back() - (c.a * u + c.b * g);
    hist.push_back(w_next);
    hist.pop_front();

    double sq = u * u;
    for (double w : hist) sq += w * w;
    if (sq == 0.0) {
      // Exact finite termination; the trajectory is identically zero.
      return {0.0, false};
    }
    const double ln_norm = 0.5 * std::log(sq) + log2_scale * M_LN2;
    log_norm[static_cast<std::size_t>(t)] = ln_norm;
    produced = t + 1;

    if (std::abs(w_next) > 0.0 &&
        std::log(std::abs(w_next)) + log2_scale * M_LN2 > log_cap) {
      out.diverged = true;
      break;
    }

    // Renormalize to keep the doubles in range; the recurrence is linear so
    // scaling the whole state scales the trajectory uniformly.
    const double mag = std::sqrt(sq);
    if (mag > 0x1.0p512 || mag < 0x1.0p-512) {
      int e = 0;
      std::frexp(mag, &e);
      const double scale = std::ldexp(1.0, -e);
      for (double& w : hist) w *= scale;
      u *= scale;
      log2_scale += e;
    }
  }

  // Fit the tail: last quarter of the produced samples.
  const int lo = produced - std::max(produced / 4, 8);
  std::vector<int> pts;
  for (int t = std::max(lo, 1); t + 1 < produced; ++t) {
    const double prev = log_norm[static_cast<std::size_t>(t - 1)];
    const double cur = log_norm[static_cast<std::size_t>(t)];
    const double next = log_norm[static_cast<std::size_t>(t + 1)];
    if (cur >= prev && cur >= next) pts.push_back(t);
  }
  if (pts.size() < 5) {
    pts.clear();
    for (int t = std::max(lo, 0); t < produced; ++t) pts.push_back(t);
  }
  if (pts.size() < 2) return {out.diverged ? 2.0 : 0.0, out.diverged};

  double mean_t = 0.0, mean_y = 0.0;
  for (int t : pts) {
    mean_t += t;
    mean_y += log_norm[static_cast<std::size_t>(t)];
  }
  mean_t /= static_cast<double>(pts.size());
  mean_y /= static_cast<double>(pts.size());
  double num = 0.0, den = 0.0;
  for (int t : pts) {
    const double dt = t - mean_t;
    num += dt * (log_norm[static_cast<std::size_t>(t)] - mean_y);
    den += dt * dt;
  }
  out.rate = std::exp(num / den);
  if (out.diverged && out.rate <= 1.0) out.rate = std::nextafter(1.0, 2.0);
  if (out.rate >= 1.0) out.diverged = true;
  return out;
}

inline std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw std::invalid_argument("linspace: n >= 1");
  std::vector<double> v(static_cast<std::size_t>(n));
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1);
  return v;
}

inline std::vector<double> logspace(double lo, double hi, int n) {
  if (lo <= 0.0 || hi <= 0.0) throw std::invalid_argument("logspace: bounds must be positive");
  std::vector<double> v = linspace(std::log(lo), std::log(hi), n);
  for (double& x : v) x = std::exp(x);
  return v;
}

struct HeatmapResult {
  std::vector<double> m_grid;
  std::vector<double> eta_lambda_grid;
  /// r_max[i][j] for (m_grid[i], eta_lambda_grid[j]).
  std::vector<std::vector<double>> r_max;
};

/// Pointwise dominant-root magnitudes over a (momentum, eta*lambda) grid.
/// Cells are independent; evaluation order does not affect the result.
inline HeatmapResult stability_heatmap(RecMethod method, int delay,
                                       const std::vector<double>& m_grid,
                                       const std::vector<double>& eta_lambda_grid,
                                       std::optional<double> a = std::nullopt,
                                       std::optional<double> b = std::nullopt,
                                       std::optional<double> T = std::nullopt) {
  if (m_grid.empty() || eta_lambda_grid.empty()) {
    throw std::invalid_argument("stability_heatmap: grids must be nonempty");
  }
  HeatmapResult res;
  res.m_grid = m_grid;
  res.eta_lambda_grid = eta_lambda_grid;
  res.r_max.resize(m_grid.size());
  for (std::size_t i = 0; i < m_grid.size(); ++i) {
    res.r_max[i].resize(eta_lambda_grid.size());
    for (std::size_t j = 0; j < eta_lambda_grid.size(); ++j) {
      QuadraticRecurrence rec{method, m_grid[i], eta_lambda_grid[j], delay, a, b, T};
      res.r_max[i][j] = max_root_magnitude(char_poly(rec)).r_max;
    }
  }
  return res;
}

struct HalfLifeResult {
  double half_life = std::numeric_limits<double>::infinity();
  double r_star = std::numeric_limits<double>::infinity();
  /// Normalized rate at the lower interval edge, eta * lambda_min.
  double eta_star = 0.0;
  double m_star = 0.0;
  double kappa = 1.0;
  int delay = 0;
  bool feasible = false;
};

struct SearchSpec {
  /// Log-spaced candidates for the lower interval edge x = eta*lambda_min;
  /// the evaluated spectrum spans [x, x*kappa].
  double x_min = 0.0;  // 0 means auto: min(1e-7, 0.4 / kappa)
  double x_max = 8.0;
  int interval_samples = 200;
  int m_points = 100;
  double m_min = 0.0;
  double m_max = 0.9999;
  /// Local grid-refinement passes around the best coarse candidate.
  int refine_rounds = 2;
  int refine_points = 17;
};

namespace detail {

inline double halflife_from_rate(double r) {
  if (r >= 1.0) return std::numeric_limits<double>::infinity();
  if (r <= 0.0) return 0.0;
  return -M_LN2 / std::log(r);
}

/// Worst dominant root over an eigenvalue interval [x, x*kappa], sampled at
/// `samples` log-spaced normalized rates.
inline double interval_max_rmax(RecMethod method, double m, int delay, double x, double kappa,
                                int samples) {
  double worst = 0.0;
  const double step = samples > 1 ? std::log(kappa) / (samples - 1) : 0.0;
  for (int j = 0; j < samples; ++j) {
    const double el = x * std::exp(step * j);
    QuadraticRecurrence rec{method, m, el, delay, std::nullopt, std::nullopt, std::nullopt};
    worst = std::max(worst, max_root_magnitude(char_poly(rec)).r_max);
    if (worst >= 1.0) break;  // candidate is already infeasible
  }
  return worst;
}

}  // namespace detail

/// Best achievable half-life for a dense spectrum with condition number
/// kappa: minimizes, over (eta, m) candidates, the worst dominant root across
/// a length-kappa interval of normalized rates positioned by eta. A shared
/// log grid makes the coarse scan cheap (every interval is a sliding window
/// over one precomputed row); local refinement then tightens the optimum.
inline HalfLifeResult optimal_halflife(RecMethod method, double kappa, int delay,
                                       const SearchSpec& spec = {}) {
  if (kappa < 1.0) throw std::invalid_argument("optimal_halflife: kappa >= 1");
  if (delay < 0) throw std::invalid_argument("optimal_halflife: delay >= 0");
  HalfLifeResult best;
  best.kappa = kappa;
  best.delay = delay;

  const double x_min = spec.x_min > 0.0 ? spec.x_min : std::min(1e-7, 0.4 / kappa);
  const std::vector<double> m_grid = linspace(spec.m_min, spec.m_max, spec.m_points);

  double m_spacing =
      spec.m_points > 1 ? (spec.m_max - spec.m_min) / (spec.m_points - 1) : 0.1;
  double x_log_spacing;

  if (kappa > 1.0 + 1e-12) {
    const int window = spec.interval_samples - 1;
    const double step = std::log(kappa) / window;
    x_log_spacing = step;
    const int n = static_cast<int>(std::ceil(std::log(spec.x_max * kappa / x_min) / step)) + 1;
    std::vector<double> row(static_cast<std::size_t>(n));
    for (double m : m_grid) {
      for (int j = 0; j < n; ++j) {
        QuadraticRecurrence rec{method, m, x_min * std::exp(step * j), delay,
                                std::nullopt, std::nullopt, std::nullopt};
        row[static_cast<std::size_t>(j)] = max_root_magnitude(char_poly(rec)).r_max;
      }
      // Sliding-window maximum over every interval position.
      std::deque<int> dq;
      for (int j = 0; j < n; ++j) {
        while (!dq.empty() && row[static_cast<std::size_t>(dq.back())] <=
                                  row[static_cast<std::size_t>(j)]) {
          dq.pop_back();
        }
        dq.push_back(j);
        const int start = j - window;
        if (start < 0) continue;
        if (dq.front() < start) dq.pop_front();
        const double worst = row[static_cast<std::size_t>(dq.front())];
        if (worst < best.r_star) {
          best.r_star = worst;
          best.m_star = m;
          best.eta_star = x_min * std::exp(step * start);
        }
      }
    }
  } else {
    // kappa == 1: a single eigenvalue, no interval to cover.
    x_log_spacing = std::log(spec.x_max / x_min) / std::max(1, 3 * spec.interval_samples - 1);
    const std::vector<double> xs = logspace(x_min, spec.x_max, 3 * spec.interval_samples);
    for (double m : m_grid) {
      for (double x : xs) {
        QuadraticRecurrence rec{method, m, x, delay, std::nullopt, std::nullopt, std::nullopt};
        const double r = max_root_magnitude(char_poly(rec)).r_max;
        if (r < best.r_star) {
          best.r_star = r;
          best.m_star = m;
          best.eta_star = x;
        }
      }
    }
  }

  for (int round = 0; round < spec.refine_rounds; ++round) {
    if (!(best.r_star < 1.0)) break;
    const int pts = spec.refine_points;
    const std::vector<double> ms =
        linspace(std::max(spec.m_min, best.m_star - 2.0 * m_spacing),
                 std::min(spec.m_max, best.m_star + 2.0 * m_spacing), pts);
    const std::vector<double> xs = logspace(best.eta_star * std::exp(-2.0 * x_log_spacing),
                                            best.eta_star * std::exp(2.0 * x_log_spacing), pts);
    for (double m : ms) {
      for (double x : xs) {
        const double worst =
            detail::interval_max_rmax(method, m, delay, x, kappa, spec.interval_samples);
        if (worst < best.r_star) {
          best.r_star = worst;
          best.m_star = m;
          best.eta_star = x;
        }
      }
    }
    m_spacing = 4.0 * m_spacing / (pts - 1);
    x_log_spacing = 4.0 * x_log_spacing / (pts - 1);
  }

  best.feasible = best.r_star < 1.0;
  best.half_life = detail::halflife_from_rate(best.r_star);
  return best;
}

/// Closed-form optimal momentum for a quadratic with condition number kappa
/// and no delay: ((sqrt(kappa) - 1) / (sqrt(kappa) + 1))^2.
inline double optimal_momentum_nodelay(double kappa) {
  if (kappa < 1.0) throw std::invalid_argument("optimal_momentum_nodelay: kappa >= 1");
  const double s = std::sqrt(kappa);
  const double r = (s - 1.0) / (s + 1.0);
  return r * r;
}

struct HorizonSweepRow {
  double m = 0.0;
  double t_scale = 0.0;
  double r_star = std::numeric_limits<double>::infinity();
  double half_life = std::numeric_limits<double>::infinity();
  bool feasible = false;
};

/// Best half-life over the learning rate for each (momentum, horizon-scale)
/// pair, with prediction horizon T = t_scale * delay. t_scale = 0 reproduces
/// the delayed baseline without prediction.
inline std::vector<HorizonSweepRow> momentum_horizon_sweep(double kappa, int delay,
                                                           const std::vector<double>& m_grid,
                                                           const std::vector<double>& t_scale_grid,
                                                           const SearchSpec& spec = {}) {
  if (kappa <= 1.0) throw std::invalid_argument("momentum_horizon_sweep: kappa > 1");
  if (m_grid.empty() || t_scale_grid.empty()) {
    throw std::invalid_argument("momentum_horizon_sweep: grids must be nonempty");
  }
  const double x_min = spec.x_min > 0.0 ? spec.x_min : std::min(1e-7, 0.4 / kappa);
  const int window = spec.interval_samples - 1;
  const double step = std::log(kappa) / window;
  const int n = static_cast<int>(std::ceil(std::log(spec.x_max * kappa / x_min) / step)) + 1;

  std::vector<HorizonSweepRow> rows;
  rows.reserve(m_grid.size() * t_scale_grid.size());
  std::vector<double> row(static_cast<std::size_t>(n));
  for (double m : m_grid) {
    for (double alpha : t_scale_grid) {
      HorizonSweepRow out;
      out.m = m;
      out.t_scale = alpha;
      const double T = alpha * delay;
      for (int j = 0; j < n; ++j) {
        QuadraticRecurrence rec{RecMethod::kLwp, m, x_min * std::exp(step * j), delay,
                                std::nullopt, std::nullopt, T};
        row[static_cast<std::size_t>(j)] = max_root_magnitude(char_poly(rec)).r_max;
      }
      std::deque<int> dq;
      for (int j = 0; j < n; ++j) {
        while (!dq.empty() && row[static_cast<std::size_t>(dq.back())] <=
                                  row[static_cast<std::size_t>(j)]) {
          dq.pop_back();
        }
        dq.push_back(j);
        const int start = j - window;
        if (start < 0) continue;
        if (dq.front() < start) dq.pop_front();
        out.r_star = std::min(out.r_star, row[static_cast<std::size_t>(dq.front())]);
      }
      out.feasible = out.r_star < 1.0;
      out.half_life = detail::halflife_from_rate(out.r_star);
      rows.push_back(out);
    }
  }
  return rows;
}

}  // namespace pbopt::quad

#endif  // PBOPT_QUADRATIC_HPP_
