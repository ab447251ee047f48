// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_STATS_HPP_
#define PBOPT_STATS_HPP_

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace pbopt::stats {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator).
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) throw std::invalid_argument("sample_std: need >= 2 values");
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct TTest {
  double t = 0.0;
  double df = 0.0;
  double p_one_sided = 1.0;  // P(T >= t) under H0
};

/// Welch's t-test for H1: mean(a) > mean(b).
inline TTest welch_one_sided_greater(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch: need >= 2 values each");
  const double ma = mean(a), mb = mean(b);
  const double va = sample_std(a) * sample_std(a) / static_cast<double>(a.size());
  const double vb = sample_std(b) * sample_std(b) / static_cast<double>(b.size());
  TTest res;
  res.t = (ma - mb) / std::sqrt(va + vb);
  res.df = (va + vb) * (va + vb) /
           (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  boost::math::students_t dist(res.df);
  res.p_one_sided = boost::math::cdf(boost::math::complement(dist, res.t));
  return res;
}

/// Paired t-test for H1: mean(a - b) > 0, with a and b matched elementwise
/// (same seeds).
inline TTest paired_one_sided_greater(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired t: need >= 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  TTest res;
  res.df = static_cast<double>(d.size() - 1);
  res.t = mean(d) / (sample_std(d) / std::sqrt(static_cast<double>(d.size())));
  boost::math::students_t dist(res.df);
  res.p_one_sided = boost::math::cdf(boost::math::complement(dist, res.t));
  return res;
}

}  // namespace pbopt::stats

#endif  // PBOPT_STATS_HPP_
