// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_PARAM_VECTOR_HPP_
#define PBOPT_PARAM_VECTOR_HPP_

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace pbopt {

/// Flat double-precision parameter container. Holds weights, velocities and
/// gradients. The length is fixed at construction; elementwise operations
/// check lengths and throw std::invalid_argument on mismatch.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
  ParamVector(std::initializer_list<double> init) : values_(init) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  const std::vector<double>& values() const { return values_; }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  ParamVector& operator+=(const ParamVector& other) {
    check_same_size(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  ParamVector& operator-=(const ParamVector& other) {
    check_same_size(other);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
  }

  ParamVector& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }

  /// this += alpha * x
  ParamVector& axpy(double alpha, const ParamVector& x) {
    check_same_size(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += alpha * x.values_[i];
    return *this;
  }

  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator*(double s, ParamVector a) { return a *= s; }

  bool operator==(const ParamVector& other) const { return values_ == other.values_; }

  double norm2() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  void check_same_size(const ParamVector& other) const {
    if (values_.size() != other.values_.size()) {
      throw std::invalid_argument("ParamVector: length mismatch (" +
                                  std::to_string(values_.size()) + " vs " +
                                  std::to_string(other.values_.size()) + ")");
    }
  }

  std::vector<double> values_;
};

}  // namespace pbopt

#endif  // PBOPT_PARAM_VECTOR_HPP_
