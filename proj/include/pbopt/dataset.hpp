// SPDX-License-Identifier: Apache-2.0
#ifndef PBOPT_DATASET_HPP_
#define PBOPT_DATASET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pbopt/param_vector.hpp"
#include "pbopt/rng.hpp"

namespace pbopt::data {

// Synthetic desk-scale datasets. Generation is fully deterministic given the
// spec (including the seed): the same spec always produces byte-identical
// data.

enum class DatasetKind { kGaussianBlobs, kTwoSpirals, kQuadraticRegression, kCsvFile };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kGaussianBlobs;
  int n_samples = 0;
  int n_features = 0;
  int n_classes = 0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string path;

  void validate() const {
    if (kind == DatasetKind::kCsvFile) {
      if (path.empty()) throw std::invalid_argument("dataset: csv_file requires a path");
      return;
    }
    if (n_samples < 1) throw std::invalid_argument("dataset: n_samples must be >= 1");
    if (noise < 0.0) throw std::invalid_argument("dataset: noise must be >= 0");
    if (kind == DatasetKind::kTwoSpirals) {
      if (n_features != 2) throw std::invalid_argument("dataset: two_spirals requires n_features=2");
      if (n_classes != 2) throw std::invalid_argument("dataset: two_spirals requires n_classes=2");
    } else if (kind == DatasetKind::kGaussianBlobs) {
      if (n_features < 1) throw std::invalid_argument("dataset: n_features must be >= 1");
      if (n_classes < 2) throw std::invalid_argument("dataset: gaussian_blobs requires n_classes >= 2");
    } else {
      if (n_features < 1) throw std::invalid_argument("dataset: n_features must be >= 1");
    }
  }
};

struct Dataset {
  int n_features = 0;
  int n_classes = 0;  // 0 for regression
  bool classification = true;
  std::vector<ParamVector> x;
  std::vector<int> labels;           // -1 for regression rows
  std::vector<ParamVector> targets;  // one-hot (classification) or real targets

  std::size_t size() const { return x.size(); }
  int target_dim() const { return classification ? n_classes : 1; }

  bool operator==(const Dataset& other) const {
    return n_features == other.n_features && n_classes == other.n_classes &&
           classification == other.classification && x == other.x && labels == other.labels &&
           targets == other.targets;
  }
};

namespace detail {

inline ParamVector one_hot(int label, int n_classes) {
  ParamVector t(static_cast<std::size_t>(n_classes), 0.0);
  t[static_cast<std::size_t>(label)] = 1.0;
  return t;
}

inline Dataset gen_blobs(const DatasetSpec& spec) {
  Dataset ds;
  ds.n_features = spec.n_features;
  ds.n_classes = spec.n_classes;
  ds.classification = true;
  Rng rng(spec.seed);
  // Class centers on the unit sphere: antipodal for two classes, otherwise
  // random directions kept at least 30 degrees apart so classes never
  // collapse onto each other. Labels go round-robin so classes stay balanced
  // within one sample.
  std::vector<ParamVector> centers;
  while (static_cast<int>(centers.size()) < spec.n_classes) {
    if (spec.n_classes == 2 && centers.size() == 1) {
      ParamVector c = centers[0];
      c *= -1.0;
      centers.push_back(std::move(c));
      break;
    }
    ParamVector c(static_cast<std::size_t>(spec.n_features));
    for (auto& v : c) v = rng.normal();
    const double n = c.norm2();
    if (n == 0.0) continue;
    c *= 1.0 / n;
    bool ok = true;
    for (const auto& other : centers) {
      double dot = 0.0;
      for (std::size_t i = 0; i < c.size(); ++i) dot += c[i] * other[i];
      if (dot > std::cos(M_PI / 6.0)) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(c));
  }
  for (int i = 0; i < spec.n_samples; ++i) {
    const int label = i % spec.n_classes;
    ParamVector xi = centers[static_cast<std::size_t>(label)];
    for (auto& v : xi) v += spec.noise * rng.normal();
    ds.x.push_back(std::move(xi));
    ds.labels.push_back(label);
    ds.targets.push_back(one_hot(label, spec.n_classes));
  }
  return ds;
}

inline Dataset gen_spirals(const DatasetSpec& spec) {
  Dataset ds;
  ds.n_features = 2;
  ds.n_classes = 2;
  ds.classification = true;
  Rng rng(spec.seed);
  const int per_class = (spec.n_samples + 1) / 2;
  for (int i = 0; i < spec.n_samples; ++i) {
    const int label = i % 2;
    const int j = i / 2;
    const double t = per_class > 1 ? static_cast<double>(j) / (per_class - 1) : 0.0;
    const double radius = 0.5 + 2.5 * t;
    const double angle = 3.0 * M_PI * t + M_PI * label;
    ParamVector xi{radius * std::cos(angle) + spec.noise * rng.normal(),
                   radius * std::sin(angle) + spec.noise * rng.normal()};
    ds.x.push_back(std::move(xi));
    ds.labels.push_back(label);
    ds.targets.push_back(one_hot(label, 2));
  }
  return ds;
}

inline Dataset gen_quadratic_regression(const DatasetSpec& spec) {
  Dataset ds;
  ds.n_features = spec.n_features;
  ds.n_classes = 0;
  ds.classification = false;
  Rng rng(spec.seed);
  // Linear ground truth; squared-error training on it is a convex quadratic.
  ParamVector w_true(static_cast<std::size_t>(spec.n_features));
  for (auto& v : w_true) v = rng.normal() / std::sqrt(static_cast<double>(spec.n_features));
  const double b_true = rng.normal();
  for (int i = 0; i < spec.n_samples; ++i) {
    ParamVector xi(static_cast<std::size_t>(spec.n_features));
    for (auto& v : xi) v = rng.normal();
    double y = b_true;
    for (int d = 0; d < spec.n_features; ++d) y += w_true[d] * xi[d];
    y += spec.noise * rng.normal();
    ds.x.push_back(std::move(xi));
    ds.labels.push_back(-1);
    ds.targets.push_back(ParamVector{y});
  }
  return ds;
}

}  // namespace detail

inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path);
  char buf[40];
  for (int d = 0; d < ds.n_features; ++d) out << "feature_" << d << ",";
  out << (ds.classification ? "label" : "target") << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (int d = 0; d < ds.n_features; ++d) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.x[i][static_cast<std::size_t>(d)]);
      out << buf << ",";
    }
    if (ds.classification) {
      out << ds.labels[i];
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", ds.targets[i][0]);
      out << buf;
    }
    out << "\n";
  }
}

inline Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path);
  Dataset ds;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: " + path + ":1: empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2) throw std::runtime_error("read_csv: " + path + ":1: need features and a label/target column");
  ds.classification = header.back() == "label";
  if (!ds.classification && header.back() != "target") {
    throw std::runtime_error("read_csv: " + path + ":1: last column must be 'label' or 'target'");
  }
  ds.n_features = static_cast<int>(header.size()) - 1;
  int line_no = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    ParamVector xi(static_cast<std::size_t>(ds.n_features));
    for (int d = 0; d < ds.n_features; ++d) {
      if (!std::getline(ss, cell, ',')) {
        throw std::runtime_error("read_csv: " + path + ":" + std::to_string(line_no) +
                                 ": expected " + std::to_string(ds.n_features + 1) + " columns");
      }
      try {
        xi[static_cast<std::size_t>(d)] = std::stod(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("read_csv: " + path + ":" + std::to_string(line_no) +
                                 ": bad number '" + cell + "'");
      }
    }
    if (!std::getline(ss, cell, ',')) {
      throw std::runtime_error("read_csv: " + path + ":" + std::to_string(line_no) +
                               ": missing label/target column");
    }
    try {
      if (ds.classification) {
        const int label = std::stoi(cell);
        if (label < 0) throw std::invalid_argument("negative label");
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
      } else {
        ds.targets.push_back(ParamVector{std::stod(cell)});
        ds.labels.push_back(-1);
      }
    } catch (const std::exception&) {
      throw std::runtime_error("read_csv: " + path + ":" + std::to_string(line_no) +
                               ": bad label/target '" + cell + "'");
    }
    ds.x.push_back(std::move(xi));
  }
  if (ds.classification) {
    ds.n_classes = max_label + 1;
    if (ds.n_classes < 2) {
      throw std::runtime_error("read_csv: " + path + ": classification data needs >= 2 classes");
    }
    for (int label : ds.labels) ds.targets.push_back(detail::one_hot(label, ds.n_classes));
  }
  return ds;
}

inline Dataset gen_dataset(const DatasetSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case DatasetKind::kGaussianBlobs:
      return detail::gen_blobs(spec);
    case DatasetKind::kTwoSpirals:
      return detail::gen_spirals(spec);
    case DatasetKind::kQuadraticRegression:
      return detail::gen_quadratic_regression(spec);
    case DatasetKind::kCsvFile:
      return read_csv(spec.path);
  }
  throw std::logic_error("gen_dataset: unknown kind");
}

/// Deterministic sample order: either sequential cycling or a reshuffle at
/// every epoch, driven by the stream's own seed.
class SampleStream {
 public:
  SampleStream(const Dataset& ds, std::uint64_t seed, bool shuffle = true)
      : ds_(&ds), rng_(seed), shuffle_(shuffle), order_(ds.size()) {
    if (ds.size() == 0) throw std::invalid_argument("SampleStream: empty dataset");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle_) rng_.shuffle(order_);
  }

  std::size_t next_index() {
    if (pos_ == order_.size()) {
      pos_ = 0;
      if (shuffle_) rng_.shuffle(order_);
    }
    return order_[pos_++];
  }

  const Dataset& dataset() const { return *ds_; }

 private:
  const Dataset* ds_;
  Rng rng_;
  bool shuffle_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace pbopt::data

#endif  // PBOPT_DATASET_HPP_
