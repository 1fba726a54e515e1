/*
 * Copyright 2026 The TPFL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TPFL_DATA_FORGE_H_
#define TPFL_DATA_FORGE_H_

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tpfl/rng.h"

namespace tpfl {

// n x d feature matrix (row-major) with integer labels in [0, k).
struct LabeledDataset {
  size_t dim = 0;
  size_t num_classes = 0;
  std::vector<double> features;
  std::vector<int> labels;

  size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(size_t i) const {
    return std::span<const double>(features).subspan(i * dim, dim);
  }
  void Append(std::span<const double> x, int label);
  LabeledDataset Subset(std::span<const size_t> indices) const;
  // Samples per class, length num_classes.
  std::vector<size_t> ClassCounts() const;
  // Throws DomainError on an empty set, bad labels or non-finite features.
  void Validate() const;
};

// Dense row-major feature matrix without labels.
struct FeatureMatrix {
  size_t dim = 0;
  std::vector<double> values;

  size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const double> row(size_t i) const {
    return std::span<const double>(values).subspan(i * dim, dim);
  }
};

struct PartitionSpec {
  size_t num_clients = 10;
  double beta = 0.1;
  uint64_t seed = 0;

  void Validate() const;
};

// Blob centres: k points on a circle of radius `radius` in the first two
// coordinates (on a line when dim == 1).
std::vector<std::vector<double>> BlobCenters(size_t k, size_t dim, double radius);

// k isotropic Gaussian clusters with per_class samples each, class-major
// order. `radius` places the centres (see BlobCenters).
LabeledDataset MakeBlobs(size_t k, size_t per_class, size_t dim, double spread,
                         RngStream& rng, double radius = 4.0);

// Per-class Dir(beta 1_N) proportions split each class across N clients.
// Empty clients trigger a full redraw (up to 100 times) and then a
// round-robin repair that moves samples from the largest clients.
std::vector<LabeledDataset> DirichletPartition(const LabeledDataset& data,
                                               const PartitionSpec& spec);

// Down-sample classes larger than T to T, where T is the smallest class count
// that is >= filter_no. Throws DomainError if no class reaches filter_no.
LabeledDataset RebalanceDown(const LabeledDataset& data, size_t filter_no, RngStream& rng);

// Up-sample (with replacement) every class with at least filter_no samples to
// the largest class count. Smaller classes are carried over untouched.
LabeledDataset RebalanceUp(const LabeledDataset& data, size_t filter_no, RngStream& rng);

// Per-class centroids of a dataset (rows for empty classes are left empty).
std::vector<std::vector<double>> ClassCentroids(const LabeledDataset& data);

// Out-of-distribution points drawn uniformly from a box three times the
// in-distribution bounding box (same centre), rejecting anything closer to a
// class centroid than the exclusion radius (see OodExclusionRadius).
FeatureMatrix MakeOod(size_t n, const LabeledDataset& in_dist, RngStream& rng);

// max(2 x RMS distance of samples to their own centroid,
//     99th percentile of in-distribution nearest-centroid distances).
double OodExclusionRadius(const LabeledDataset& in_dist);

// Stratified split; returns (train, test). Every class with >= 2 samples
// contributes at least one sample to each side.
std::pair<LabeledDataset, LabeledDataset> SplitTrainTest(const LabeledDataset& data,
                                                         double test_fraction, RngStream& rng);

struct DelimitedSchema {
  // Column holding the label; negative counts from the end (-1 = last).
  int label_column = -1;
  // 0 auto-detects comma or tab from the first data line.
  char delimiter = 0;
  // Skip the first line. When false, a first line that does not parse as
  // numbers is still treated as a header.
  bool header = false;
  // 0 infers max(label) + 1.
  size_t num_classes = 0;
};

// Throws ParseError (with line/column) for malformed cells or out-of-range
// labels and EmptyInputError for a file without data rows.
LabeledDataset LoadDelimited(const std::string& path, const DelimitedSchema& schema);
LabeledDataset ParseDelimited(const std::string& text, const DelimitedSchema& schema);

}  // namespace tpfl

#endif  // TPFL_DATA_FORGE_H_
