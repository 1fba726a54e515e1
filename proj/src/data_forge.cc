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

#include "tpfl/data_forge.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string_view>

#include "tpfl/errors.h"
#include "tpfl/special_fns.h"

namespace tpfl {
namespace {

constexpr int kMaxPartitionRedraws = 100;

std::vector<std::vector<size_t>> IndicesByClass(const LabeledDataset& data) {
  std::vector<std::vector<size_t>> by_class(data.num_classes);
  for (size_t i = 0; i < data.size(); ++i) {
    by_class[static_cast<size_t>(data.labels[i])].push_back(i);
  }
  return by_class;
}

double SquaredDistance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

double NearestCentroidDistance(std::span<const double> x,
                               const std::vector<std::vector<double>>& centroids) {
  double best = INFINITY;
  for (const auto& c : centroids) {
    if (c.empty()) continue;
    best = std::min(best, SquaredDistance(x, c));
  }
  return std::sqrt(best);
}

// Splits `count` items according to `proportions` using cumulative rounding.
std::vector<size_t> SplitCounts(size_t count, const std::vector<double>& proportions) {
  std::vector<size_t> sizes(proportions.size(), 0);
  double cumulative = 0.0;
  size_t assigned = 0;
  for (size_t c = 0; c < proportions.size(); ++c) {
    cumulative += proportions[c];
    size_t upto = (c + 1 == proportions.size())
                      ? count
                      : std::min(count, static_cast<size_t>(std::llround(cumulative * count)));
    upto = std::max(upto, assigned);
    sizes[c] = upto - assigned;
    assigned = upto;
  }
  return sizes;
}

}  // namespace

void LabeledDataset::Append(std::span<const double> x, int label) {
  if (x.size() != dim) throw ShapeError("dataset: row dimension mismatch");
  features.insert(features.end(), x.begin(), x.end());
  labels.push_back(label);
}

LabeledDataset LabeledDataset::Subset(std::span<const size_t> indices) const {
  LabeledDataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (size_t i : indices) {
    if (i >= size()) throw DomainError("dataset: subset index out of range");
    out.Append(row(i), labels[i]);
  }
  return out;
}

std::vector<size_t> LabeledDataset::ClassCounts() const {
  std::vector<size_t> counts(num_classes, 0);
  for (int y : labels) ++counts[static_cast<size_t>(y)];
  return counts;
}

void LabeledDataset::Validate() const {
  if (empty()) throw EmptyInputError("dataset: no samples");
  if (dim == 0) throw DomainError("dataset: zero feature dimension");
  if (features.size() != labels.size() * dim) throw ShapeError("dataset: feature matrix size");
  for (int y : labels) {
    if (y < 0 || static_cast<size_t>(y) >= num_classes) {
      throw DomainError("dataset: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw DomainError("dataset: non-finite feature value");
  }
}

void PartitionSpec::Validate() const {
  std::vector<std::string> problems;
  if (num_clients < 2) problems.push_back("num_clients: must be >= 2");
  if (!(beta > 0.0) || !std::isfinite(beta)) problems.push_back("beta: must be > 0");
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

std::vector<std::vector<double>> BlobCenters(size_t k, size_t dim, double radius) {
  std::vector<std::vector<double>> centers(k, std::vector<double>(dim, 0.0));
  for (size_t c = 0; c < k; ++c) {
    if (dim == 1) {
      centers[c][0] = radius * (static_cast<double>(c) - 0.5 * static_cast<double>(k - 1));
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
      centers[c][0] = radius * std::cos(angle);
      centers[c][1] = radius * std::sin(angle);
    }
  }
  return centers;
}

LabeledDataset MakeBlobs(size_t k, size_t per_class, size_t dim, double spread,
                         RngStream& rng, double radius) {
  if (k < 2) throw DomainError("make_blobs: need at least two classes");
  if (per_class == 0) throw DomainError("make_blobs: per_class must be positive");
  if (dim == 0) throw DomainError("make_blobs: dim must be positive");
  if (!(spread >= 0.0)) throw DomainError("make_blobs: spread must be nonnegative");
  const auto centers = BlobCenters(k, dim, radius);
  LabeledDataset data;
  data.dim = dim;
  data.num_classes = k;
  data.features.reserve(k * per_class * dim);
  std::vector<double> x(dim);
  for (size_t c = 0; c < k; ++c) {
    for (size_t i = 0; i < per_class; ++i) {
      for (size_t d = 0; d < dim; ++d) x[d] = centers[c][d] + spread * rng.Normal();
      data.Append(x, static_cast<int>(c));
    }
  }
  return data;
}

std::vector<LabeledDataset> DirichletPartition(const LabeledDataset& data,
                                               const PartitionSpec& spec) {
  spec.Validate();
  data.Validate();
  const size_t n_clients = spec.num_clients;
  if (data.size() < n_clients) {
    throw DomainError("dirichlet_partition: fewer samples than clients");
  }
  RngStream rng(spec.seed, StreamKey("part"));
  auto by_class = IndicesByClass(data);
  for (auto& idx : by_class) rng.Shuffle(idx);

  const std::vector<double> concentration(n_clients, spec.beta);
  std::vector<std::vector<size_t>> assignment;
  for (int attempt = 0; attempt < kMaxPartitionRedraws; ++attempt) {
    assignment.assign(n_clients, {});
    for (const auto& idx : by_class) {
      if (idx.empty()) continue;
      const auto sizes = SplitCounts(idx.size(), DirichletSample(rng, concentration));
      size_t pos = 0;
      for (size_t c = 0; c < n_clients; ++c) {
        assignment[c].insert(assignment[c].end(), idx.begin() + pos,
                             idx.begin() + pos + sizes[c]);
        pos += sizes[c];
      }
    }
    const bool all_nonempty = std::all_of(assignment.begin(), assignment.end(),
                                          [](const auto& a) { return !a.empty(); });
    if (all_nonempty) break;
  }
  // Round-robin repair: give each empty client one sample from the currently
  // largest client.
  for (size_t c = 0; c < n_clients; ++c) {
    if (!assignment[c].empty()) continue;
    auto largest = std::max_element(assignment.begin(), assignment.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    if (largest->size() < 2) throw DomainError("dirichlet_partition: repair failed");
    assignment[c].push_back(largest->back());
    largest->pop_back();
  }
  std::vector<LabeledDataset> parts;
  parts.reserve(n_clients);
  for (auto& idx : assignment) {
    std::sort(idx.begin(), idx.end());
    parts.push_back(data.Subset(idx));
  }
  return parts;
}

LabeledDataset RebalanceDown(const LabeledDataset& data, size_t filter_no, RngStream& rng) {
  data.Validate();
  const auto counts = data.ClassCounts();
  size_t target = 0;
  for (size_t c : counts) {
    if (c >= filter_no && (target == 0 || c < target)) target = c;
  }
  if (target == 0) {
    throw DomainError("rebalance_down: no class has at least " + std::to_string(filter_no) +
                      " samples");
  }
  auto by_class = IndicesByClass(data);
  std::vector<size_t> selected;
  for (auto& idx : by_class) {
    if (idx.size() > target) {
      rng.Shuffle(idx);
      idx.resize(target);
      std::sort(idx.begin(), idx.end());
    }
    selected.insert(selected.end(), idx.begin(), idx.end());
  }
  return data.Subset(selected);
}

LabeledDataset RebalanceUp(const LabeledDataset& data, size_t filter_no, RngStream& rng) {
  data.Validate();
  const auto counts = data.ClassCounts();
  const size_t target = *std::max_element(counts.begin(), counts.end());
  auto by_class = IndicesByClass(data);
  std::vector<size_t> selected;
  for (const auto& idx : by_class) {
    selected.insert(selected.end(), idx.begin(), idx.end());
    if (idx.empty() || idx.size() < filter_no) continue;
    for (size_t extra = idx.size(); extra < target; ++extra) {
      selected.push_back(idx[rng.UniformIndex(idx.size())]);
    }
  }
  return data.Subset(selected);
}

std::vector<std::vector<double>> ClassCentroids(const LabeledDataset& data) {
  std::vector<std::vector<double>> sums(data.num_classes);
  const auto counts = data.ClassCounts();
  for (size_t c = 0; c < data.num_classes; ++c) {
    if (counts[c] > 0) sums[c].assign(data.dim, 0.0);
  }
  for (size_t i = 0; i < data.size(); ++i) {
    auto& s = sums[static_cast<size_t>(data.labels[i])];
    const auto x = data.row(i);
    for (size_t d = 0; d < data.dim; ++d) s[d] += x[d];
  }
  for (size_t c = 0; c < data.num_classes; ++c) {
    for (double& v : sums[c]) v /= static_cast<double>(counts[c]);
  }
  return sums;
}

double OodExclusionRadius(const LabeledDataset& in_dist) {
  in_dist.Validate();
  const auto centroids = ClassCentroids(in_dist);
  double sq_own = 0.0;
  std::vector<double> nearest(in_dist.size());
  for (size_t i = 0; i < in_dist.size(); ++i) {
    const auto x = in_dist.row(i);
    sq_own += SquaredDistance(x, centroids[static_cast<size_t>(in_dist.labels[i])]);
    nearest[i] = NearestCentroidDistance(x, centroids);
  }
  const double rms = std::sqrt(sq_own / static_cast<double>(in_dist.size()));
  std::sort(nearest.begin(), nearest.end());
  const size_t q = std::min(nearest.size() - 1,
                            static_cast<size_t>(std::ceil(0.99 * nearest.size())) - 1);
  return std::max(2.0 * rms, nearest[q]);
}

FeatureMatrix MakeOod(size_t n, const LabeledDataset& in_dist, RngStream& rng) {
  if (n == 0) throw DomainError("make_ood: n must be positive");
  in_dist.Validate();
  const size_t dim = in_dist.dim;
  std::vector<double> lo(dim, INFINITY), hi(dim, -INFINITY);
  for (size_t i = 0; i < in_dist.size(); ++i) {
    const auto x = in_dist.row(i);
    for (size_t d = 0; d < dim; ++d) {
      lo[d] = std::min(lo[d], x[d]);
      hi[d] = std::max(hi[d], x[d]);
    }
  }
  const auto centroids = ClassCentroids(in_dist);
  const double exclusion = OodExclusionRadius(in_dist);

  FeatureMatrix out;
  out.dim = dim;
  out.values.reserve(n * dim);
  std::vector<double> x(dim);
  const size_t max_attempts = 1000 * n;
  size_t attempts = 0;
  while (out.rows() < n) {
    if (++attempts > max_attempts) {
      throw DomainError("make_ood: rejection sampling exhausted");
    }
    for (size_t d = 0; d < dim; ++d) {
      const double centre = 0.5 * (lo[d] + hi[d]);
      const double half = 1.5 * (hi[d] - lo[d]);
      x[d] = centre + half * (2.0 * rng.Uniform() - 1.0);
    }
    if (NearestCentroidDistance(x, centroids) <= exclusion) continue;
    out.values.insert(out.values.end(), x.begin(), x.end());
  }
  return out;
}

std::pair<LabeledDataset, LabeledDataset> SplitTrainTest(const LabeledDataset& data,
                                                         double test_fraction, RngStream& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw DomainError("split: test_fraction must be in (0, 1)");
  }
  auto by_class = IndicesByClass(data);
  std::vector<size_t> train, test;
  for (auto& idx : by_class) {
    if (idx.empty()) continue;
    rng.Shuffle(idx);
    size_t n_test = static_cast<size_t>(std::llround(test_fraction * idx.size()));
    if (idx.size() >= 2) n_test = std::clamp<size_t>(n_test, 1, idx.size() - 1);
    else n_test = 0;
    test.insert(test.end(), idx.begin(), idx.begin() + n_test);
    train.insert(train.end(), idx.begin() + n_test, idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {data.Subset(train), data.Subset(test)};
}

LabeledDataset ParseDelimited(const std::string& text, const DelimitedSchema& schema) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  char delim = schema.delimiter;
  std::vector<std::vector<double>> rows;
  std::vector<long> labels;
  std::vector<int> label_lines;
  size_t columns = 0;
  bool first_content = true;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (delim == 0) delim = line.find('\t') != std::string::npos ? '\t' : ',';

    std::vector<std::string_view> cells;
    std::string_view rest(line);
    while (true) {
      const size_t cut = rest.find(delim);
      cells.push_back(rest.substr(0, cut));
      if (cut == std::string_view::npos) break;
      rest.remove_prefix(cut + 1);
    }
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return s;
    };

    const bool is_first = first_content;
    first_content = false;
    if (is_first && schema.header) {
      columns = cells.size();
      continue;
    }
    std::vector<double> values(cells.size());
    bool numeric = true;
    size_t bad_col = 0;
    for (size_t c = 0; c < cells.size(); ++c) {
      const std::string_view cell = trim(cells[c]);
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), values[c]);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() ||
          !std::isfinite(values[c])) {
        numeric = false;
        bad_col = c + 1;
        break;
      }
    }
    if (!numeric) {
      if (is_first) {  // unflagged header line
        columns = cells.size();
        continue;
      }
      throw ParseError("cell is not a finite number", line_no, static_cast<int>(bad_col));
    }
    if (columns == 0) columns = cells.size();
    if (cells.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " columns, found " +
                           std::to_string(cells.size()),
                       line_no, 0);
    }
    if (columns < 2) throw ParseError("need at least one feature and a label", line_no, 0);
    const long label_col = schema.label_column >= 0
                               ? schema.label_column
                               : static_cast<long>(columns) + schema.label_column;
    if (label_col < 0 || static_cast<size_t>(label_col) >= columns) {
      throw ParseError("label column out of range", line_no, 0);
    }
    const double raw_label = values[static_cast<size_t>(label_col)];
    if (raw_label != std::floor(raw_label) || raw_label < 0) {
      throw ParseError("label must be a nonnegative integer", line_no,
                       static_cast<int>(label_col + 1));
    }
    labels.push_back(static_cast<long>(raw_label));
    label_lines.push_back(line_no);
    values.erase(values.begin() + label_col);
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw EmptyInputError("delimited dataset has no data rows");

  LabeledDataset data;
  data.dim = rows.front().size();
  long max_label = 0;
  for (long y : labels) max_label = std::max(max_label, y);
  data.num_classes = schema.num_classes > 0 ? schema.num_classes
                                            : static_cast<size_t>(max_label + 1);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<size_t>(labels[i]) >= data.num_classes) {
      throw ParseError("label " + std::to_string(labels[i]) + " out of range [0, " +
                           std::to_string(data.num_classes) + ")",
                       label_lines[i], 0);
    }
    data.Append(rows[i], static_cast<int>(labels[i]));
  }
  if (data.num_classes < 2) data.num_classes = 2;
  return data;
}

LabeledDataset LoadDelimited(const std::string& path, const DelimitedSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseDelimited(buffer.str(), schema);
}

}  // namespace tpfl
