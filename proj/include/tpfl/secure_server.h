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

#ifndef TPFL_SECURE_SERVER_H_
#define TPFL_SECURE_SERVER_H_

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tpfl/data_forge.h"
#include "tpfl/evidential_net.h"
#include "tpfl/opinion.h"

namespace tpfl {

struct UploadBundle {
  size_t client_id = 0;
  EvidentialModel model;
  size_t sample_count = 1;
};

struct FilterConfig {
  double evidence_cap = std::exp(20.0);
  double similarity_tau = 1e-6;
  size_t min_cluster = 2;
  FeatureMatrix holdout;
  bool overflow_enabled = true;
  bool similarity_enabled = true;

  void Validate() const;
};

enum class FilterStage { kOverflow, kSimilarity };
std::string FilterStageName(FilterStage stage);

struct Rejection {
  size_t client_id = 0;
  FilterStage stage = FilterStage::kOverflow;
  std::string reason;
  // Model uncertainty; NaN when rejected before it was computed.
  double model_uncertainty = NAN;
};

// Partition of the input by index.
struct FilterResult {
  std::vector<size_t> kept;
  std::vector<Rejection> rejected;
  // Model uncertainty of each input bundle (NaN where not computed).
  std::vector<double> uncertainty;
  // Largest holdout evidence per input bundle; +inf for non-finite models.
  // Filled by the overflow stage only.
  std::vector<double> max_evidence;
  bool degenerate = false;
};

struct AuditRecord {
  std::vector<Rejection> rejections;
  // Per input bundle, in input order.
  std::vector<double> uncertainty;
  bool degenerate_fallback = false;
};

// Sample-count weighted mean of the bundles' encoders.
std::vector<double> AggregateEncoders(std::span<const UploadBundle> bundles);
std::vector<double> AggregateEncoders(std::span<const UploadBundle> bundles,
                                      std::span<const size_t> which);

// Rejects a bundle iff its parameters are not all finite, or some holdout
// sample gives non-finite evidence or evidence above cfg.evidence_cap.
FilterResult OverflowFilter(std::span<const UploadBundle> bundles, const FilterConfig& cfg);

// Per holdout sample, the fused opinion of the selected bundles as a
// Dirichlet. Bundles are fused in client-id order.
std::vector<DirichletParams> ReferenceOpinions(std::span<const UploadBundle> bundles,
                                               std::span<const size_t> which,
                                               const FeatureMatrix& holdout);

// Mean KL(Dir(bundle output) || Dir(reference)) over the holdout.
double ModelUncertainty(const UploadBundle& bundle, std::span<const DirichletParams> reference,
                        const FeatureMatrix& holdout);

// Single-linkage grouping of model uncertainties within similarity_tau;
// rejects every group of at least min_cluster bundles. If that would reject
// everything, the bundle with median uncertainty is kept.
FilterResult SimilarityFilter(std::span<const UploadBundle> bundles,
                              std::span<const size_t> candidates, const FilterConfig& cfg);

struct SecureResult {
  std::vector<double> encoder;
  AuditRecord audit;
  std::vector<size_t> kept;
};

// Overflow filter, similarity filter, then AggregateEncoders on survivors.
// If every bundle overflows, the one with the smallest holdout evidence
// (ties by client id) is kept and the audit is marked degenerate.
SecureResult SecureAggregate(std::span<const UploadBundle> bundles, const FilterConfig& cfg);

enum class AggregationRule { kTpfl, kFedAvg, kMedian, kTrimmedMean, kKrum, kMultiKrum, kNormClip };
std::string AggregationRuleName(AggregationRule rule);
AggregationRule ParseAggregationRule(const std::string& name);

struct RobustConfig {
  // Values trimmed from each end per coordinate.
  size_t trim = 1;
  // Attacker count assumed by Krum.
  size_t assumed_attackers = 1;
  // Updates averaged by Multi-Krum; 0 means n - assumed_attackers.
  size_t multi_krum_m = 0;
  // Norm bound for norm clipping.
  double clip_norm = 10.0;

  void Validate() const;
};

struct RobustResult {
  std::vector<double> params;
  // Indices that contributed (Krum family); every index otherwise.
  std::vector<size_t> selected;
};

// Aggregates parameter vectors. norm_clip bounds offsets from `reference`
// (the previous global; empty means zero); the other rules commute with
// translation and ignore it. `weights` are used by fedavg and norm_clip.
RobustResult RobustAggregate(std::span<const std::vector<double>> updates,
                             std::span<const double> weights, std::span<const double> reference,
                             AggregationRule rule, const RobustConfig& cfg);

}  // namespace tpfl

#endif  // TPFL_SECURE_SERVER_H_
