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

#include "tpfl/secure_server.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

constexpr double kAlphaFloor = 1e-8;

DirichletParams FlooredDirichlet(std::vector<double> alpha) {
  for (double& a : alpha) a = std::max(a, kAlphaFloor);
  return DirichletParams(std::move(alpha));
}

// alpha = e + W a for one input.
DirichletParams ModelDirichlet(const EvidentialModel& m, std::span<const double> x) {
  std::vector<double> alpha = m.Forward(x);
  for (size_t c = 0; c < alpha.size(); ++c) alpha[c] += m.prior_weight() * m.prior()[c];
  return FlooredDirichlet(std::move(alpha));
}

// Indices sorted by client id (ties by position) so that fusion and
// aggregation do not depend on upload order.
std::vector<size_t> ByClientId(std::span<const UploadBundle> bundles,
                               std::span<const size_t> which) {
  std::vector<size_t> order(which.begin(), which.end());
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (bundles[a].client_id != bundles[b].client_id) {
      return bundles[a].client_id < bundles[b].client_id;
    }
    return a < b;
  });
  return order;
}

std::vector<size_t> AllIndices(size_t n) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<double> WeightedMean(std::span<const std::vector<double>> vs,
                                 std::span<const double> weights) {
  std::vector<double> out(vs[0].size(), 0.0);
  double total = 0.0;
  for (size_t i = 0; i < vs.size(); ++i) {
    if (vs[i].size() != out.size()) throw ShapeError("aggregate: parameter length mismatch");
    total += weights[i];
  }
  if (!(total > 0.0)) throw DomainError("aggregate: weights must sum to a positive value");
  // Normalized weights first, so a single input comes back unchanged.
  for (size_t i = 0; i < vs.size(); ++i) {
    const double w = weights[i] / total;
    for (size_t j = 0; j < out.size(); ++j) out[j] += w * vs[i][j];
  }
  return out;
}

double SquaredDistance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

std::string FormatDouble(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

}  // namespace

void FilterConfig::Validate() const {
  std::vector<std::string> problems;
  if (!(evidence_cap > 0.0)) problems.push_back("evidence_cap: must be positive");
  if (!(similarity_tau > 0.0) || !std::isfinite(similarity_tau)) {
    problems.push_back("similarity_tau: must be positive");
  }
  if (min_cluster < 2) problems.push_back("min_cluster: must be at least 2");
  if (!problems.empty()) throw ValidationError(problems);
}

std::string FilterStageName(FilterStage stage) {
  return stage == FilterStage::kOverflow ? "overflow" : "similarity";
}

std::vector<double> AggregateEncoders(std::span<const UploadBundle> bundles) {
  const auto all = AllIndices(bundles.size());
  return AggregateEncoders(bundles, all);
}

std::vector<double> AggregateEncoders(std::span<const UploadBundle> bundles,
                                      std::span<const size_t> which) {
  if (which.empty()) throw EmptyInputError("aggregate_encoders: no bundles");
  std::vector<std::vector<double>> params;
  std::vector<double> weights;
  for (size_t i : ByClientId(bundles, which)) {
    if (!bundles[i].model.SameArchitecture(bundles[which[0]].model)) {
      throw ShapeError("aggregate_encoders: incompatible encoder shapes");
    }
    params.push_back(bundles[i].model.EncoderParams());
    weights.push_back(static_cast<double>(bundles[i].sample_count));
  }
  return WeightedMean(params, weights);
}

FilterResult OverflowFilter(std::span<const UploadBundle> bundles, const FilterConfig& cfg) {
  if (cfg.holdout.rows() == 0) throw EmptyInputError("overflow_filter: empty holdout");
  FilterResult result;
  result.uncertainty.assign(bundles.size(), NAN);
  result.max_evidence.assign(bundles.size(), INFINITY);
  for (size_t i = 0; i < bundles.size(); ++i) {
    double worst = 0.0;
    // Activations such as ReLU can swallow a NaN weight, so look at the
    // parameters as well as the outputs.
    bool finite = bundles[i].model.IsFinite();
    for (size_t h = 0; h < cfg.holdout.rows() && finite; ++h) {
      for (double e : bundles[i].model.Forward(cfg.holdout.row(h))) {
        if (!std::isfinite(e)) {
          finite = false;
          break;
        }
        worst = std::max(worst, e);
      }
    }
    if (finite) result.max_evidence[i] = worst;
    if (!finite) {
      result.rejected.push_back(
          {bundles[i].client_id, FilterStage::kOverflow, "non-finite parameters or holdout evidence", NAN});
    } else if (worst > cfg.evidence_cap) {
      result.rejected.push_back({bundles[i].client_id, FilterStage::kOverflow,
                                 "max holdout evidence " + FormatDouble(worst) + " exceeds cap",
                                 NAN});
    } else {
      result.kept.push_back(i);
    }
  }
  return result;
}

std::vector<DirichletParams> ReferenceOpinions(std::span<const UploadBundle> bundles,
                                               std::span<const size_t> which,
                                               const FeatureMatrix& holdout) {
  if (which.empty()) throw EmptyInputError("reference_opinions: no bundles");
  const auto order = ByClientId(bundles, which);
  std::vector<DirichletParams> reference;
  reference.reserve(holdout.rows());
  std::vector<Opinion> ops(order.size());
  for (size_t h = 0; h < holdout.rows(); ++h) {
    if (order.size() == 1) {
      // Fusing one opinion is the identity; skip the round trip.
      reference.push_back(ModelDirichlet(bundles[order[0]].model, holdout.row(h)));
      continue;
    }
    for (size_t i = 0; i < order.size(); ++i) ops[i] = bundles[order[i]].model.OpinionFor(holdout.row(h));
    const Opinion fused = FuseMany(ops);
    std::vector<double> alpha(fused.num_classes());
    for (size_t c = 0; c < alpha.size(); ++c) {
      alpha[c] = fused.prior_weight * (fused.belief[c] / fused.uncertainty + fused.prior[c]);
    }
    reference.push_back(FlooredDirichlet(std::move(alpha)));
  }
  return reference;
}

double ModelUncertainty(const UploadBundle& bundle, std::span<const DirichletParams> reference,
                        const FeatureMatrix& holdout) {
  if (reference.size() != holdout.rows()) {
    throw ShapeError("model_uncertainty: reference length differs from holdout size");
  }
  if (reference.empty()) throw EmptyInputError("model_uncertainty: empty holdout");
  double total = 0.0;
  for (size_t h = 0; h < holdout.rows(); ++h) {
    total += KlDirichlet(ModelDirichlet(bundle.model, holdout.row(h)), reference[h]);
  }
  return total / static_cast<double>(holdout.rows());
}

FilterResult SimilarityFilter(std::span<const UploadBundle> bundles,
                              std::span<const size_t> candidates, const FilterConfig& cfg) {
  if (candidates.empty()) throw EmptyInputError("similarity_filter: no candidates");
  FilterResult result;
  result.uncertainty.assign(bundles.size(), NAN);
  const auto reference = ReferenceOpinions(bundles, candidates, cfg.holdout);
  for (size_t i : candidates) {
    result.uncertainty[i] = ModelUncertainty(bundles[i], reference, cfg.holdout);
  }

  // Sort by (U, client id); single linkage on a line is a split at every gap
  // wider than tau.
  std::vector<size_t> order(candidates.begin(), candidates.end());
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (result.uncertainty[a] != result.uncertainty[b]) {
      return result.uncertainty[a] < result.uncertainty[b];
    }
    if (bundles[a].client_id != bundles[b].client_id) {
      return bundles[a].client_id < bundles[b].client_id;
    }
    return a < b;
  });
  std::vector<bool> reject(bundles.size(), false);
  size_t start = 0;
  for (size_t pos = 1; pos <= order.size(); ++pos) {
    const bool split = pos == order.size() ||
                       !(result.uncertainty[order[pos]] - result.uncertainty[order[pos - 1]] <=
                         cfg.similarity_tau);
    if (!split) continue;
    if (pos - start >= cfg.min_cluster) {
      for (size_t q = start; q < pos; ++q) reject[order[q]] = true;
    }
    start = pos;
  }
  const bool all_rejected =
      std::all_of(order.begin(), order.end(), [&](size_t i) { return reject[i]; });
  if (all_rejected) {
    result.degenerate = true;
    reject[order[(order.size() - 1) / 2]] = false;
  }
  for (size_t i : order) {
    if (!reject[i]) continue;
    result.rejected.push_back({bundles[i].client_id, FilterStage::kSimilarity,
                               "model uncertainty within tau of another upload",
                               result.uncertainty[i]});
  }
  for (size_t i : candidates) {
    if (!reject[i]) result.kept.push_back(i);
  }
  std::sort(result.kept.begin(), result.kept.end());
  return result;
}

SecureResult SecureAggregate(std::span<const UploadBundle> bundles, const FilterConfig& cfg) {
  if (bundles.empty()) throw EmptyInputError("secure_aggregate: no bundles");
  SecureResult out;
  out.audit.uncertainty.assign(bundles.size(), NAN);
  std::vector<size_t> kept = AllIndices(bundles.size());
  if (cfg.overflow_enabled) {
    FilterResult stage1 = OverflowFilter(bundles, cfg);
    out.audit.rejections = stage1.rejected;
    kept = stage1.kept;
    if (kept.empty()) {
      // Nothing survived: keep the least extreme upload so the round still
      // produces an encoder.
      out.audit.degenerate_fallback = true;
      size_t best = 0;
      for (size_t i : ByClientId(bundles, AllIndices(bundles.size()))) {
        if (stage1.max_evidence[i] < stage1.max_evidence[best] ||
            (stage1.max_evidence[i] == stage1.max_evidence[best] &&
             bundles[i].client_id < bundles[best].client_id)) {
          best = i;
        }
      }
      kept.push_back(best);
      std::erase_if(out.audit.rejections,
                    [&](const Rejection& r) { return r.client_id == bundles[best].client_id; });
    }
  }
  if (cfg.similarity_enabled) {
    FilterResult stage2 = SimilarityFilter(bundles, kept, cfg);
    out.audit.uncertainty = stage2.uncertainty;
    out.audit.degenerate_fallback = out.audit.degenerate_fallback || stage2.degenerate;
    out.audit.rejections.insert(out.audit.rejections.end(), stage2.rejected.begin(),
                                stage2.rejected.end());
    kept = stage2.kept;
  }
  out.encoder = AggregateEncoders(bundles, kept);
  out.kept = kept;
  return out;
}

std::string AggregationRuleName(AggregationRule rule) {
  switch (rule) {
    case AggregationRule::kTpfl: return "tpfl";
    case AggregationRule::kFedAvg: return "fedavg";
    case AggregationRule::kMedian: return "median";
    case AggregationRule::kTrimmedMean: return "trimmed_mean";
    case AggregationRule::kKrum: return "krum";
    case AggregationRule::kMultiKrum: return "multi_krum";
    case AggregationRule::kNormClip: return "norm_clip";
  }
  return "?";
}

AggregationRule ParseAggregationRule(const std::string& name) {
  for (auto r : {AggregationRule::kTpfl, AggregationRule::kFedAvg, AggregationRule::kMedian,
                 AggregationRule::kTrimmedMean, AggregationRule::kKrum,
                 AggregationRule::kMultiKrum, AggregationRule::kNormClip}) {
    if (AggregationRuleName(r) == name) return r;
  }
  throw DomainError("unknown aggregation rule '" + name + "'");
}

void RobustConfig::Validate() const {
  std::vector<std::string> problems;
  if (!(clip_norm > 0.0)) problems.push_back("clip_norm: must be positive");
  if (!problems.empty()) throw ValidationError(problems);
}

RobustResult RobustAggregate(std::span<const std::vector<double>> updates,
                             std::span<const double> weights, std::span<const double> reference,
                             AggregationRule rule, const RobustConfig& cfg) {
  const size_t n = updates.size();
  if (n == 0) throw EmptyInputError("robust_aggregate: no updates");
  if (weights.size() != n) throw ShapeError("robust_aggregate: one weight per update required");
  const size_t d = updates[0].size();
  for (const auto& u : updates) {
    if (u.size() != d) throw ShapeError("robust_aggregate: update length mismatch");
  }
  if (!reference.empty() && reference.size() != d) {
    throw ShapeError("robust_aggregate: reference length mismatch");
  }
  RobustResult out;
  out.selected = AllIndices(n);
  std::vector<double> column(n);

  switch (rule) {
    case AggregationRule::kFedAvg:
      out.params = WeightedMean(updates, weights);
      return out;

    case AggregationRule::kMedian:
      out.params.resize(d);
      for (size_t j = 0; j < d; ++j) {
        for (size_t i = 0; i < n; ++i) column[i] = updates[i][j];
        std::sort(column.begin(), column.end());
        out.params[j] = n % 2 ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
      }
      return out;

    case AggregationRule::kTrimmedMean: {
      if (2 * cfg.trim >= n) {
        throw EmptyInputError("trimmed_mean: trimming removes every update");
      }
      out.params.resize(d);
      for (size_t j = 0; j < d; ++j) {
        for (size_t i = 0; i < n; ++i) column[i] = updates[i][j];
        std::sort(column.begin(), column.end());
        double s = 0.0;
        for (size_t i = cfg.trim; i < n - cfg.trim; ++i) s += column[i];
        out.params[j] = s / static_cast<double>(n - 2 * cfg.trim);
      }
      return out;
    }

    case AggregationRule::kKrum:
    case AggregationRule::kMultiKrum: {
      const size_t f = cfg.assumed_attackers;
      if (n < 2 * f + 3) {
        throw EmptyInputError("krum: need at least 2f + 3 updates, have " + std::to_string(n));
      }
      std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
      for (size_t a = 0; a < n; ++a) {
        for (size_t b = a + 1; b < n; ++b) dist[a][b] = dist[b][a] = SquaredDistance(updates[a], updates[b]);
      }
      const size_t neighbours = n - f - 2;
      std::vector<double> score(n);
      for (size_t a = 0; a < n; ++a) {
        std::vector<double> row;
        for (size_t b = 0; b < n; ++b) {
          if (b != a) row.push_back(dist[a][b]);
        }
        std::partial_sort(row.begin(), row.begin() + neighbours, row.end());
        score[a] = std::accumulate(row.begin(), row.begin() + neighbours, 0.0);
      }
      std::vector<size_t> order = AllIndices(n);
      std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        // NaN scores sort last.
        if (std::isnan(score[a])) return false;
        if (std::isnan(score[b])) return true;
        return score[a] < score[b];
      });
      size_t m = 1;
      if (rule == AggregationRule::kMultiKrum) m = cfg.multi_krum_m ? cfg.multi_krum_m : n - f;
      m = std::min(m, n);
      order.resize(m);
      std::sort(order.begin(), order.end());
      out.selected = order;
      std::vector<std::vector<double>> chosen;
      for (size_t i : order) chosen.push_back(updates[i]);
      out.params = WeightedMean(chosen, std::vector<double>(m, 1.0));
      return out;
    }

    case AggregationRule::kNormClip: {
      std::vector<std::vector<double>> clipped(n);
      for (size_t i = 0; i < n; ++i) {
        clipped[i] = updates[i];
        if (!reference.empty()) {
          for (size_t j = 0; j < d; ++j) clipped[i][j] -= reference[j];
        }
        double norm = 0.0;
        for (double v : clipped[i]) norm += v * v;
        norm = std::sqrt(norm);
        if (!std::isfinite(norm)) {
          std::fill(clipped[i].begin(), clipped[i].end(), 0.0);
        } else if (norm > cfg.clip_norm) {
          for (double& v : clipped[i]) v *= cfg.clip_norm / norm;
        }
      }
      out.params = WeightedMean(clipped, weights);
      if (!reference.empty()) {
        for (size_t j = 0; j < d; ++j) out.params[j] += reference[j];
      }
      return out;
    }

    case AggregationRule::kTpfl:
      break;
  }
  throw DomainError("robust_aggregate: rule '" + AggregationRuleName(rule) +
                    "' is not a parameter-space rule");
}

}  // namespace tpfl
