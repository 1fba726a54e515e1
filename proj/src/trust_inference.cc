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

#include "tpfl/trust_inference.h"

#include <algorithm>
#include <array>
#include <cmath>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

EvidentialModel TuneHead(EvidentialModel model, const LabeledDataset& data,
                         const TrainConfig& train, const FinetuneConfig& cfg, RngStream rng) {
  TrainConfig tc = train;
  tc.local_epochs = cfg.epochs;
  tc.learning_rate = cfg.learning_rate;
  tc.train_encoder = false;
  tc.train_head = true;
  tc.prior_update = PriorUpdate::kFrozen;
  return TrainLocal(std::move(model), data, tc, rng).model;
}

size_t ArgMax(const std::vector<double>& v) {
  return static_cast<size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void FinetuneConfig::Validate() const {
  std::vector<std::string> problems;
  if (epochs < 0) problems.push_back("epochs: must be nonnegative");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    problems.push_back("learning_rate: must be nonnegative");
  }
  if (filter_no < 1) problems.push_back("filter_no: must be at least 1");
  if (!problems.empty()) throw ValidationError(problems);
}

GenericPair BalanceFinetune(const EvidentialModel& personalized,
                            std::span<const double> global_encoder, const LabeledDataset& data,
                            const TrainConfig& train, const FinetuneConfig& cfg, RngStream& rng,
                            FinetuneGuard& guard) {
  if (guard.used) throw Error("balance_finetune: client was already balance-tuned");
  if (data.empty()) throw EmptyInputError("balance_finetune: empty client data");
  cfg.Validate();
  guard.used = true;

  EvidentialModel base = personalized;
  base.SetEncoderParams(global_encoder);
  if (cfg.uniform_generic_prior) {
    base.set_prior(std::vector<double>(base.num_classes(), 1.0 / base.num_classes()));
  }
  const auto counts = data.ClassCounts();
  const size_t filter_no =
      std::min(cfg.filter_no, *std::max_element(counts.begin(), counts.end()));
  RngStream up_rng = rng.Derive(1), down_rng = rng.Derive(2);
  const LabeledDataset up = RebalanceUp(data, filter_no, up_rng);
  const LabeledDataset down = RebalanceDown(data, filter_no, down_rng);
  return {TuneHead(base, up, train, cfg, rng.Derive(3)),
          TuneHead(base, down, train, cfg, rng.Derive(4))};
}

Verdict Predict(const InferenceEnsemble& ensemble, std::span<const double> x) {
  const std::array<Opinion, 3> ops = {ensemble.generic_up.OpinionFor(x),
                                      ensemble.generic_down.OpinionFor(x),
                                      ensemble.personalized.OpinionFor(x)};
  Verdict v;
  v.fused = FuseMany(ops);
  v.probabilities = ExpectProb(v.fused);
  v.uncertainty = v.fused.uncertainty;
  v.predicted_class = static_cast<int>(ArgMax(v.probabilities));
  return v;
}

Verdict PredictWithReject(const InferenceEnsemble& ensemble, std::span<const double> x,
                          double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw DomainError("predict_with_reject: threshold must be in (0, 1]");
  }
  Verdict v = Predict(ensemble, x);
  if (v.uncertainty >= threshold) v.predicted_class = Verdict::kReject;
  return v;
}

double Auroc(std::span<const double> negative, std::span<const double> positive) {
  if (negative.empty() || positive.empty()) throw EmptyInputError("auroc: empty class");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(negative.size() + positive.size());
  for (double s : negative) items.push_back({s, false});
  for (double s : positive) items.push_back({s, true});
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.score < b.score; });
  // Mann-Whitney U with midranks for ties.
  double rank_sum = 0.0;
  for (size_t i = 0; i < items.size();) {
    size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t q = i; q < j; ++q) {
      if (items[q].positive) rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(positive.size());
  const double nn = static_cast<double>(negative.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

EvaluationReport Evaluate(std::span<const InferenceEnsemble> ensembles,
                          std::span<const LabeledDataset> tests,
                          std::span<const double> thresholds, const FeatureMatrix& ood,
                          std::span<const size_t> client_ids) {
  if (ensembles.size() != tests.size()) {
    throw ShapeError("evaluate: one test set per ensemble required");
  }
  if (ensembles.empty()) throw EmptyInputError("evaluate: no clients");
  for (double t : thresholds) {
    if (!(t > 0.0 && t <= 1.0)) throw DomainError("evaluate: thresholds must be in (0, 1]");
  }
  EvaluationReport report;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  report.pooled.resize(thresholds.size());
  for (size_t t = 0; t < thresholds.size(); ++t) report.pooled[t].threshold = thresholds[t];
  report.id_histogram.assign(10, 0);
  report.ood_histogram.assign(10, 0);
  auto bin = [](double u) { return std::min<size_t>(9, static_cast<size_t>(std::max(0.0, u) * 10.0)); };

  std::vector<double> id_u, ood_u;
  for (size_t c = 0; c < ensembles.size(); ++c) {
    const LabeledDataset& test = tests[c];
    if (test.empty()) throw EmptyInputError("evaluate: empty test set");
    ClientEvaluation ce;
    ce.client_id = client_ids.empty() ? c : client_ids[c];
    ce.per_threshold.resize(thresholds.size());
    double u_sum = 0.0;
    for (size_t i = 0; i < test.size(); ++i) {
      const Verdict v = Predict(ensembles[c], test.row(i));
      const bool right = v.predicted_class == test.labels[i];
      u_sum += v.uncertainty;
      id_u.push_back(v.uncertainty);
      ++report.id_histogram[bin(v.uncertainty)];
      for (size_t t = 0; t < thresholds.size(); ++t) {
        ThresholdMetrics& m = ce.per_threshold[t];
        ++m.total;
        if (v.uncertainty < thresholds[t]) {
          ++m.accepted;
          m.correct += right;
        }
      }
    }
    ce.mean_uncertainty = u_sum / static_cast<double>(test.size());
    for (size_t t = 0; t < thresholds.size(); ++t) {
      ThresholdMetrics& m = ce.per_threshold[t];
      m.threshold = thresholds[t];
      m.coverage = static_cast<double>(m.accepted) / static_cast<double>(m.total);
      m.accuracy = m.accepted ? static_cast<double>(m.correct) / static_cast<double>(m.accepted)
                              : NAN;
      report.pooled[t].total += m.total;
      report.pooled[t].accepted += m.accepted;
      report.pooled[t].correct += m.correct;
    }
    for (size_t i = 0; i < ood.rows(); ++i) {
      const double u = Predict(ensembles[c], ood.row(i)).uncertainty;
      ood_u.push_back(u);
      ++report.ood_histogram[bin(u)];
    }
    report.clients.push_back(std::move(ce));
  }

  for (size_t t = 0; t < thresholds.size(); ++t) {
    double acc = 0.0, cov = 0.0;
    size_t defined = 0;
    for (const auto& ce : report.clients) {
      const ThresholdMetrics& m = ce.per_threshold[t];
      cov += m.coverage;
      if (m.accepted) {
        acc += m.accuracy;
        ++defined;
      }
    }
    report.mean_accuracy.push_back(defined ? acc / static_cast<double>(defined) : NAN);
    report.mean_coverage.push_back(cov / static_cast<double>(report.clients.size()));
    ThresholdMetrics& p = report.pooled[t];
    p.coverage = static_cast<double>(p.accepted) / static_cast<double>(p.total);
    p.accuracy = p.accepted ? static_cast<double>(p.correct) / static_cast<double>(p.accepted) : NAN;
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? NAN : s / static_cast<double>(v.size());
  };
  report.id_mean_uncertainty = mean(id_u);
  report.ood_mean_uncertainty = mean(ood_u);
  report.ood_auroc = ood_u.empty() ? NAN : Auroc(id_u, ood_u);
  return report;
}

}  // namespace tpfl
