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

#ifndef TPFL_TRUST_INFERENCE_H_
#define TPFL_TRUST_INFERENCE_H_

#include <span>
#include <vector>

#include "tpfl/data_forge.h"
#include "tpfl/evidential_net.h"
#include "tpfl/opinion.h"
#include "tpfl/rng.h"

namespace tpfl {

// Personalized model plus the two debiased generic models. The generic
// models share the global encoder and differ only in their heads.
struct InferenceEnsemble {
  EvidentialModel personalized;
  EvidentialModel generic_up;
  EvidentialModel generic_down;
};

// Marks that a client has already been balance-tuned.
struct FinetuneGuard {
  bool used = false;
};

struct FinetuneConfig {
  int epochs = 5;
  double learning_rate = 0.01;
  // Passed to RebalanceUp/RebalanceDown; clamped to the largest class count.
  size_t filter_no = 20;
  // Give the generic models a uniform prior instead of the client's prior.
  bool uniform_generic_prior = true;

  void Validate() const;
};

struct GenericPair {
  EvidentialModel up;
  EvidentialModel down;
};

// Replaces `personalized`'s encoder with `global_encoder`, then fine-tunes
// two warm-started head copies on the up- and down-balanced versions of
// `data`, encoder frozen. Throws Error if the guard was already used.
GenericPair BalanceFinetune(const EvidentialModel& personalized,
                            std::span<const double> global_encoder, const LabeledDataset& data,
                            const TrainConfig& train, const FinetuneConfig& cfg, RngStream& rng,
                            FinetuneGuard& guard);

struct Verdict {
  static constexpr int kReject = -1;
  int predicted_class = kReject;
  std::vector<double> probabilities;
  double uncertainty = 1.0;
  Opinion fused;
};

// Fuses the three models' opinions and never rejects.
Verdict Predict(const InferenceEnsemble& ensemble, std::span<const double> x);
// As Predict, but rejects when uncertainty >= threshold.
Verdict PredictWithReject(const InferenceEnsemble& ensemble, std::span<const double> x,
                          double threshold);

struct ThresholdMetrics {
  double threshold = 1.0;
  size_t total = 0;
  size_t accepted = 0;
  size_t correct = 0;
  // Accuracy on accepted samples; NaN when nothing is accepted.
  double accuracy = 0.0;
  double coverage = 0.0;
};

struct ClientEvaluation {
  size_t client_id = 0;
  std::vector<ThresholdMetrics> per_threshold;
  double mean_uncertainty = 0.0;
};

struct EvaluationReport {
  std::vector<double> thresholds;
  std::vector<ClientEvaluation> clients;
  // Per threshold: accuracy averaged over clients that accepted anything,
  // coverage averaged over all clients.
  std::vector<double> mean_accuracy;
  std::vector<double> mean_coverage;
  // Pooled over every client's test set.
  std::vector<ThresholdMetrics> pooled;
  double id_mean_uncertainty = 0.0;
  double ood_mean_uncertainty = 0.0;
  // Probability that an OOD sample is more uncertain than an in-distribution
  // one (ties count half).
  double ood_auroc = 0.5;
  // Ten equal-width uncertainty bins on [0, 1].
  std::vector<size_t> id_histogram;
  std::vector<size_t> ood_histogram;
};

// Every ensemble is scored on its own test set and on the whole OOD matrix.
EvaluationReport Evaluate(std::span<const InferenceEnsemble> ensembles,
                          std::span<const LabeledDataset> tests,
                          std::span<const double> thresholds, const FeatureMatrix& ood,
                          std::span<const size_t> client_ids = {});

// Area under the ROC curve for separating `positive` (scored higher) from
// `negative`, by rank statistics.
double Auroc(std::span<const double> negative, std::span<const double> positive);

}  // namespace tpfl

#endif  // TPFL_TRUST_INFERENCE_H_
