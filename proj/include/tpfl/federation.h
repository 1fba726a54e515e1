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

#ifndef TPFL_FEDERATION_H_
#define TPFL_FEDERATION_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpfl/adversary.h"
#include "tpfl/data_forge.h"
#include "tpfl/evidential_net.h"
#include "tpfl/secure_server.h"
#include "tpfl/trust_inference.h"

namespace tpfl {

struct DatasetConfig {
  // "blobs" or "file".
  std::string source = "blobs";
  size_t num_classes = 4;
  size_t per_class = 500;
  size_t dim = 2;
  double spread = 1.0;
  double radius = 4.0;
  std::string path;
  DelimitedSchema schema;
  // Per-client stratified test share.
  double test_fraction = 0.2;
};

struct DefenseConfig {
  AggregationRule rule = AggregationRule::kTpfl;
  // holdout is filled in at setup from EvalConfig::holdout_size.
  FilterConfig filter;
  RobustConfig robust;
};

struct EvalConfig {
  std::vector<double> thresholds = {1.0, 0.5, 0.2};
  size_t ood_size = 500;
  size_t holdout_size = 100;
};

struct ScenarioConfig {
  uint64_t seed = 0;
  int rounds = 30;
  // Fraction of clients selected each round.
  double participation = 1.0;
  DatasetConfig dataset;
  // num_clients and beta; the seed defaults to the run seed.
  PartitionSpec partition;
  std::optional<uint64_t> partition_seed;
  ModelSpec model;
  // Client prior at setup: smoothed local class frequency, or uniform.
  bool uniform_prior_init = false;
  TrainConfig train;
  bool finetune_enabled = true;
  FinetuneConfig finetune;
  DefenseConfig defense;
  AttackConfig attack;
  EvalConfig eval;

  // Throws ValidationError listing every bad field.
  void Validate() const;
};

struct ClientState {
  size_t id = 0;
  LabeledDataset train;
  LabeledDataset test;
  EvidentialModel model;
  bool malicious = false;
  RngStream rng{0, 0};
  FinetuneGuard guard;
};

struct ClientRoundStats {
  size_t client_id = 0;
  bool malicious = false;
  bool participated = false;
  bool rejected = false;
  // Server-side model uncertainty of the upload; NaN if not computed.
  double model_uncertainty = NAN;
  // Last local epoch; zero for parameter-space attackers.
  LossBreakdown loss;
  // Personalized accuracy on the client's test set after the round.
  double accuracy = 0.0;
};

struct RoundReport {
  int round = 0;
  std::vector<ClientRoundStats> clients;
  AuditRecord audit;
  // Over benign clients.
  double mean_accuracy = 0.0;
  // Mean personalized uncertainty of benign clients on the server holdout.
  double mean_uncertainty = 0.0;
  size_t rejected_benign = 0;
  size_t rejected_malicious = 0;
  // Gamma chosen by the STAT-OPT attacker; NaN otherwise.
  double attack_gamma = NAN;
};

// Everything a run needs between rounds.
struct Federation {
  ScenarioConfig config;
  std::vector<ClientState> clients;
  std::vector<double> global_encoder;
  // Server-side OOD holdout (also the probe set).
  FeatureMatrix holdout;
  // Evaluation OOD set.
  FeatureMatrix ood;
  // MPAF target model, full parameters.
  std::vector<double> mpaf_base;
};

// Overwrites the client's encoder; head and prior are untouched.
void PersonalizeSync(ClientState& client, std::span<const double> global_encoder);

// Builds data, partitions, models and holdouts. Validates the config first.
Federation SetupFederation(const ScenarioConfig& config);

// One communication round: sync, local training or attack, aggregation.
RoundReport RunRound(Federation& fed, int round_idx);

struct TrainingResult {
  Federation fed;
  std::vector<RoundReport> reports;
  // One per benign client, in client-id order.
  std::vector<InferenceEnsemble> ensembles;
  std::vector<size_t> ensemble_clients;
};

// Setup, config.rounds rounds, final sync and balance fine-tuning.
// `on_round` sees each report as soon as it is produced.
TrainingResult RunTraining(const ScenarioConfig& config,
                           const std::function<void(const RoundReport&)>& on_round = {});

// Evaluate the benign clients' ensembles on their test sets and the OOD set.
EvaluationReport EvaluateTraining(const TrainingResult& result);

}  // namespace tpfl

#endif  // TPFL_FEDERATION_H_
