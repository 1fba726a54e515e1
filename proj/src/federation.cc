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

#include "tpfl/federation.h"

#include <algorithm>
#include <cmath>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

// Runs a sub-validator and collects its problems under `block`.
template <typename Fn>
void Collect(std::vector<std::string>& problems, const std::string& block, Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    for (const auto& p : e.problems()) problems.push_back(block + "." + p);
  }
}

double MeanHoldoutUncertainty(const EvidentialModel& model, const FeatureMatrix& holdout) {
  if (holdout.rows() == 0) return NAN;
  double s = 0.0;
  for (size_t h = 0; h < holdout.rows(); ++h) s += model.OpinionFor(holdout.row(h)).uncertainty;
  return s / static_cast<double>(holdout.rows());
}

std::vector<size_t> Participants(const Federation& fed, int round_idx) {
  const size_t n = fed.clients.size();
  std::vector<size_t> ids(n);
  for (size_t i = 0; i < n; ++i) ids[i] = i;
  if (fed.config.participation >= 1.0) return ids;
  const auto count = std::max<size_t>(
      1, static_cast<size_t>(std::llround(fed.config.participation * static_cast<double>(n))));
  RngStream rng = RngStream(fed.config.seed, StreamKey("select")).Derive(round_idx);
  ids = rng.Permutation(n);
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool IsParameterAttack(AttackKind kind) {
  return kind == AttackKind::kRandom || kind == AttackKind::kLie || kind == AttackKind::kMpaf ||
         kind == AttackKind::kStatOpt;
}

struct Aggregated {
  std::vector<double> encoder;
  AuditRecord audit;
  std::vector<bool> accepted;  // per bundle
};

Aggregated Aggregate(const Federation& fed, std::span<const UploadBundle> bundles) {
  const DefenseConfig& def = fed.config.defense;
  Aggregated out;
  if (def.rule == AggregationRule::kTpfl) {
    FilterConfig filter = def.filter;
    filter.holdout = fed.holdout;
    SecureResult r = SecureAggregate(bundles, filter);
    out.encoder = std::move(r.encoder);
    out.audit = std::move(r.audit);
    out.accepted.assign(bundles.size(), false);
    for (size_t i : r.kept) out.accepted[i] = true;
    return out;
  }
  std::vector<std::vector<double>> params;
  std::vector<double> weights;
  for (const auto& b : bundles) {
    params.push_back(b.model.EncoderParams());
    weights.push_back(static_cast<double>(b.sample_count));
  }
  RobustResult r = RobustAggregate(params, weights, fed.global_encoder, def.rule, def.robust);
  out.encoder = std::move(r.params);
  out.audit.uncertainty.assign(bundles.size(), NAN);
  out.accepted.assign(bundles.size(), false);
  for (size_t i : r.selected) out.accepted[i] = true;
  for (size_t i = 0; i < bundles.size(); ++i) {
    if (!out.accepted[i]) {
      out.audit.rejections.push_back({bundles[i].client_id, FilterStage::kSimilarity,
                                      "not selected by " + AggregationRuleName(def.rule), NAN});
    }
  }
  return out;
}

}  // namespace

void ScenarioConfig::Validate() const {
  std::vector<std::string> problems;
  if (rounds < 0) problems.push_back("rounds: must be nonnegative");
  if (!(participation > 0.0 && participation <= 1.0)) {
    problems.push_back("participation: must be in (0, 1]");
  }
  const DatasetConfig& d = dataset;
  if (d.source == "blobs") {
    if (d.num_classes < 2) problems.push_back("dataset.num_classes: must be at least 2");
    if (d.per_class < 1) problems.push_back("dataset.per_class: must be positive");
    if (d.dim < 1) problems.push_back("dataset.dim: must be positive");
    if (!(d.spread > 0.0) || !std::isfinite(d.spread)) {
      problems.push_back("dataset.spread: must be positive");
    }
    if (!(d.radius > 0.0) || !std::isfinite(d.radius)) {
      problems.push_back("dataset.radius: must be positive");
    }
  } else if (d.source == "file") {
    if (d.path.empty()) problems.push_back("dataset.path: required when source is 'file'");
  } else {
    problems.push_back("dataset.source: must be 'blobs' or 'file'");
  }
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) {
    problems.push_back("dataset.test_fraction: must be in (0, 1)");
  }
  Collect(problems, "partition", [&] { partition.Validate(); });
  if (model.hidden.empty()) problems.push_back("model.hidden: need at least one hidden layer");
  for (size_t h : model.hidden) {
    if (h == 0) {
      problems.push_back("model.hidden: layer widths must be positive");
      break;
    }
  }
  if (!(model.score_clamp > 0.0)) problems.push_back("model.score_clamp: must be positive");
  if (!std::isfinite(model.prior_weight) || model.prior_weight < 0.0) {
    problems.push_back("model.prior_weight: must be nonnegative (0 = class count)");
  }
  if (!std::isfinite(model.head_bias_init)) {
    problems.push_back("model.head_bias_init: must be finite");
  }
  Collect(problems, "training", [&] { train.Validate(); });
  // A zero rate is a valid null update for one call, not a usable run.
  if (train.learning_rate == 0.0) problems.push_back("training.learning_rate: must be positive");
  Collect(problems, "finetune", [&] { finetune.Validate(); });
  Collect(problems, "defense", [&] { defense.filter.Validate(); });
  Collect(problems, "defense", [&] { defense.robust.Validate(); });
  Collect(problems, "attack", [&] { attack.Validate(); });
  if (eval.thresholds.empty()) problems.push_back("evaluation.thresholds: must not be empty");
  for (double t : eval.thresholds) {
    if (!(t > 0.0 && t <= 1.0)) {
      problems.push_back("evaluation.thresholds: every threshold must be in (0, 1]");
      break;
    }
  }
  if (eval.holdout_size < 1) problems.push_back("evaluation.holdout_size: must be positive");
  if (!problems.empty()) throw ValidationError(problems);
}

void PersonalizeSync(ClientState& client, std::span<const double> global_encoder) {
  client.model.SetEncoderParams(global_encoder);
}

Federation SetupFederation(const ScenarioConfig& config) {
  config.Validate();
  Federation fed;
  fed.config = config;
  const uint64_t seed = config.seed;

  LabeledDataset all;
  if (config.dataset.source == "file") {
    all = LoadDelimited(config.dataset.path, config.dataset.schema);
  } else {
    RngStream rng(seed, StreamKey("data"));
    all = MakeBlobs(config.dataset.num_classes, config.dataset.per_class, config.dataset.dim,
                    config.dataset.spread, rng, config.dataset.radius);
  }
  all.Validate();

  PartitionSpec part = config.partition;
  part.seed = config.partition_seed.value_or(seed);
  const std::vector<LabeledDataset> shards = DirichletPartition(all, part);

  ModelSpec spec = config.model;
  spec.input_dim = all.dim;
  spec.num_classes = all.num_classes;
  RngStream init_rng(seed, StreamKey("init"));
  const EvidentialModel init = EvidentialModel::Create(spec, init_rng);
  fed.global_encoder = init.EncoderParams();

  const bool attacked = config.attack.kind != AttackKind::kNone;
  std::vector<bool> malicious(shards.size(), false);
  if (attacked) {
    for (size_t id : SelectMalicious(seed, shards.size(), config.attack.malicious_ratio)) {
      malicious[id] = true;
    }
  }

  const RngStream client_root(seed, StreamKey("client"));
  for (size_t id = 0; id < shards.size(); ++id) {
    ClientState c;
    c.id = id;
    c.rng = client_root.Derive(id);
    RngStream split_rng = c.rng.Derive(StreamKey("split"));
    auto [train, test] = SplitTrainTest(shards[id], config.dataset.test_fraction, split_rng);
    c.malicious = malicious[id];
    // Offline poisoning: flipped once, before the first round.
    if (c.malicious && config.attack.kind == AttackKind::kLabelFlip) train = LabelFlip(train);
    c.train = std::move(train);
    c.test = std::move(test);
    c.model = init;
    if (!config.uniform_prior_init) c.model.set_prior(FrequencyPrior(c.train));
    fed.clients.push_back(std::move(c));
  }

  RngStream holdout_rng(seed, StreamKey("holdout"));
  fed.holdout = MakeOod(config.eval.holdout_size, all, holdout_rng);
  RngStream ood_rng(seed, StreamKey("ood"));
  fed.ood = MakeOod(config.eval.ood_size, all, ood_rng);
  if (config.attack.kind == AttackKind::kMpaf) {
    RngStream base_rng(seed, StreamKey("mpaf"));
    fed.mpaf_base = EvidentialModel::Create(spec, base_rng).AllParams();
  }
  return fed;
}

RoundReport RunRound(Federation& fed, int round_idx) {
  const ScenarioConfig& cfg = fed.config;
  const AttackConfig& attack = cfg.attack;
  RoundReport report;
  report.round = round_idx;
  report.clients.resize(fed.clients.size());
  for (size_t i = 0; i < fed.clients.size(); ++i) {
    report.clients[i].client_id = fed.clients[i].id;
    report.clients[i].malicious = fed.clients[i].malicious;
  }

  const std::vector<size_t> active = Participants(fed, round_idx);
  for (size_t i : active) PersonalizeSync(fed.clients[i], fed.global_encoder);

  // Honest training; label-flip attackers train the same way on their
  // poisoned data.
  std::vector<UploadBundle> bundles;
  std::vector<size_t> bundle_client;
  std::vector<size_t> attackers;
  for (size_t i : active) {
    ClientState& c = fed.clients[i];
    report.clients[i].participated = true;
    if (c.malicious && IsParameterAttack(attack.kind)) {
      attackers.push_back(i);
      continue;
    }
    RngStream rng = c.rng.Derive(static_cast<uint64_t>(round_idx));
    TrainResult tr = TrainLocal(c.model, c.train, cfg.train, rng);
    c.model = std::move(tr.model);
    if (!tr.history.empty()) report.clients[i].loss = tr.history.back();
    bundles.push_back({c.id, c.model, c.train.size()});
    bundle_client.push_back(i);
  }
  const size_t num_honest = bundles.size();

  if (!attackers.empty()) {
    std::vector<std::vector<double>> benign;
    for (size_t b = 0; b < num_honest; ++b) benign.push_back(bundles[b].model.AllParams());
    const RngStream attack_root =
        RngStream(cfg.seed, StreamKey("attack")).Derive(static_cast<uint64_t>(round_idx));

    const bool colluding = attack.kind == AttackKind::kLie || attack.kind == AttackKind::kStatOpt;
    // Colluders upload one identical model, prior included; the first
    // attacker's model is the template.
    auto upload_with = [&](size_t i, const std::vector<double>& params) {
      const ClientState& c = fed.clients[i];
      const ClientState& templ = colluding ? fed.clients[attackers[0]] : c;
      UploadBundle b{c.id, templ.model, c.train.size()};
      if (attack.encoder_only) {
        b.model.SetEncoderParams(
            std::span<const double>(params).first(b.model.num_encoder_params()));
      } else {
        b.model.SetAllParams(params);
      }
      return b;
    };
    std::vector<double> shared;
    if (colluding && benign.size() < 2) {
      // Not enough benign uploads to estimate statistics; upload the synced
      // model unchanged.
      shared = fed.clients[attackers[0]].model.AllParams();
    } else if (attack.kind == AttackKind::kLie) {
      shared = LieUpdate(benign, attack.z);
    } else if (attack.kind == AttackKind::kStatOpt) {
      auto survives = [&](const std::vector<double>& candidate) {
        std::vector<UploadBundle> trial(bundles.begin(), bundles.begin() + num_honest);
        for (size_t i : attackers) trial.push_back(upload_with(i, candidate));
        const Aggregated agg = Aggregate(fed, trial);
        for (size_t t = num_honest; t < trial.size(); ++t) {
          if (agg.accepted[t]) return true;
        }
        return false;
      };
      report.attack_gamma = StatOptSearchGamma(benign, survives);
      shared = StatOptUpdate(benign, report.attack_gamma);
    }
    for (size_t i : attackers) {
      const ClientState& c = fed.clients[i];
      std::vector<double> params;
      switch (attack.kind) {
        case AttackKind::kRandom: {
          RngStream rng = attack_root.Derive(c.id);
          params = RandomUpdate(c.model.AllParams(), attack.noise_sigma, rng);
          break;
        }
        case AttackKind::kMpaf: {
          // The update lambda (base - global) is applied on top of the
          // synced model.
          params = c.model.AllParams();
          const std::vector<double> delta = MpafUpdate(params, fed.mpaf_base, attack.lambda_scale);
          for (size_t j = 0; j < params.size(); ++j) params[j] += delta[j];
          break;
        }
        default:
          params = shared;
          break;
      }
      bundles.push_back(upload_with(i, params));
      bundle_client.push_back(i);
    }
  }

  if (!bundles.empty()) {
    Aggregated agg = Aggregate(fed, bundles);
    fed.global_encoder = std::move(agg.encoder);
    report.audit = std::move(agg.audit);
    for (size_t b = 0; b < bundles.size(); ++b) {
      const size_t i = bundle_client[b];
      report.clients[i].rejected = !agg.accepted[b];
      report.clients[i].model_uncertainty = report.audit.uncertainty[b];
      if (!agg.accepted[b]) {
        ++(fed.clients[i].malicious ? report.rejected_malicious : report.rejected_benign);
      }
    }
  }

  // Every client leaves the round holding the new global encoder.
  double acc = 0.0, unc = 0.0;
  size_t benign = 0;
  for (size_t i = 0; i < fed.clients.size(); ++i) {
    ClientState& c = fed.clients[i];
    PersonalizeSync(c, fed.global_encoder);
    if (c.malicious) continue;
    report.clients[i].accuracy = c.test.empty() ? NAN : Accuracy(c.model, c.test);
    if (!c.test.empty()) {
      acc += report.clients[i].accuracy;
      ++benign;
    }
    unc += MeanHoldoutUncertainty(c.model, fed.holdout);
  }
  const size_t honest_clients = static_cast<size_t>(
      std::count_if(fed.clients.begin(), fed.clients.end(), [](const ClientState& c) { return !c.malicious; }));
  report.mean_accuracy = benign ? acc / static_cast<double>(benign) : NAN;
  report.mean_uncertainty = honest_clients ? unc / static_cast<double>(honest_clients) : NAN;
  return report;
}

TrainingResult RunTraining(const ScenarioConfig& config,
                           const std::function<void(const RoundReport&)>& on_round) {
  TrainingResult result;
  result.fed = SetupFederation(config);
  Federation& fed = result.fed;
  for (int r = 0; r < config.rounds; ++r) {
    result.reports.push_back(RunRound(fed, r));
    if (on_round) on_round(result.reports.back());
  }
  for (ClientState& c : fed.clients) {
    if (c.malicious || c.test.empty()) continue;
    InferenceEnsemble ens{c.model, c.model, c.model};
    if (config.finetune_enabled && config.rounds > 0) {
      RngStream rng = c.rng.Derive(StreamKey("tune"));
      GenericPair pair = BalanceFinetune(c.model, fed.global_encoder, c.train, config.train,
                                         config.finetune, rng, c.guard);
      ens.generic_up = std::move(pair.up);
      ens.generic_down = std::move(pair.down);
    }
    result.ensembles.push_back(std::move(ens));
    result.ensemble_clients.push_back(c.id);
  }
  return result;
}

EvaluationReport EvaluateTraining(const TrainingResult& result) {
  std::vector<LabeledDataset> tests;
  for (size_t id : result.ensemble_clients) tests.push_back(result.fed.clients[id].test);
  return Evaluate(result.ensembles, tests, result.fed.config.eval.thresholds, result.fed.ood,
                  result.ensemble_clients);
}

}  // namespace tpfl
