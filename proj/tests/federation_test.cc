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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

ScenarioConfig Small(uint64_t seed) {
  ScenarioConfig c;
  c.seed = seed;
  c.rounds = 3;
  c.dataset.per_class = 100;
  c.train.local_epochs = 1;
  c.eval.ood_size = 50;
  c.eval.holdout_size = 30;
  return c;
}

bool SameReports(const RoundReport& a, const RoundReport& b) {
  if (a.clients.size() != b.clients.size()) return false;
  for (size_t i = 0; i < a.clients.size(); ++i) {
    const auto &x = a.clients[i], &y = b.clients[i];
    if (x.rejected != y.rejected || x.participated != y.participated) return false;
    if (std::memcmp(&x.accuracy, &y.accuracy, sizeof(double)) != 0) return false;
    if (std::memcmp(&x.loss.total, &y.loss.total, sizeof(double)) != 0) return false;
  }
  return a.audit.uncertainty.size() == b.audit.uncertainty.size() &&
         std::equal(a.audit.uncertainty.begin(), a.audit.uncertainty.end(),
                    b.audit.uncertainty.begin(),
                    [](double u, double v) { return std::memcmp(&u, &v, sizeof u) == 0; }) &&
         a.rejected_benign == b.rejected_benign && a.rejected_malicious == b.rejected_malicious;
}

TEST(PersonalizeSync, OwnEncoderIsNoOp) {
  Federation fed = SetupFederation(Small(1));
  ClientState& c = fed.clients[2];
  c.model.set_prior({0.1, 0.2, 0.3, 0.4});
  const EvidentialModel before = c.model;
  PersonalizeSync(c, before.EncoderParams());
  EXPECT_TRUE(c.model == before);
  PersonalizeSync(c, std::vector<double>(before.num_encoder_params(), 0.5));
  EXPECT_EQ(c.model.HeadParams(), before.HeadParams());
  EXPECT_EQ(c.model.prior(), before.prior());
}

TEST(RunTraining, ZeroRoundsReturnsInitialModels) {
  ScenarioConfig c = Small(2);
  c.rounds = 0;
  const TrainingResult r = RunTraining(c);
  const Federation fresh = SetupFederation(c);
  EXPECT_TRUE(r.reports.empty());
  EXPECT_EQ(r.fed.global_encoder, fresh.global_encoder);
  for (size_t i = 0; i < fresh.clients.size(); ++i) {
    EXPECT_TRUE(r.fed.clients[i].model == fresh.clients[i].model);
  }
}

TEST(RunTraining, OneRoundEqualsManualRound) {
  ScenarioConfig c = Small(3);
  c.rounds = 1;
  const TrainingResult r = RunTraining(c);
  Federation fed = SetupFederation(c);
  const RoundReport manual = RunRound(fed, 0);
  EXPECT_EQ(r.fed.global_encoder, fed.global_encoder);
  ASSERT_EQ(r.reports.size(), 1u);
  EXPECT_TRUE(SameReports(r.reports[0], manual));
}

TEST(RunTraining, Deterministic) {
  ScenarioConfig c = Small(4);
  c.attack.kind = AttackKind::kLie;
  c.attack.malicious_ratio = 0.3;
  const TrainingResult a = RunTraining(c), b = RunTraining(c);
  ASSERT_EQ(a.reports.size(), b.reports.size());
  for (size_t i = 0; i < a.reports.size(); ++i) EXPECT_TRUE(SameReports(a.reports[i], b.reports[i]));
  EXPECT_EQ(a.fed.global_encoder, b.fed.global_encoder);
}

TEST(RunRound, SingleParticipantBecomesGlobal) {
  ScenarioConfig c = Small(5);
  c.partition.num_clients = 2;
  c.participation = 0.5;
  c.defense.filter.overflow_enabled = false;
  c.defense.filter.similarity_enabled = false;
  Federation fed = SetupFederation(c);
  const RoundReport r = RunRound(fed, 0);
  size_t who = 0, active = 0;
  for (size_t i = 0; i < r.clients.size(); ++i) {
    if (r.clients[i].participated) {
      who = i;
      ++active;
    }
  }
  ASSERT_EQ(active, 1u);
  // Replay the participant's local step by hand.
  Federation replay = SetupFederation(c);
  ClientState& p = replay.clients[who];
  PersonalizeSync(p, replay.global_encoder);
  RngStream rng = p.rng.Derive(0);
  const EvidentialModel trained = TrainLocal(p.model, p.train, c.train, rng).model;
  EXPECT_EQ(fed.global_encoder, trained.EncoderParams());
}

TEST(RunRound, TpflAndFedAvgAgreeWithoutRejections) {
  for (uint64_t seed : {6, 7, 8}) {
    ScenarioConfig c = Small(seed);
    Federation tpfl = SetupFederation(c);
    c.defense.rule = AggregationRule::kFedAvg;
    Federation fedavg = SetupFederation(c);
    for (int r = 0; r < 3; ++r) {
      const RoundReport rep = RunRound(tpfl, r);
      RunRound(fedavg, r);
      ASSERT_EQ(rep.rejected_benign, 0u);
      EXPECT_EQ(tpfl.global_encoder, fedavg.global_encoder);
    }
  }
}

TEST(RunTraining, ZeroRatioAttacksAreNoOps) {
  ScenarioConfig base = Small(9);
  const TrainingResult clean = RunTraining(base);
  for (AttackKind k : {AttackKind::kLabelFlip, AttackKind::kRandom, AttackKind::kLie,
                       AttackKind::kMpaf, AttackKind::kStatOpt}) {
    ScenarioConfig c = base;
    c.attack.kind = k;
    c.attack.malicious_ratio = 0.0;
    const TrainingResult r = RunTraining(c);
    EXPECT_EQ(r.fed.global_encoder, clean.fed.global_encoder) << AttackKindName(k);
    for (size_t i = 0; i < r.reports.size(); ++i) {
      EXPECT_TRUE(SameReports(r.reports[i], clean.reports[i])) << AttackKindName(k);
    }
  }
}

TEST(RunRound, HeadsAndPriorsStayLocal) {
  ScenarioConfig c = Small(10);
  Federation fed = SetupFederation(c);
  RunRound(fed, 0);
  // Scrambling every client's head and prior must not move the next global
  // encoder when filters are off.
  c.defense.filter.overflow_enabled = false;
  c.defense.filter.similarity_enabled = false;
  fed.config = c;
  Federation twin = fed;
  for (ClientState& cl : twin.clients) {
    std::vector<double> head = cl.model.HeadParams();
    for (double& v : head) v = -v;
    cl.model.SetHeadParams(head);
  }
  std::vector<std::vector<double>> enc_a, enc_b;
  for (size_t i = 0; i < fed.clients.size(); ++i) {
    enc_a.push_back(fed.clients[i].model.EncoderParams());
    enc_b.push_back(twin.clients[i].model.EncoderParams());
  }
  EXPECT_EQ(enc_a, enc_b);
  std::vector<UploadBundle> a, b;
  for (size_t i = 0; i < fed.clients.size(); ++i) {
    a.push_back({i, fed.clients[i].model, fed.clients[i].train.size()});
    b.push_back({i, twin.clients[i].model, twin.clients[i].train.size()});
    b.back().model.set_prior(std::vector<double>(4, 0.25));
  }
  EXPECT_EQ(AggregateEncoders(a), AggregateEncoders(b));
}

TEST(RunRound, LieCollidersRejectedAtSimilarityStage) {
  int caught = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ScenarioConfig c = Small(seed);
    c.attack.kind = AttackKind::kLie;
    c.attack.malicious_ratio = 0.3;
    Federation fed = SetupFederation(c);
    const RoundReport r = RunRound(fed, 0);
    size_t hit = 0;
    for (const Rejection& rej : r.audit.rejections) {
      if (fed.clients[rej.client_id].malicious && rej.stage == FilterStage::kSimilarity) ++hit;
    }
    caught += hit == 3;
  }
  EXPECT_GE(caught, 95);
}

TEST(RunRound, RandomUploadsOverflowOnUnboundedFeatures) {
  int caught = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    ScenarioConfig c;
    c.seed = seed;
    c.model.feature_activation = Activation::kRelu;
    c.attack.kind = AttackKind::kRandom;
    c.attack.malicious_ratio = 0.3;
    Federation fed = SetupFederation(c);
    const RoundReport r = RunRound(fed, 0);
    size_t hit = 0;
    for (const Rejection& rej : r.audit.rejections) {
      if (fed.clients[rej.client_id].malicious && rej.stage == FilterStage::kOverflow) ++hit;
    }
    caught += hit == 3;
  }
  EXPECT_GE(caught, 99);
}

TEST(RunTraining, DefaultScenarioAccuracyAndConvergence) {
  ScenarioConfig c;
  const TrainingResult r = RunTraining(c);
  ASSERT_EQ(r.reports.size(), 30u);
  EXPECT_GE(r.reports.back().mean_accuracy, 0.85);
  const EvaluationReport ev = EvaluateTraining(r);
  EXPECT_GE(ev.mean_accuracy[0], 0.85);
  // Five-round window means after round 10 never fall by more than 2 points.
  double prev = -1.0;
  for (int start = 10; start + 5 <= 30; start += 5) {
    double m = 0.0;
    for (int i = start; i < start + 5; ++i) m += r.reports[i].mean_accuracy;
    m /= 5.0;
    if (prev >= 0.0) EXPECT_GE(m, prev - 0.02) << "window at round " << start;
    prev = m;
  }
  // Far-away inputs look less certain than the median test sample.
  std::vector<double> id;
  for (size_t k = 0; k < r.ensembles.size(); ++k) {
    const LabeledDataset& t = r.fed.clients[r.ensemble_clients[k]].test;
    for (size_t i = 0; i < t.size(); ++i) id.push_back(Predict(r.ensembles[k], t.row(i)).uncertainty);
  }
  std::nth_element(id.begin(), id.begin() + id.size() / 2, id.end());
  const double far[] = {60.0, -45.0};
  for (const InferenceEnsemble& e : r.ensembles) EXPECT_GT(Predict(e, far).uncertainty, id[id.size() / 2]);
}

TEST(ScenarioConfig, ValidationNamesEveryField) {
  ScenarioConfig c;
  c.partition.beta = -1.0;
  c.train.learning_rate = 0.0;
  c.attack.malicious_ratio = 0.9;
  c.eval.thresholds = {0.0};
  try {
    c.Validate();
    FAIL();
  } catch (const ValidationError& e) {
    const auto& p = e.problems();
    auto has = [&](const std::string& prefix) {
      return std::any_of(p.begin(), p.end(),
                         [&](const std::string& s) { return s.rfind(prefix, 0) == 0; });
    };
    EXPECT_TRUE(has("partition.beta"));
    EXPECT_TRUE(has("training.learning_rate"));
    EXPECT_TRUE(has("attack.malicious_ratio"));
    EXPECT_TRUE(has("evaluation.thresholds"));
  }
}

}  // namespace
}  // namespace tpfl
