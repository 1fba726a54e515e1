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

#include "tpfl/evidential_net.h"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "oracles.h"
#include "tpfl/data_forge.h"
#include "tpfl/errors.h"
#include "tpfl/special_fns.h"

namespace tpfl {
namespace {

const double kLn2 = std::log(2.0);

TrainConfig OnlyTerm(const std::string& term) {
  TrainConfig cfg;
  cfg.terms = LossTerms{term == "ce", term == "cor", term == "inc", term == "evi", term == "neg"};
  return cfg;
}

std::vector<double> RandomSimplex(RngStream& rng, size_t k, double floor) {
  const std::vector<double> ones(k, 1.0);
  std::vector<double> p = DirichletSample(rng, ones);
  for (double& v : p) v = floor + (1.0 - k * floor) * v;
  return p;
}

TEST(LossTerms, CrossEntropyExamples) {
  EXPECT_NEAR(LossCe(DirichletParams({1, 1}), 0), 1.0, 1e-12);
  EXPECT_NEAR(LossCe(DirichletParams({2, 1}), 0), 0.5, 1e-12);
  EXPECT_NEAR(LossCe(DirichletParams({5, 1}), 0), 0.2, 1e-12);
}

TEST(LossTerms, IncorrectEvidenceExamples) {
  const std::vector<double> half = {0.5, 0.5};
  // No off-class evidence: trimmed alpha equals W a.
  EXPECT_NEAR(LossInc(DirichletParams({7, 1}), 0, half, 2.0), 0.0, 1e-12);
  // e = (0, 1), y = 0: KL(Dir(1, 2) || Dir(1, 1)).
  EXPECT_NEAR(LossInc(DirichletParams({1, 2}), 0, half, 2.0), kLn2 - 0.5, 1e-12);
  double previous = 0.0;
  for (double wrong : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    const double v = LossInc(DirichletParams({3.0, 1.0 + wrong}), 0, half, 2.0);
    EXPECT_GT(v, previous);
    previous = v;
  }
}

TEST(LossTerms, CorrectEvidenceExamples) {
  const std::vector<double> half = {0.5, 0.5};
  // e = (1, 0), W = 2: alpha = (2, 1), u = 2/3.
  EXPECT_NEAR(LossCor(DirichletParams({2, 1}), 0, half, 2.0 / 3.0), -(2.0 / 3.0) * std::log(1.5),
              1e-12);
  EXPECT_DOUBLE_EQ(LossCor(DirichletParams({2, 1}), 0, half, 0.0), 0.0);
  EXPECT_NEAR(LossCor(DirichletParams({1.5, 1}), 0, half, 0.7), 0.0, 1e-15);
}

TEST(LossTerms, EvidenceAndNegativityExamples) {
  const double eps = 10000.0;
  EXPECT_DOUBLE_EQ(LossEvi(std::vector<double>{eps, 3.0, 0.0}, eps), 0.0);
  EXPECT_DOUBLE_EQ(LossEvi(std::vector<double>{eps + 3, 0.0}, eps), 9.0);
  EXPECT_DOUBLE_EQ(LossEvi(std::vector<double>{eps + 1, eps + 2}, eps), 5.0);
  EXPECT_DOUBLE_EQ(LossNeg(std::vector<double>{0.5, 0.5}), 0.0);
  EXPECT_NEAR(LossNeg(std::vector<double>{-0.1, 1.1}), 0.1, 1e-15);
  EXPECT_NEAR(LossNeg(std::vector<double>{-0.2, -0.3, 1.5}), 0.5, 1e-15);
}

TEST(LossAndGradient, TotalMatchesWeightedTerms) {
  TrainConfig cfg;
  cfg.lambda1 = 0.3;
  cfg.lambda2 = 0.7;
  cfg.lambda3 = 1.9;
  cfg.epsilon = 2.0;
  const std::vector<double> z = {1.2, -0.4, 0.9};
  const std::vector<double> prior = {0.2, 0.5, 0.3};
  const auto g = LossAndGradient(z, 1, prior, 3.0, 30.0, cfg);
  const auto& l = g.loss;
  EXPECT_NEAR(l.total, l.ce + l.cor + 0.3 * l.inc + 0.7 * l.evi + 1.9 * l.neg, 1e-12);
  EXPECT_GT(l.evi, 0.0);
}

// Every term's analytic gradient against central differences, h = 1e-5.
TEST(LossAndGradient, MatchesFiniteDifferencesPerTerm) {
  RngStream rng(123, 0);
  for (const std::string term : {"ce", "cor", "inc", "evi", "neg"}) {
    for (int trial = 0; trial < 100; ++trial) {
      const size_t k = 2 + rng.UniformIndex(4);
      const double w = rng.Uniform() < 0.5 ? static_cast<double>(k) : 0.5 + 5.0 * rng.Uniform();
      const size_t label = rng.UniformIndex(k);
      TrainConfig cfg = OnlyTerm(term);
      cfg.lambda1 = 0.1 + rng.Uniform();
      cfg.lambda2 = 0.1 + rng.Uniform();
      cfg.lambda3 = 0.1 + rng.Uniform();
      cfg.epsilon = 0.5 + 10.0 * rng.Uniform();
      std::vector<double> z(k);
      for (double& v : z) v = -3.0 + 6.0 * rng.Uniform();
      std::vector<double> prior = RandomSimplex(rng, k, 0.05);
      if (term == "neg") {
        for (double& a : prior) a += rng.Uniform() < 0.5 ? -0.3 - rng.Uniform() : 0.0;
      }

      const auto g = LossAndGradient(z, label, prior, w, 50.0, cfg);
      auto loss_of_z = [&](const std::vector<double>& zz) {
        return LossAndGradient(zz, label, prior, w, 50.0, cfg).loss.total;
      };
      auto loss_of_prior = [&](const std::vector<double>& aa) {
        return LossAndGradient(z, label, aa, w, 50.0, cfg).loss.total;
      };
      const auto fd_z = oracle::CentralDifference(loss_of_z, z);
      for (size_t i = 0; i < k; ++i) {
        EXPECT_LE(oracle::RelativeError(g.d_scores[i], fd_z[i]), 1e-4)
            << term << " dz[" << i << "] trial " << trial << ": " << g.d_scores[i] << " vs "
            << fd_z[i];
      }
      const auto fd_a = oracle::CentralDifference(loss_of_prior, prior);
      for (size_t i = 0; i < k; ++i) {
        if (term == "inc") {
          // Stop-gradient: L_inc never moves the prior.
          EXPECT_EQ(g.d_prior[i], 0.0);
          continue;
        }
        EXPECT_LE(oracle::RelativeError(g.d_prior[i], fd_a[i]), 1e-4)
            << term << " da[" << i << "] trial " << trial << ": " << g.d_prior[i] << " vs "
            << fd_a[i];
      }
    }
  }
}

TEST(LossAndGradient, PriorUpdateSwitch) {
  const std::vector<double> z = {0.3, -0.2};
  const std::vector<double> prior = {0.6, 0.4};
  TrainConfig cfg;
  cfg.prior_update = PriorUpdate::kFrozen;
  for (double d : LossAndGradient(z, 0, prior, 2.0, 30.0, cfg).d_prior) EXPECT_EQ(d, 0.0);
  cfg.prior_update = PriorUpdate::kNegOnly;
  for (double d : LossAndGradient(z, 0, prior, 2.0, 30.0, cfg).d_prior) EXPECT_EQ(d, 0.0);
  cfg.prior_update = PriorUpdate::kAllButInc;
  const auto g = LossAndGradient(z, 0, prior, 2.0, 30.0, cfg);
  EXPECT_NE(g.d_prior[0], 0.0);
}

LabeledDataset TinyData(RngStream& rng, size_t k, size_t dim, size_t n) {
  LabeledDataset d;
  d.dim = dim;
  d.num_classes = k;
  std::vector<double> x(dim);
  for (size_t i = 0; i < n; ++i) {
    for (double& v : x) v = rng.Normal();
    d.Append(x, static_cast<int>(rng.UniformIndex(k)));
  }
  return d;
}

// Backpropagation through the whole network against central differences.
TEST(ComputeBatchGradient, MatchesFiniteDifferences) {
  RngStream rng(321, 0);
  for (Activation act : {Activation::kTanh, Activation::kGaussian, Activation::kLeakyRelu}) {
    for (int trial = 0; trial < 12; ++trial) {
      ModelSpec spec;
      spec.input_dim = 1 + rng.UniformIndex(3);
      spec.num_classes = 2 + rng.UniformIndex(4);
      spec.hidden.clear();
      const size_t layers = 1 + rng.UniformIndex(2);
      for (size_t l = 0; l < layers; ++l) spec.hidden.push_back(2 + rng.UniformIndex(4));
      spec.activation = act;
      spec.feature_activation = act;
      EvidentialModel model = EvidentialModel::Create(spec, rng);
      model.set_prior(RandomSimplex(rng, spec.num_classes, 0.05));
      const LabeledDataset data = TinyData(rng, spec.num_classes, spec.input_dim, 5);
      std::vector<size_t> idx = {0, 1, 2, 3, 4};
      TrainConfig cfg;
      cfg.epsilon = 1.5;

      const BatchGradient g = ComputeBatchGradient(model, data, idx, cfg);
      auto loss_of = [&](const std::vector<double>& params) {
        EvidentialModel m = model;
        m.SetAllParams(params);
        return ComputeBatchGradient(m, data, idx, cfg).loss.total;
      };
      const auto fd = oracle::CentralDifference(loss_of, model.AllParams());
      int bad = 0;
      for (size_t i = 0; i < fd.size(); ++i) {
        if (oracle::RelativeError(g.d_params[i], fd[i]) > 1e-4) ++bad;
      }
      // Piecewise-linear activations may straddle a kink on a rare coordinate.
      const int allowed = act == Activation::kLeakyRelu ? 1 : 0;
      EXPECT_LE(bad, allowed) << ActivationName(act) << " trial " << trial;
    }
  }
}

TEST(Forward, ZeroModelGivesUnitEvidence) {
  RngStream rng(1, 1);
  ModelSpec spec;
  spec.num_classes = 3;
  EvidentialModel model = EvidentialModel::Create(spec, rng);
  model.SetAllParams(std::vector<double>(model.AllParams().size(), 0.0));
  for (double e : model.Forward(std::vector<double>{0.7, -1.3})) EXPECT_DOUBLE_EQ(e, 1.0);
}

TEST(Forward, ClampsRawScores) {
  RngStream rng(1, 2);
  ModelSpec spec;
  spec.score_clamp = 5.0;
  EvidentialModel model = EvidentialModel::Create(spec, rng);
  model.SetAllParams(std::vector<double>(model.AllParams().size(), 0.0));
  model.mutable_head().bias[0] = 15.0;
  const auto e = model.Forward(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(e[0], std::exp(5.0));
  EXPECT_DOUBLE_EQ(e[1], 1.0);
}

TEST(Forward, PureAndShapeChecked) {
  RngStream rng(9, 9);
  const EvidentialModel model = EvidentialModel::Create(ModelSpec{}, rng);
  const std::vector<double> x = {0.3, 2.0};
  EXPECT_EQ(model.Forward(x), model.Forward(x));
  EXPECT_THROW(model.Forward(std::vector<double>{1.0}), ShapeError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  RngStream rng(4, 4);
  ModelSpec spec;
  spec.input_dim = 3;
  spec.num_classes = 5;
  spec.hidden = {7, 4};
  spec.activation = Activation::kTanh;
  EvidentialModel model = EvidentialModel::Create(spec, rng);
  model.set_prior({0.1, 0.2, 0.3, 0.15, 0.25});
  model.mutable_head().bias[2] = -0.0;
  model.mutable_encoder()[0].weights[3] = 1e-310;  // subnormal survives
  std::stringstream buffer;
  model.Save(buffer);
  const EvidentialModel back = EvidentialModel::Load(buffer);
  EXPECT_TRUE(back == model);
  EXPECT_TRUE(std::signbit(back.head().bias[2]));
  std::stringstream again;
  back.Save(again);
  std::stringstream first;
  model.Save(first);
  EXPECT_EQ(again.str(), first.str());
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream garbage("definitely not a model");
  EXPECT_THROW(EvidentialModel::Load(garbage), ParseError);
  RngStream rng(4, 5);
  std::stringstream buffer;
  EvidentialModel::Create(ModelSpec{}, rng).Save(buffer);
  std::string truncated = buffer.str().substr(0, 60);
  std::stringstream cut(truncated);
  EXPECT_THROW(EvidentialModel::Load(cut), ParseError);
}

TEST(ProjectToSimplex, ClipsAndNormalizes) {
  const auto p = ProjectToSimplex(std::vector<double>{-0.2, 0.6, 0.2});
  EXPECT_DOUBLE_EQ(p[0], 0.0);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  EXPECT_NEAR(p[2], 0.25, 1e-15);
  const std::vector<double> exact = {0.25, 0.75};
  EXPECT_EQ(ProjectToSimplex(exact), exact);
}

LabeledDataset TwoBlobs(uint64_t seed, size_t per_class, double spread) {
  RngStream rng(seed, 0);
  return MakeBlobs(2, per_class, 2, spread, rng, 3.0);
}

// Independent check that the data is linearly separable: plain logistic
// regression on the raw features.
double LogisticRegressionAccuracy(const LabeledDataset& data) {
  double w0 = 0, w1 = 0, b = 0;
  for (int it = 0; it < 2000; ++it) {
    double g0 = 0, g1 = 0, gb = 0;
    for (size_t i = 0; i < data.size(); ++i) {
      const auto x = data.row(i);
      const double p = 1.0 / (1.0 + std::exp(-(w0 * x[0] + w1 * x[1] + b)));
      const double err = p - data.labels[i];
      g0 += err * x[0];
      g1 += err * x[1];
      gb += err;
    }
    w0 -= 0.1 * g0 / data.size();
    w1 -= 0.1 * g1 / data.size();
    b -= 0.1 * gb / data.size();
  }
  size_t correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    correct += ((w0 * x[0] + w1 * x[1] + b > 0) ? 1 : 0) == data.labels[i];
  }
  return static_cast<double>(correct) / data.size();
}

TEST(TrainLocal, FitsSeparableBlobs) {
  const LabeledDataset data = TwoBlobs(10, 100, 0.5);
  ASSERT_EQ(LogisticRegressionAccuracy(data), 1.0);
  RngStream rng(10, 1);
  EvidentialModel model = EvidentialModel::Create(ModelSpec{}, rng);
  TrainConfig cfg;
  cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = 0.0;
  cfg.local_epochs = 50;
  const TrainResult r = TrainLocal(model, data, cfg, rng);
  EXPECT_EQ(Accuracy(r.model, data), 1.0);
  ASSERT_EQ(r.history.size(), 50u);
  EXPECT_LT(r.history.back().total, r.history.front().total);
}

TEST(TrainLocal, ZeroLearningRateLeavesModelUntouched) {
  const LabeledDataset data = TwoBlobs(11, 30, 1.0);
  RngStream rng(11, 1);
  EvidentialModel model = EvidentialModel::Create(ModelSpec{}, rng);
  model.set_prior(FrequencyPrior(data));
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.local_epochs = 3;
  const TrainResult r = TrainLocal(model, data, cfg, rng);
  EXPECT_TRUE(r.model == model);
}

TEST(TrainLocal, DeterministicUnderSeed) {
  const LabeledDataset data = TwoBlobs(12, 40, 1.0);
  RngStream init(12, 1);
  const EvidentialModel model = EvidentialModel::Create(ModelSpec{}, init);
  TrainConfig cfg;
  cfg.local_epochs = 4;
  RngStream a(99, 5), b(99, 5);
  EXPECT_TRUE(TrainLocal(model, data, cfg, a).model == TrainLocal(model, data, cfg, b).model);
}

TEST(TrainLocal, IncorrectEvidenceTermNeverMovesPrior) {
  const LabeledDataset data = TwoBlobs(13, 40, 1.5);
  RngStream rng(13, 1);
  EvidentialModel model = EvidentialModel::Create(ModelSpec{}, rng);
  model.set_prior({0.3, 0.7});
  TrainConfig cfg = OnlyTerm("inc");
  cfg.lambda1 = 1.0;
  cfg.local_epochs = 3;
  const TrainResult r = TrainLocal(model, data, cfg, rng);
  EXPECT_EQ(r.model.prior(), model.prior());
  EXPECT_NE(r.model.EncoderParams(), model.EncoderParams());
}

TEST(TrainLocal, PriorStaysOnSimplexAndLossIdentityHolds) {
  const LabeledDataset data = TwoBlobs(14, 60, 1.5);
  RngStream rng(14, 1);
  EvidentialModel model = EvidentialModel::Create(ModelSpec{}, rng);
  model.set_prior(FrequencyPrior(data));
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = static_cast<int>(data.size());  // one step per epoch
  cfg.local_epochs = 1;
  for (int step = 0; step < 40; ++step) {
    const TrainResult r = TrainLocal(model, data, cfg, rng);
    model = r.model;
    double sum = 0.0;
    for (double a : model.prior()) {
      EXPECT_GE(a, 0.0);
      sum += a;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    const LossBreakdown& l = r.history.front();
    EXPECT_NEAR(l.total, l.ce + l.cor + cfg.lambda1 * l.inc + cfg.lambda2 * l.evi +
                             cfg.lambda3 * l.neg,
                1e-9);
  }
}

TEST(TrainLocal, Errors) {
  RngStream rng(15, 1);
  const EvidentialModel model = EvidentialModel::Create(ModelSpec{}, rng);
  LabeledDataset empty;
  empty.dim = 2;
  empty.num_classes = 2;
  EXPECT_THROW(TrainLocal(model, empty, TrainConfig{}, rng), EmptyInputError);
  TrainConfig bad;
  bad.epsilon = -1;
  bad.batch_size = 0;
  try {
    TrainLocal(model, TwoBlobs(1, 5, 1.0), bad, rng);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.problems().size(), 2u);
  }
}

TEST(TrainLocal, NonFiniteLossIsReported) {
  LabeledDataset data = TwoBlobs(16, 5, 1.0);
  RngStream rng(16, 1);
  EvidentialModel model = EvidentialModel::Create(ModelSpec{}, rng);
  model.mutable_head().weights[0] = NAN;
  try {
    TrainLocal(model, data, TrainConfig{}, rng);
    FAIL() << "expected NonFiniteLossError";
  } catch (const NonFiniteLossError& e) {
    EXPECT_EQ(e.epoch(), 0);
    EXPECT_EQ(e.batch(), 0);
  }
}

TEST(FrequencyPrior, SmoothedCounts) {
  LabeledDataset d;
  d.dim = 1;
  d.num_classes = 3;
  for (int y : {0, 0, 0, 1}) d.Append(std::vector<double>{0.0}, y);
  const auto p = FrequencyPrior(d);
  EXPECT_NEAR(p[0], 4.0 / 7.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(p[2], 1.0 / 7.0, 1e-15);
}

}  // namespace
}  // namespace tpfl
