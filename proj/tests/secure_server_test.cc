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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tpfl/adversary.h"
#include "tpfl/errors.h"

namespace tpfl {
namespace {

// One input, one hidden unit: encoder params are (w, b).
EvidentialModel Tiny(double w, double b) {
  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden = {1};
  spec.num_classes = 2;
  RngStream rng(1, 1);
  EvidentialModel m = EvidentialModel::Create(spec, rng);
  m.SetEncoderParams(std::vector<double>{w, b});
  return m;
}

EvidentialModel Mlp(uint64_t seed, Activation features = Activation::kGaussian) {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden = {8, 8};
  spec.num_classes = 3;
  spec.feature_activation = features;
  RngStream rng(seed, 7);
  return EvidentialModel::Create(spec, rng);
}

FeatureMatrix Holdout(size_t n, double scale, uint64_t seed) {
  RngStream rng(seed, 3);
  FeatureMatrix h;
  h.dim = 2;
  for (size_t i = 0; i < 2 * n; ++i) h.values.push_back(scale * (2.0 * rng.Uniform() - 1.0));
  return h;
}

std::vector<size_t> Ids(std::span<const UploadBundle> bundles, std::span<const size_t> idx) {
  std::vector<size_t> out;
  for (size_t i : idx) out.push_back(bundles[i].client_id);
  std::sort(out.begin(), out.end());
  return out;
}

TEST(AggregateEncoders, Examples) {
  const std::vector<UploadBundle> one = {{0, Tiny(0.25, -1.0), 5}};
  EXPECT_EQ(AggregateEncoders(one), (std::vector<double>{0.25, -1.0}));
  const std::vector<UploadBundle> equal = {{0, Tiny(0.0, 0.0), 1}, {1, Tiny(2.0, 2.0), 1}};
  EXPECT_EQ(AggregateEncoders(equal), (std::vector<double>{1.0, 1.0}));
  const std::vector<UploadBundle> weighted = {{0, Tiny(0.0, 0.0), 1}, {1, Tiny(4.0, 4.0), 3}};
  EXPECT_EQ(AggregateEncoders(weighted), (std::vector<double>{3.0, 3.0}));
  EXPECT_THROW(AggregateEncoders(std::vector<UploadBundle>{}), EmptyInputError);
}

TEST(OverflowFilter, KeepsBoundedAndRejectsScaled) {
  FilterConfig cfg;
  cfg.holdout = Holdout(50, 20.0, 1);
  EvidentialModel benign = Mlp(3, Activation::kRelu);
  // Scale by 100 the head weight with the largest positive contribution on
  // the holdout, the model-replacement pattern.
  EvidentialModel scaled = benign;
  auto& head = scaled.mutable_head();
  size_t best = 0;
  double best_push = 0.0;
  for (size_t h = 0; h < cfg.holdout.rows(); ++h) {
    const auto f = benign.Features(cfg.holdout.row(h));
    for (size_t c = 0; c < head.out; ++c) {
      for (size_t j = 0; j < head.in; ++j) {
        const double push = head.weights[c * head.in + j] * f[j];
        if (push > best_push) {
          best_push = push;
          best = c * head.in + j;
        }
      }
    }
  }
  head.weights[best] *= 100.0;
  ASSERT_GT(99.0 * best_push, 40.0);
  EvidentialModel broken = benign;
  broken.mutable_encoder()[0].bias[0] = NAN;
  const std::vector<UploadBundle> bundles = {{0, benign, 1}, {1, scaled, 1}, {2, broken, 1}};
  for (size_t h = 0; h < cfg.holdout.rows(); ++h) {
    for (double e : benign.Forward(cfg.holdout.row(h))) ASSERT_LT(e, cfg.evidence_cap);
  }
  const FilterResult r = OverflowFilter(bundles, cfg);
  EXPECT_EQ(r.kept, (std::vector<size_t>{0}));
  ASSERT_EQ(r.rejected.size(), 2u);
  for (const Rejection& rej : r.rejected) EXPECT_EQ(rej.stage, FilterStage::kOverflow);
}

TEST(OverflowFilter, RandomUploadsRejectedOnUnboundedFeatures) {
  RngStream data_rng(17, 0);
  const LabeledDataset blobs = MakeBlobs(4, 250, 2, 1.0, data_rng);
  FilterConfig cfg;
  cfg.holdout = MakeOod(100, blobs, data_rng);
  ModelSpec spec;
  spec.num_classes = 4;
  spec.feature_activation = Activation::kRelu;
  int rejected = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    RngStream rng(seed, 99);
    EvidentialModel m = EvidentialModel::Create(spec, rng);
    m.SetAllParams(RandomUpdate(m.AllParams(), 1.0, rng));
    const std::vector<UploadBundle> b = {{0, m, 1}};
    rejected += OverflowFilter(b, cfg).kept.empty();
  }
  EXPECT_GE(rejected, 99);
}

TEST(ModelUncertainty, HandBuiltHoldout) {
  ModelSpec spec;
  spec.input_dim = 1;
  spec.hidden = {1};
  spec.num_classes = 2;
  spec.prior_weight = 1.0;
  RngStream rng(2, 2);
  EvidentialModel m = EvidentialModel::Create(spec, rng);
  m.SetAllParams(std::vector<double>(m.AllParams().size(), 0.0));
  // alpha = exp(bias) + 0.5 = (2, 1) for every input.
  m.mutable_head().bias = {std::log(1.5), std::log(0.5)};
  FeatureMatrix h;
  h.dim = 1;
  h.values = {-3.0, 8.0};
  const std::vector<DirichletParams> ref(2, DirichletParams({1.0, 1.0}));
  EXPECT_NEAR(ModelUncertainty({0, m, 1}, ref, h), std::log(2.0) - 0.5, 1e-12);
}

TEST(ModelUncertainty, ZeroAgainstOwnReference) {
  FilterConfig cfg;
  cfg.holdout = Holdout(20, 10.0, 2);
  const std::vector<UploadBundle> b = {{4, Mlp(9), 10}};
  const std::vector<size_t> all = {0};
  const auto ref = ReferenceOpinions(b, all, cfg.holdout);
  EXPECT_EQ(ModelUncertainty(b[0], ref, cfg.holdout), 0.0);
}

TEST(SimilarityFilter, DistinctUploadsAllKept) {
  FilterConfig cfg;
  cfg.holdout = Holdout(30, 10.0, 3);
  std::vector<UploadBundle> b;
  for (size_t i = 0; i < 6; ++i) b.push_back({i, Mlp(100 + i), 10});
  const std::vector<size_t> all = {0, 1, 2, 3, 4, 5};
  const FilterResult r = SimilarityFilter(b, all, cfg);
  EXPECT_EQ(r.kept, all);
  EXPECT_TRUE(r.rejected.empty());
  EXPECT_FALSE(r.degenerate);
}

TEST(SimilarityFilter, IdenticalColludersRejected) {
  FilterConfig cfg;
  cfg.holdout = Holdout(30, 10.0, 4);
  std::vector<UploadBundle> b;
  for (size_t i = 0; i < 5; ++i) b.push_back({i, Mlp(200 + i), 10});
  const EvidentialModel colluder = Mlp(999);
  for (size_t i = 5; i < 8; ++i) b.push_back({i, colluder, 10});
  std::vector<size_t> all(b.size());
  std::iota(all.begin(), all.end(), 0);
  const FilterResult r = SimilarityFilter(b, all, cfg);
  EXPECT_EQ(Ids(b, r.kept), (std::vector<size_t>{0, 1, 2, 3, 4}));
  ASSERT_EQ(r.rejected.size(), 3u);
  EXPECT_EQ(r.uncertainty[5], r.uncertainty[6]);
  for (const Rejection& rej : r.rejected) {
    EXPECT_EQ(rej.stage, FilterStage::kSimilarity);
    EXPECT_TRUE(std::isfinite(rej.model_uncertainty));
  }
}

TEST(SimilarityFilter, GapOfTwoTauKeepsBoth) {
  FilterConfig cfg;
  cfg.holdout = Holdout(30, 10.0, 5);
  const std::vector<UploadBundle> b = {{0, Mlp(1), 1}, {1, Mlp(2), 1}, {2, Mlp(3), 1}};
  const std::vector<size_t> all = {0, 1, 2};
  FilterResult probe = SimilarityFilter(b, all, cfg);
  std::vector<double> u = probe.uncertainty;
  std::sort(u.begin(), u.end());
  const double gap = std::min(u[1] - u[0], u[2] - u[1]);
  ASSERT_GT(gap, 0.0);
  cfg.similarity_tau = gap / 2.0;
  EXPECT_TRUE(SimilarityFilter(b, all, cfg).rejected.empty());
  // Tolerance above every gap puts everyone in one group; the median survives.
  cfg.similarity_tau = 2.0 * (u[2] - u[0]);
  const FilterResult all_close = SimilarityFilter(b, all, cfg);
  EXPECT_TRUE(all_close.degenerate);
  ASSERT_EQ(all_close.kept.size(), 1u);
  EXPECT_EQ(all_close.uncertainty[all_close.kept[0]], u[1]);
}

TEST(SecureAggregate, BenignRoundEqualsWeightedMean) {
  FilterConfig cfg;
  cfg.holdout = Holdout(40, 12.0, 6);
  std::vector<UploadBundle> b;
  for (size_t i = 0; i < 5; ++i) b.push_back({i, Mlp(300 + i), 10 + i});
  const SecureResult r = SecureAggregate(b, cfg);
  EXPECT_TRUE(r.audit.rejections.empty());
  EXPECT_EQ(r.encoder, AggregateEncoders(b));
}

TEST(SecureAggregate, FiltersOffMatchesFedAvgBitForBit) {
  FilterConfig cfg;
  cfg.holdout = Holdout(10, 12.0, 7);
  cfg.overflow_enabled = false;
  cfg.similarity_enabled = false;
  std::vector<UploadBundle> b;
  std::vector<std::vector<double>> enc;
  std::vector<double> w;
  for (size_t i = 0; i < 4; ++i) {
    b.push_back({i, Mlp(400 + i), 3 + 2 * i});
    enc.push_back(b.back().model.EncoderParams());
    w.push_back(static_cast<double>(b.back().sample_count));
  }
  b.push_back({4, Mlp(500), 3});
  b.push_back({5, b.back().model, 3});
  enc.push_back(b[4].model.EncoderParams());
  enc.push_back(b[5].model.EncoderParams());
  w.push_back(3.0);
  w.push_back(3.0);
  const SecureResult r = SecureAggregate(b, cfg);
  const RobustResult fedavg = RobustAggregate(enc, w, {}, AggregationRule::kFedAvg, RobustConfig{});
  EXPECT_EQ(r.encoder, fedavg.params);
}

TEST(SecureAggregate, OrderInsensitive) {
  FilterConfig cfg;
  cfg.holdout = Holdout(30, 10.0, 8);
  std::vector<UploadBundle> b;
  for (size_t i = 0; i < 5; ++i) b.push_back({i, Mlp(600 + i), 10});
  for (size_t i = 5; i < 7; ++i) b.push_back({i, Mlp(42), 10});
  EvidentialModel big = Mlp(43, Activation::kRelu);
  for (double& v : big.mutable_head().weights) v *= 1e3;
  b.push_back({7, big, 10});
  const SecureResult base = SecureAggregate(b, cfg);
  std::vector<UploadBundle> rev(b.rbegin(), b.rend());
  const SecureResult other = SecureAggregate(rev, cfg);
  EXPECT_EQ(Ids(b, base.kept), Ids(rev, other.kept));
  EXPECT_EQ(Ids(b, base.kept), (std::vector<size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(base.encoder, other.encoder);
}

TEST(SecureAggregate, EverythingOverflowsFallsBack) {
  FilterConfig cfg;
  cfg.holdout = Holdout(10, 10.0, 9);
  std::vector<UploadBundle> b;
  for (size_t i : {3, 1, 2}) {
    EvidentialModel m = Mlp(700 + i);
    m.mutable_head().bias[0] = 1e3;
    b.push_back({i, m, 10});
  }
  const SecureResult r = SecureAggregate(b, cfg);
  EXPECT_TRUE(r.audit.degenerate_fallback);
  EXPECT_EQ(Ids(b, r.kept), (std::vector<size_t>{1}));
  EXPECT_EQ(r.encoder, b[1].model.EncoderParams());
}

TEST(RobustAggregate, CoordinateRules) {
  const std::vector<double> w3(3, 1.0), w4(4, 1.0);
  const std::vector<std::vector<double>> s3 = {{1.0}, {2.0}, {100.0}};
  EXPECT_EQ(RobustAggregate(s3, w3, {}, AggregationRule::kMedian, {}).params,
            (std::vector<double>{2.0}));
  const std::vector<std::vector<double>> s4 = {{1.0}, {2.0}, {3.0}, {100.0}};
  RobustConfig trim;
  trim.trim = 1;
  EXPECT_EQ(RobustAggregate(s4, w4, {}, AggregationRule::kTrimmedMean, trim).params,
            (std::vector<double>{2.5}));
  EXPECT_EQ(RobustAggregate(s4, w4, {}, AggregationRule::kMedian, {}).params,
            (std::vector<double>{2.5}));
}

TEST(RobustAggregate, KrumMatchesBruteForce) {
  RngStream rng(12, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 5 + rng.UniformIndex(5), d = 1 + rng.UniformIndex(4);
    RobustConfig cfg;
    cfg.assumed_attackers = 1;
    std::vector<std::vector<double>> u(n, std::vector<double>(d));
    for (auto& v : u) {
      for (double& x : v) x = rng.Normal();
    }
    // Brute force: score every candidate by its n - f - 2 closest others.
    size_t best = 0;
    double best_score = INFINITY;
    for (size_t a = 0; a < n; ++a) {
      std::vector<double> dists;
      for (size_t b = 0; b < n; ++b) {
        if (b == a) continue;
        double s = 0.0;
        for (size_t j = 0; j < d; ++j) s += (u[a][j] - u[b][j]) * (u[a][j] - u[b][j]);
        dists.push_back(s);
      }
      std::sort(dists.begin(), dists.end());
      double score = 0.0;
      for (size_t k = 0; k < n - 3; ++k) score += dists[k];
      if (score < best_score) {
        best_score = score;
        best = a;
      }
    }
    const RobustResult r =
        RobustAggregate(u, std::vector<double>(n, 1.0), {}, AggregationRule::kKrum, cfg);
    EXPECT_EQ(r.selected, (std::vector<size_t>{best}));
    EXPECT_EQ(r.params, u[best]);
  }
}

TEST(RobustAggregate, KrumIgnoresOutlier) {
  std::vector<std::vector<double>> u = {{0.0}, {0.01}, {-0.01}, {0.02}, {0.0}, {1e6}};
  RobustConfig cfg;
  cfg.assumed_attackers = 1;
  const std::vector<double> w(u.size(), 1.0);
  const RobustResult k = RobustAggregate(u, w, {}, AggregationRule::kKrum, cfg);
  ASSERT_EQ(k.selected.size(), 1u);
  EXPECT_NE(k.selected[0], 5u);
  const RobustResult mk = RobustAggregate(u, w, {}, AggregationRule::kMultiKrum, cfg);
  EXPECT_EQ(mk.selected, (std::vector<size_t>{0, 1, 2, 3, 4}));
  cfg.assumed_attackers = 2;
  EXPECT_THROW(RobustAggregate(u, w, {}, AggregationRule::kKrum, cfg), EmptyInputError);
}

TEST(RobustAggregate, NormClipBoundsOffsets) {
  const std::vector<std::vector<double>> u = {{3.0, 4.0}, {1.0, 1.0}};
  const std::vector<double> ref = {1.0, 1.0};
  RobustConfig cfg;
  cfg.clip_norm = 1.0;
  const RobustResult r =
      RobustAggregate(u, std::vector<double>{1.0, 1.0}, ref, AggregationRule::kNormClip, cfg);
  // Offsets (2, 3) -> clipped to unit length, (0, 0) unchanged; mean then shift.
  const double s = std::sqrt(13.0);
  EXPECT_NEAR(r.params[0], 1.0 + 0.5 * 2.0 / s, 1e-12);
  EXPECT_NEAR(r.params[1], 1.0 + 0.5 * 3.0 / s, 1e-12);
  EXPECT_THROW(RobustAggregate(u, std::vector<double>{1.0, 1.0}, ref, AggregationRule::kTpfl, cfg),
               DomainError);
}

TEST(FilterConfig, ValidateListsEveryProblem) {
  FilterConfig cfg;
  cfg.evidence_cap = 0.0;
  cfg.similarity_tau = -1.0;
  cfg.min_cluster = 1;
  try {
    cfg.Validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_GE(e.problems().size(), 3u);
  }
}

}  // namespace
}  // namespace tpfl
