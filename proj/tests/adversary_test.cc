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

#include "tpfl/adversary.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

LabeledDataset FourClass() {
  LabeledDataset d;
  d.dim = 1;
  d.num_classes = 4;
  for (int y = 0; y < 4; ++y) {
    d.features.push_back(static_cast<double>(y) * 10.0);
    d.labels.push_back(y);
  }
  return d;
}

TEST(LabelFlip, MapsAndIsInvolution) {
  const LabeledDataset d = FourClass();
  const LabeledDataset f = LabelFlip(d);
  EXPECT_EQ(f.labels, (std::vector<int>{3, 2, 1, 0}));
  EXPECT_EQ(f.features, d.features);
  EXPECT_EQ(LabelFlip(f).labels, d.labels);
}

TEST(LabelFlip, BinarySwapsCounts) {
  LabeledDataset d;
  d.dim = 1;
  d.num_classes = 2;
  for (int i = 0; i < 10; ++i) {
    d.features.push_back(i);
    d.labels.push_back(i < 7 ? 0 : 1);
  }
  EXPECT_EQ(LabelFlip(d).ClassCounts(), (std::vector<size_t>{3, 7}));
}

TEST(RandomUpdate, TinySigmaNearZero) {
  RngStream rng(1, 2);
  const auto v = RandomUpdate(std::vector<double>(50, 7.0), 1e-8, rng);
  ASSERT_EQ(v.size(), 50u);
  for (double x : v) EXPECT_LT(std::abs(x), 1e-6);
}

TEST(RandomUpdate, Deterministic) {
  RngStream a(5, 6), b(5, 6);
  const std::vector<double> t(20, 0.0);
  EXPECT_EQ(RandomUpdate(t, 1.0, a), RandomUpdate(t, 1.0, b));
}

TEST(RandomUpdate, StdWithinThreeStandardErrors) {
  RngStream rng(11, 0);
  const double sigma = 2.5;
  const size_t n = 100000;
  const auto v = RandomUpdate(std::vector<double>(n, 0.0), sigma, rng);
  double m = 0.0, s2 = 0.0;
  for (double x : v) m += x;
  m /= n;
  for (double x : v) s2 += (x - m) * (x - m);
  const double sd = std::sqrt(s2 / (n - 1));
  // Standard error of the sample std of a normal sample.
  const double se = sigma / std::sqrt(2.0 * (n - 1));
  EXPECT_LT(std::abs(sd - sigma), 3.0 * se);
}

TEST(LieUpdate, Examples) {
  const std::vector<std::vector<double>> same = {{1.0, -2.0}, {1.0, -2.0}, {1.0, -2.0}};
  EXPECT_EQ(LieUpdate(same, 1.5), same[0]);
  const std::vector<std::vector<double>> b = {{0.0, 1.0}, {2.0, 5.0}};
  EXPECT_EQ(LieUpdate(b, 0.0), (std::vector<double>{1.0, 3.0}));
  const std::vector<std::vector<double>> s = {{0.0}, {2.0}};
  EXPECT_DOUBLE_EQ(LieUpdate(s, 1.0)[0], 2.0);
}

TEST(LieUpdate, Errors) {
  const std::vector<std::vector<double>> one = {{1.0}};
  EXPECT_THROW(LieUpdate(one, 1.0), EmptyInputError);
  const std::vector<std::vector<double>> ragged = {{1.0}, {1.0, 2.0}};
  EXPECT_THROW(LieUpdate(ragged, 1.0), ShapeError);
}

TEST(MpafUpdate, Examples) {
  const std::vector<double> g = {0.5, 1.0}, base = {1.5, 0.0};
  EXPECT_EQ(MpafUpdate(g, base, 0.0), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(MpafUpdate(g, g, 100.0), (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(MpafUpdate(g, base, 2.0), (std::vector<double>{2.0, -2.0}));
  EXPECT_THROW(MpafUpdate(g, std::vector<double>{1.0}, 2.0), ShapeError);
}

TEST(StatOptUpdate, Examples) {
  const std::vector<std::vector<double>> b = {{1.0, -4.0}, {3.0, -2.0}};
  EXPECT_EQ(StatOptUpdate(b, 0.0), (std::vector<double>{2.0, -3.0}));
  const auto out = StatOptUpdate(b, 1.0);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], -2.0);
  const std::vector<std::vector<double>> flat = {{2.0}, {2.0}};
  EXPECT_EQ(StatOptUpdate(flat, 50.0), (std::vector<double>{2.0}));
  const std::vector<std::vector<double>> one = {{1.0}};
  EXPECT_THROW(StatOptUpdate(one, 1.0), EmptyInputError);
}

TEST(StatOptSearchGamma, LargestSurvivor) {
  const std::vector<std::vector<double>> b = {{1.0}, {3.0}};
  // Survives while the update stays at or above -1, i.e. gamma <= 3.
  auto survives = [](const std::vector<double>& v) { return v[0] >= -1.0; };
  EXPECT_DOUBLE_EQ(StatOptSearchGamma(b, survives), 2.56);
  EXPECT_DOUBLE_EQ(StatOptSearchGamma(b, [](const std::vector<double>&) { return false; }), 0.01);
  const double top = StatOptSearchGamma(b, [](const std::vector<double>&) { return true; });
  EXPECT_LE(top, 100.0);
  EXPECT_GT(top * 2.0, 100.0);
}

TEST(SelectMalicious, DeterministicPrefixOfPermutation) {
  const auto a = SelectMalicious(3, 10, 0.3);
  EXPECT_EQ(a.size(), 3u);
  EXPECT_EQ(a, SelectMalicious(3, 10, 0.3));
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_TRUE(SelectMalicious(3, 10, 0.0).empty());
  EXPECT_EQ(SelectMalicious(3, 10, 0.5).size(), 5u);
  // Larger ratios extend the same permutation prefix.
  const auto b = SelectMalicious(3, 10, 0.5);
  for (size_t id : a) EXPECT_NE(std::find(b.begin(), b.end(), id), b.end());
}

TEST(AttackConfig, ValidateListsEveryProblem) {
  AttackConfig c;
  c.malicious_ratio = 0.7;
  c.lambda_scale = -1.0;
  c.noise_sigma = 0.0;
  try {
    c.Validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.problems().size(), 3u);
  }
  EXPECT_NO_THROW(AttackConfig{}.Validate());
}

TEST(AttackKind, NamesRoundTrip) {
  for (auto k : {AttackKind::kNone, AttackKind::kLabelFlip, AttackKind::kRandom, AttackKind::kLie,
                 AttackKind::kMpaf, AttackKind::kStatOpt}) {
    EXPECT_EQ(ParseAttackKind(AttackKindName(k)), k);
  }
  EXPECT_THROW(ParseAttackKind("backdoor"), DomainError);
}

}  // namespace
}  // namespace tpfl
