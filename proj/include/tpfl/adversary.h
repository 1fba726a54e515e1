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

#ifndef TPFL_ADVERSARY_H_
#define TPFL_ADVERSARY_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tpfl/data_forge.h"
#include "tpfl/rng.h"

namespace tpfl {

enum class AttackKind { kNone, kLabelFlip, kRandom, kLie, kMpaf, kStatOpt };

std::string AttackKindName(AttackKind kind);
// Throws DomainError for an unknown name.
AttackKind ParseAttackKind(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::kNone;
  double malicious_ratio = 0.0;
  // LIE deviation multiplier.
  double z = 1.5;
  // MPAF amplification.
  double lambda_scale = 100.0;
  // Scale of the random attack.
  double noise_sigma = 1.0;
  // Parameter-space attacks replace only the encoder part of the upload;
  // head and prior stay as synced.
  bool encoder_only = false;

  // Throws ValidationError listing every bad field.
  void Validate() const;
};

// The first floor(n * ratio) ids of a permutation seeded by `seed`, sorted.
std::vector<size_t> SelectMalicious(uint64_t seed, size_t n, double ratio);

// y -> k - 1 - y, features untouched.
LabeledDataset LabelFlip(const LabeledDataset& data);

// i.i.d. N(0, sigma^2) vector with the template's length.
std::vector<double> RandomUpdate(std::span<const double> templ, double sigma, RngStream& rng);

// Coordinate-wise mean + z * population std of the benign vectors.
std::vector<double> LieUpdate(std::span<const std::vector<double>> benign, double z);

// lambda * (base - global).
std::vector<double> MpafUpdate(std::span<const double> global, std::span<const double> base,
                               double lambda_scale);

// mean - gamma * sign(mean) * std, coordinate-wise.
std::vector<double> StatOptUpdate(std::span<const std::vector<double>> benign, double gamma);

// Doubling search over gamma = 0.01, 0.02, ... up to 100. Returns the largest
// gamma whose update `survives`, or 0.01 if none does.
double StatOptSearchGamma(std::span<const std::vector<double>> benign,
                          const std::function<bool(const std::vector<double>&)>& survives);

}  // namespace tpfl

#endif  // TPFL_ADVERSARY_H_
