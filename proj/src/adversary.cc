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

#include <algorithm>
#include <cmath>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

void CheckBenign(std::span<const std::vector<double>> benign, const char* fn) {
  if (benign.size() < 2) {
    throw EmptyInputError(std::string(fn) + ": need at least 2 benign updates");
  }
  for (const auto& v : benign) {
    if (v.size() != benign[0].size()) throw ShapeError(std::string(fn) + ": length mismatch");
  }
}

// Coordinate-wise mean and population standard deviation.
void MeanStd(std::span<const std::vector<double>> vs, std::vector<double>& mean,
             std::vector<double>& sd) {
  const size_t d = vs[0].size();
  const double n = static_cast<double>(vs.size());
  mean.assign(d, 0.0);
  sd.assign(d, 0.0);
  for (const auto& v : vs) {
    for (size_t j = 0; j < d; ++j) mean[j] += v[j];
  }
  for (double& m : mean) m /= n;
  for (const auto& v : vs) {
    for (size_t j = 0; j < d; ++j) sd[j] += (v[j] - mean[j]) * (v[j] - mean[j]);
  }
  for (double& s : sd) s = std::sqrt(s / n);
}

}  // namespace

std::string AttackKindName(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kLabelFlip: return "label_flip";
    case AttackKind::kRandom: return "random";
    case AttackKind::kLie: return "lie";
    case AttackKind::kMpaf: return "mpaf";
    case AttackKind::kStatOpt: return "stat_opt";
  }
  return "?";
}

AttackKind ParseAttackKind(const std::string& name) {
  for (AttackKind k : {AttackKind::kNone, AttackKind::kLabelFlip, AttackKind::kRandom,
                       AttackKind::kLie, AttackKind::kMpaf, AttackKind::kStatOpt}) {
    if (AttackKindName(k) == name) return k;
  }
  throw DomainError("unknown attack kind '" + name + "'");
}

void AttackConfig::Validate() const {
  std::vector<std::string> problems;
  if (!(malicious_ratio >= 0.0 && malicious_ratio <= 0.5)) {
    problems.push_back("malicious_ratio: must be in [0, 0.5]");
  }
  if (!std::isfinite(z)) problems.push_back("z: must be finite");
  if (!(lambda_scale > 0.0) || !std::isfinite(lambda_scale)) {
    problems.push_back("lambda_scale: must be positive");
  }
  if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
    problems.push_back("noise_sigma: must be positive");
  }
  if (!problems.empty()) throw ValidationError(problems);
}

std::vector<size_t> SelectMalicious(uint64_t seed, size_t n, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw DomainError("malicious ratio must be in [0, 1)");
  const auto count = static_cast<size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
  RngStream rng(seed, StreamKey("mal"));
  std::vector<size_t> perm = rng.Permutation(n);
  perm.resize(count);
  std::sort(perm.begin(), perm.end());
  return perm;
}

LabeledDataset LabelFlip(const LabeledDataset& data) {
  if (data.num_classes < 2) throw DomainError("label_flip: need at least 2 classes");
  LabeledDataset out = data;
  const int k = static_cast<int>(data.num_classes);
  for (int& y : out.labels) y = k - 1 - y;
  return out;
}

std::vector<double> RandomUpdate(std::span<const double> templ, double sigma, RngStream& rng) {
  if (!(sigma > 0.0)) throw DomainError("random_update: sigma must be positive");
  std::vector<double> out(templ.size());
  for (double& v : out) v = sigma * rng.Normal();
  return out;
}

std::vector<double> LieUpdate(std::span<const std::vector<double>> benign, double z) {
  CheckBenign(benign, "lie_update");
  std::vector<double> mean, sd;
  MeanStd(benign, mean, sd);
  for (size_t j = 0; j < mean.size(); ++j) mean[j] += z * sd[j];
  return mean;
}

std::vector<double> MpafUpdate(std::span<const double> global, std::span<const double> base,
                               double lambda_scale) {
  if (global.size() != base.size()) throw ShapeError("mpaf_update: length mismatch");
  std::vector<double> out(global.size());
  for (size_t j = 0; j < out.size(); ++j) out[j] = lambda_scale * (base[j] - global[j]);
  return out;
}

std::vector<double> StatOptUpdate(std::span<const std::vector<double>> benign, double gamma) {
  CheckBenign(benign, "stat_opt_update");
  std::vector<double> mean, sd;
  MeanStd(benign, mean, sd);
  for (size_t j = 0; j < mean.size(); ++j) {
    const double sign = mean[j] > 0.0 ? 1.0 : (mean[j] < 0.0 ? -1.0 : 0.0);
    mean[j] -= gamma * sign * sd[j];
  }
  return mean;
}

double StatOptSearchGamma(std::span<const std::vector<double>> benign,
                          const std::function<bool(const std::vector<double>&)>& survives) {
  double best = 0.0;
  for (double gamma = 0.01; gamma <= 100.0; gamma *= 2.0) {
    if (survives(StatOptUpdate(benign, gamma))) best = gamma;
  }
  return best > 0.0 ? best : 0.01;
}

}  // namespace tpfl
