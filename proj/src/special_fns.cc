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

#include "tpfl/special_fns.h"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

// Arguments below this are shifted upward by recurrence before the
// asymptotic series is applied.
constexpr double kSeriesThreshold = 10.0;

void CheckPositive(double x, const char* fn) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError(std::string(fn) + ": argument must be positive and finite, got " +
                      std::to_string(x));
  }
}

// Stirling series for ln Gamma(x), x >= kSeriesThreshold.
double LnGammaAsymptotic(double x) {
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli coefficients B_{2m} / (2m (2m-1)).
  const double series =
      inv * (1.0 / 12.0 +
             inv2 * (-1.0 / 360.0 +
                     inv2 * (1.0 / 1260.0 +
                             inv2 * (-1.0 / 1680.0 +
                                     inv2 * (1.0 / 1188.0 +
                                             inv2 * (-691.0 / 360360.0 +
                                                     inv2 * (1.0 / 156.0)))))));
  return (x - 0.5) * std::log(x) - x + 0.5 * std::log(2.0 * std::numbers::pi) + series;
}

double DigammaAsymptotic(double x) {
  const double inv2 = 1.0 / (x * x);
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                              inv2 * (691.0 / 32760.0 -
                                                      inv2 * (1.0 / 12.0)))))));
  return std::log(x) - 0.5 / x - series;
}

double TrigammaAsymptotic(double x) {
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      1.0 / 6.0 -
      inv2 * (1.0 / 30.0 -
              inv2 * (1.0 / 42.0 -
                      inv2 * (1.0 / 30.0 -
                              inv2 * (5.0 / 66.0 -
                                      inv2 * (691.0 / 2730.0 - inv2 * (7.0 / 6.0))))));
  return inv + 0.5 * inv2 + inv * inv2 * series;
}

// ln Gamma(1 + t) = -gamma t + sum_{k>=2} (-1)^k zeta(k) t^k / k, used for
// |t| small where the recurrence path would cancel against the root at 1.
double LnGammaNearOne(double t) {
  static const std::array<double, 40> kZetaOverK = [] {
    std::array<double, 40> z{};
    for (size_t k = 2; k < z.size(); ++k) {
      z[k] = std::riemann_zeta(static_cast<double>(k)) / static_cast<double>(k);
    }
    return z;
  }();
  double sum = 0.0;
  double power = t * t;
  for (size_t k = 2; k < kZetaOverK.size(); ++k) {
    sum += ((k % 2 == 0) ? 1.0 : -1.0) * kZetaOverK[k] * power;
    power *= t;
    if (std::abs(power) < 1e-18 * std::abs(sum)) break;
  }
  return -std::numbers::egamma * t + sum;
}

constexpr double kRootWindow = 0.2;

}  // namespace

double LnGamma(double x) {
  CheckPositive(x, "lgamma");
  if (x >= kSeriesThreshold) return LnGammaAsymptotic(x);
  if (std::abs(x - 1.0) < kRootWindow) return LnGammaNearOne(x - 1.0);
  if (std::abs(x - 2.0) < kRootWindow) return std::log1p(x - 2.0) + LnGammaNearOne(x - 2.0);
  // Gamma(x) = Gamma(x + n) / (x (x+1) ... (x+n-1)).
  double product = 1.0;
  double shifted = x;
  while (shifted < kSeriesThreshold) {
    product *= shifted;
    shifted += 1.0;
  }
  return LnGammaAsymptotic(shifted) - std::log(product);
}

double Digamma(double x) {
  CheckPositive(x, "digamma");
  if (x >= kSeriesThreshold) return DigammaAsymptotic(x);
  const int steps = static_cast<int>(std::ceil(kSeriesThreshold - x));
  // Accumulate the smallest reciprocals first; 1/x is added last.
  double correction = 0.0;
  for (int i = steps - 1; i >= 0; --i) correction += 1.0 / (x + i);
  return DigammaAsymptotic(x + steps) - correction;
}

double Trigamma(double x) {
  CheckPositive(x, "trigamma");
  if (x >= kSeriesThreshold) return TrigammaAsymptotic(x);
  const int steps = static_cast<int>(std::ceil(kSeriesThreshold - x));
  double correction = 0.0;
  for (int i = steps - 1; i >= 0; --i) {
    const double t = x + i;
    correction += 1.0 / (t * t);
  }
  return TrigammaAsymptotic(x + steps) + correction;
}

std::vector<double> DirichletSample(RngStream& rng, std::span<const double> alpha) {
  if (alpha.empty()) throw DomainError("dirichlet_sample: empty concentration vector");
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw DomainError("dirichlet_sample: concentration must be positive and finite");
    }
  }
  // Normalize Gamma draws in log space so tiny concentrations do not
  // underflow every component to zero.
  std::vector<double> logs(alpha.size());
  double max_log = -INFINITY;
  for (size_t i = 0; i < alpha.size(); ++i) {
    logs[i] = rng.LogGamma(alpha[i]);
    max_log = std::max(max_log, logs[i]);
  }
  double total = 0.0;
  for (double& v : logs) {
    v = std::exp(v - max_log);
    total += v;
  }
  for (double& v : logs) v /= total;
  return logs;
}

}  // namespace tpfl
