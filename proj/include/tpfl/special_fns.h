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

#ifndef TPFL_SPECIAL_FNS_H_
#define TPFL_SPECIAL_FNS_H_

#include <span>
#include <vector>

#include "tpfl/rng.h"

namespace tpfl {

// ln Gamma(x) for x > 0. Throws DomainError for x <= 0 or non-finite x.
double LnGamma(double x);

// psi(x) = d/dx ln Gamma(x).
double Digamma(double x);

// psi'(x).
double Trigamma(double x);

// One draw from Dir(alpha). Components are nonnegative and sum to 1.
// Throws DomainError if any alpha_i <= 0 or alpha is empty.
std::vector<double> DirichletSample(RngStream& rng, std::span<const double> alpha);

}  // namespace tpfl

#endif  // TPFL_SPECIAL_FNS_H_
