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

#include "tpfl/opinion.h"

#include <cmath>
#include <string>

#include "tpfl/errors.h"
#include "tpfl/special_fns.h"

namespace tpfl {
namespace {

constexpr double kTol = 1e-9;
constexpr double kFuseDenominatorFloor = 1e-12;

void CheckPrior(std::span<const double> prior, const char* where) {
  if (prior.empty()) throw DomainError(std::string(where) + ": empty prior");
  double sum = 0.0;
  for (double p : prior) {
    if (!std::isfinite(p) || p < -kTol) {
      throw DomainError(std::string(where) + ": prior components must be nonnegative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kTol) {
    throw DomainError(std::string(where) + ": prior must sum to 1, sums to " +
                      std::to_string(sum));
  }
}

void CheckWeight(double w, const char* where) {
  if (!(w > 0.0) || !std::isfinite(w)) {
    throw DomainError(std::string(where) + ": prior weight must be positive");
  }
}

void CheckCompatible(const Opinion& a, const Opinion& b) {
  if (a.num_classes() != b.num_classes()) {
    throw ShapeError("fuse: opinions have different class counts");
  }
  if (a.prior_weight != b.prior_weight) {
    throw DomainError("fuse: opinions have different prior weights");
  }
}

std::vector<double> MeanPrior(std::span<const Opinion> ops) {
  std::vector<double> prior(ops.front().num_classes(), 0.0);
  for (const auto& op : ops) {
    for (size_t i = 0; i < prior.size(); ++i) prior[i] += op.prior[i];
  }
  for (double& p : prior) p /= static_cast<double>(ops.size());
  return prior;
}

}  // namespace

std::vector<double> Opinion::Evidence() const {
  if (uncertainty <= 0.0) {
    throw DegenerateError("dogmatic opinion (u = 0) has unbounded evidence");
  }
  std::vector<double> e(belief.size());
  for (size_t i = 0; i < e.size(); ++i) e[i] = prior_weight * belief[i] / uncertainty;
  return e;
}

void Opinion::Validate() const {
  if (belief.empty()) throw DomainError("opinion: no classes");
  if (prior.size() != belief.size()) throw ShapeError("opinion: prior/belief size mismatch");
  CheckWeight(prior_weight, "opinion");
  CheckPrior(prior, "opinion");
  if (!std::isfinite(uncertainty) || uncertainty < -kTol || uncertainty > 1.0 + kTol) {
    throw DomainError("opinion: uncertainty outside [0, 1]");
  }
  double mass = uncertainty;
  for (double b : belief) {
    if (!std::isfinite(b) || b < -kTol || b > 1.0 + kTol) {
      throw DomainError("opinion: belief mass outside [0, 1]");
    }
    mass += b;
  }
  if (std::abs(mass - 1.0) > kTol) {
    throw DomainError("opinion: belief + uncertainty must equal 1");
  }
}

DirichletParams::DirichletParams(std::vector<double> alpha) : alpha_(std::move(alpha)) {
  if (alpha_.empty()) throw DomainError("dirichlet: empty concentration vector");
  strength_ = 0.0;
  for (double a : alpha_) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw DomainError("dirichlet: concentration parameters must be positive and finite");
    }
    strength_ += a;
  }
}

Opinion VacuousOpinion(std::span<const double> prior, double prior_weight) {
  Opinion op;
  op.belief.assign(prior.size(), 0.0);
  op.uncertainty = 1.0;
  op.prior.assign(prior.begin(), prior.end());
  op.prior_weight = prior_weight;
  return op;
}

Opinion OpinionFromEvidence(std::span<const double> evidence,
                            std::span<const double> prior, double prior_weight) {
  if (evidence.size() != prior.size()) {
    throw ShapeError("opinion_from_evidence: evidence/prior size mismatch");
  }
  CheckPrior(prior, "opinion_from_evidence");
  CheckWeight(prior_weight, "opinion_from_evidence");
  double total = 0.0;
  for (double e : evidence) {
    if (!std::isfinite(e) || e < 0.0) {
      throw DomainError("opinion_from_evidence: evidence must be finite and nonnegative");
    }
    total += e;
  }
  const double denom = prior_weight + total;
  Opinion op;
  op.belief.resize(evidence.size());
  for (size_t i = 0; i < evidence.size(); ++i) op.belief[i] = evidence[i] / denom;
  op.uncertainty = prior_weight / denom;
  op.prior.assign(prior.begin(), prior.end());
  op.prior_weight = prior_weight;
  return op;
}

DirichletParams DirichletFromOpinion(const Opinion& op) {
  op.Validate();
  if (op.uncertainty <= 0.0) {
    throw DegenerateError("dirichlet_from_opinion: dogmatic opinion has no Dirichlet form");
  }
  std::vector<double> alpha(op.num_classes());
  for (size_t i = 0; i < alpha.size(); ++i) {
    alpha[i] = op.prior_weight * op.belief[i] / op.uncertainty + op.prior_weight * op.prior[i];
  }
  return DirichletParams(std::move(alpha));
}

Opinion OpinionFromDirichlet(const DirichletParams& params,
                             std::span<const double> prior, double prior_weight) {
  if (params.size() != prior.size()) {
    throw ShapeError("opinion_from_dirichlet: alpha/prior size mismatch");
  }
  CheckPrior(prior, "opinion_from_dirichlet");
  CheckWeight(prior_weight, "opinion_from_dirichlet");
  std::vector<double> evidence(params.size());
  for (size_t i = 0; i < evidence.size(); ++i) {
    const double e = params[i] - prior_weight * prior[i];
    if (e < -kTol) {
      throw DomainError("opinion_from_dirichlet: implied evidence is negative");
    }
    evidence[i] = std::max(e, 0.0);
  }
  return OpinionFromEvidence(evidence, prior, prior_weight);
}

std::vector<double> ExpectProb(const Opinion& op) {
  op.Validate();
  std::vector<double> p(op.num_classes());
  for (size_t i = 0; i < p.size(); ++i) p[i] = op.belief[i] + op.prior[i] * op.uncertainty;
  return p;
}

Opinion Fuse(const Opinion& a, const Opinion& b) {
  a.Validate();
  b.Validate();
  CheckCompatible(a, b);
  const double ua = a.uncertainty;
  const double ub = b.uncertainty;
  if (ua == 0.0 && ub == 0.0) {
    throw DegenerateError("fuse: both opinions are dogmatic");
  }
  if (ua == 0.0) return a;
  if (ub == 0.0) return b;
  const double denom = ua + ub - 2.0 * ua * ub;
  if (denom < kFuseDenominatorFloor) {
    // Only reachable when both are (numerically) vacuous.
    const Opinion pair[] = {a, b};
    return VacuousOpinion(MeanPrior(pair), a.prior_weight);
  }
  const double wa = 1.0 - ua;
  const double wb = 1.0 - ub;
  const size_t k = a.num_classes();
  Opinion out;
  out.belief.resize(k);
  out.prior.resize(k);
  for (size_t i = 0; i < k; ++i) {
    out.belief[i] = (a.belief[i] * wa * ub + b.belief[i] * wb * ua) / denom;
    out.prior[i] = (a.prior[i] * wa + b.prior[i] * wb) / (wa + wb);
  }
  out.uncertainty = (2.0 - ua - ub) * ua * ub / denom;
  out.prior_weight = a.prior_weight;
  return out;
}

Opinion FuseMany(std::span<const Opinion> ops) {
  if (ops.empty()) throw EmptyInputError("fuse_many: empty opinion list");
  const Opinion& first = ops.front();
  first.Validate();
  const Opinion* dogmatic = nullptr;
  for (const auto& op : ops) {
    op.Validate();
    CheckCompatible(first, op);
    if (op.uncertainty == 0.0) {
      if (dogmatic != nullptr) throw DegenerateError("fuse_many: several dogmatic opinions");
      dogmatic = &op;
    }
  }
  if (dogmatic != nullptr) return *dogmatic;
  if (ops.size() == 1) return first;
  // Vacuous opinions carry zero weight; with one informative opinion left the
  // result is that opinion, returned exactly.
  const Opinion* only = nullptr;
  size_t informative = 0;
  for (const auto& op : ops) {
    if (op.uncertainty < 1.0) {
      only = &op;
      ++informative;
    }
  }
  if (informative == 1) return *only;

  const size_t k = first.num_classes();
  std::vector<double> evidence(k, 0.0);
  std::vector<double> prior(k, 0.0);
  double total_weight = 0.0;
  for (const auto& op : ops) {
    const double w = 1.0 - op.uncertainty;
    if (w <= 0.0) continue;
    const std::vector<double> e = op.Evidence();
    for (size_t i = 0; i < k; ++i) {
      evidence[i] += w * e[i];
      prior[i] += w * op.prior[i];
    }
    total_weight += w;
  }
  if (total_weight <= 0.0) return VacuousOpinion(MeanPrior(ops), first.prior_weight);
  for (size_t i = 0; i < k; ++i) {
    evidence[i] /= total_weight;
    prior[i] /= total_weight;
  }
  return OpinionFromEvidence(evidence, prior, first.prior_weight);
}

double KlDirichlet(const DirichletParams& p, const DirichletParams& q) {
  if (p.size() != q.size()) throw ShapeError("kl_dirichlet: dimension mismatch");
  if (p.size() == 0) throw DomainError("kl_dirichlet: empty parameters");
  const double sp = p.strength();
  const double digamma_sp = Digamma(sp);
  double kl = LnGamma(sp) - LnGamma(q.strength());
  for (size_t i = 0; i < p.size(); ++i) {
    kl += LnGamma(q[i]) - LnGamma(p[i]) + (p[i] - q[i]) * (Digamma(p[i]) - digamma_sp);
  }
  return kl;
}

}  // namespace tpfl
