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

#ifndef TPFL_OPINION_H_
#define TPFL_OPINION_H_

#include <span>
#include <vector>

namespace tpfl {

// Multinomial subjective opinion over k classes: belief masses, an
// uncertainty mass, a prior (base rate) and the non-informative prior
// weight W. belief + uncertainty sums to 1.
struct Opinion {
  std::vector<double> belief;
  double uncertainty = 1.0;
  std::vector<double> prior;
  double prior_weight = 1.0;

  size_t num_classes() const { return belief.size(); }
  // Evidence implied by the opinion: e_i = W b_i / u. Throws DegenerateError
  // for dogmatic opinions (u == 0).
  std::vector<double> Evidence() const;
  // Throws DomainError if any invariant is violated (tolerance 1e-9).
  void Validate() const;
};

// Concentration parameters of a Dirichlet distribution with cached strength.
class DirichletParams {
 public:
  DirichletParams() = default;
  // Throws DomainError unless every alpha_i is positive and finite.
  explicit DirichletParams(std::vector<double> alpha);

  const std::vector<double>& alpha() const { return alpha_; }
  double strength() const { return strength_; }
  size_t size() const { return alpha_.size(); }
  double operator[](size_t i) const { return alpha_[i]; }

 private:
  std::vector<double> alpha_;
  double strength_ = 0.0;
};

// A vacuous (no evidence) opinion.
Opinion VacuousOpinion(std::span<const double> prior, double prior_weight);

Opinion OpinionFromEvidence(std::span<const double> evidence,
                            std::span<const double> prior, double prior_weight);

// alpha = e + W a. DegenerateError when the opinion is dogmatic.
DirichletParams DirichletFromOpinion(const Opinion& op);

// Inverse of DirichletFromOpinion.
Opinion OpinionFromDirichlet(const DirichletParams& params,
                             std::span<const double> prior, double prior_weight);

// Projected probability P_i = b_i + a_i u.
std::vector<double> ExpectProb(const Opinion& op);

// Uncertainty-informed binary fusion.
//
//   b = (b_A (1-u_A) u_B + b_B (1-u_B) u_A) / (u_A + u_B - 2 u_A u_B)
//   u = (2 - u_A - u_B) u_A u_B / (u_A + u_B - 2 u_A u_B)
//   a = (a_A (1-u_A) + a_B (1-u_B)) / (2 - u_A - u_B)
//
// Limits: exactly one dogmatic input wins outright; two dogmatic inputs throw
// DegenerateError; two vacuous inputs yield the vacuous opinion with the
// mean prior.
Opinion Fuse(const Opinion& a, const Opinion& b);

// n-ary fusion as the confidence-weighted average of evidence and priors,
// weights (1 - u_i). Agrees with Fuse for two inputs. All-vacuous input gives
// the vacuous opinion with the arithmetic-mean prior. Throws EmptyInputError
// for an empty list.
Opinion FuseMany(std::span<const Opinion> ops);

// KL[Dir(p) || Dir(q)] in closed form.
double KlDirichlet(const DirichletParams& p, const DirichletParams& q);

}  // namespace tpfl

#endif  // TPFL_OPINION_H_
