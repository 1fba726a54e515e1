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

#ifndef TPFL_EVIDENTIAL_NET_H_
#define TPFL_EVIDENTIAL_NET_H_

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tpfl/opinion.h"
#include "tpfl/rng.h"

namespace tpfl {

struct LabeledDataset;

enum class Activation { kRelu, kLeakyRelu, kTanh, kGaussian };

std::string ActivationName(Activation act);
// Throws DomainError for an unknown name.
Activation ParseActivation(const std::string& name);

// Fully connected layer; weights are out x in, row-major.
struct DenseLayer {
  size_t in = 0;
  size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  DenseLayer() = default;
  DenseLayer(size_t in_dim, size_t out_dim)
      : in(in_dim), out(out_dim), weights(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}
  size_t num_params() const { return weights.size() + bias.size(); }
};

struct ModelSpec {
  size_t input_dim = 2;
  std::vector<size_t> hidden = {32, 32};
  size_t num_classes = 2;
  // Between encoder layers.
  Activation activation = Activation::kRelu;
  // On the last hidden layer, whose outputs feed the head. A bounded,
  // decaying choice keeps far-away inputs near zero evidence.
  Activation feature_activation = Activation::kGaussian;
  // Non-positive means "use the class count".
  double prior_weight = 0.0;
  double score_clamp = std::log(1e12);
  // Initial value of every head bias. Negative values start the model with
  // less than one unit of evidence per class where features vanish.
  double head_bias_init = -1.0;
};

// MLP encoder + linear head with exponential evidence activation and a
// trainable class prior.
class EvidentialModel {
 public:
  EvidentialModel() = default;
  // Encoder layers use He-normal init, head Xavier-normal, encoder biases
  // zero, head biases spec.head_bias_init.
  // The prior starts uniform.
  static EvidentialModel Create(const ModelSpec& spec, RngStream& rng);

  size_t input_dim() const;
  size_t num_classes() const { return head_.out; }
  size_t feature_dim() const { return head_.in; }
  // One per encoder layer.
  const std::vector<Activation>& activations() const { return activations_; }
  double score_clamp() const { return score_clamp_; }
  double prior_weight() const { return prior_weight_; }

  const std::vector<DenseLayer>& encoder() const { return encoder_; }
  std::vector<DenseLayer>& mutable_encoder() { return encoder_; }
  const DenseLayer& head() const { return head_; }
  DenseLayer& mutable_head() { return head_; }
  const std::vector<double>& prior() const { return prior_; }
  // Throws DomainError unless the prior is a valid simplex of the right size.
  void set_prior(std::vector<double> prior);
  void set_prior_weight(double w);

  // Encoder output for one sample.
  std::vector<double> Features(std::span<const double> x) const;
  // Raw head scores z.
  std::vector<double> Scores(std::span<const double> x) const;
  // e_i = exp(min(z_i, score_clamp)).
  std::vector<double> Forward(std::span<const double> x) const;
  // Opinion formed from Forward() and this model's own prior.
  Opinion OpinionFor(std::span<const double> x) const;

  // Flattened parameters: each layer's weights then bias, in order.
  size_t num_encoder_params() const;
  size_t num_head_params() const { return head_.num_params(); }
  std::vector<double> EncoderParams() const;
  void SetEncoderParams(std::span<const double> flat);
  std::vector<double> HeadParams() const;
  void SetHeadParams(std::span<const double> flat);
  // Encoder followed by head. The prior is not included.
  std::vector<double> AllParams() const;
  void SetAllParams(std::span<const double> flat);

  bool SameArchitecture(const EvidentialModel& other) const;
  // True if every parameter and the prior are finite.
  bool IsFinite() const;

  // Versioned binary checkpoint; round trip is bit-exact.
  void Save(std::ostream& out) const;
  static EvidentialModel Load(std::istream& in);
  void SaveFile(const std::string& path) const;
  static EvidentialModel LoadFile(const std::string& path);

  bool operator==(const EvidentialModel& other) const;

 private:
  std::vector<DenseLayer> encoder_;
  DenseLayer head_;
  std::vector<Activation> activations_;
  std::vector<double> prior_;
  double prior_weight_ = 1.0;
  double score_clamp_ = std::log(1e12);
};

// Which loss terms participate; used by tests and ablations. All on by
// default.
struct LossTerms {
  bool ce = true;
  bool cor = true;
  bool inc = true;
  bool evi = true;
  bool neg = true;
};

// Which loss gradients may move the prior. The default lets every term
// except L_inc update it.
enum class PriorUpdate { kAllButInc, kNegOnly, kFrozen };

struct TrainConfig {
  double learning_rate = 0.01;
  double lambda1 = 0.1;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  double epsilon = 10000.0;
  int local_epochs = 5;
  int batch_size = 32;
  LossTerms terms;
  PriorUpdate prior_update = PriorUpdate::kAllButInc;
  bool train_encoder = true;
  bool train_head = true;
  // Global gradient-norm ceiling per step; 0 disables clipping.
  double grad_clip = 5.0;

  // Throws ValidationError listing every bad field.
  void Validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double cor = 0.0;
  double inc = 0.0;
  double evi = 0.0;
  double neg = 0.0;
};

// Individual loss terms. `label` is the ground-truth class index.
double LossCe(const DirichletParams& alpha, size_t label);
double LossInc(const DirichletParams& alpha, size_t label, std::span<const double> prior,
               double prior_weight);
double LossCor(const DirichletParams& alpha, size_t label, std::span<const double> prior,
               double uncertainty);
double LossEvi(std::span<const double> evidence, double epsilon);
double LossNeg(std::span<const double> prior_raw);

// Loss of one sample given its raw scores, plus gradients with respect to
// the raw scores and the prior. The prior gradient honours cfg.prior_update.
struct SampleGradient {
  LossBreakdown loss;
  std::vector<double> d_scores;
  std::vector<double> d_prior;
};
SampleGradient LossAndGradient(std::span<const double> scores, size_t label,
                               std::span<const double> prior, double prior_weight,
                               double score_clamp, const TrainConfig& cfg);

// Mean loss and flattened parameter gradient (encoder then head layout, as
// AllParams) over a set of samples; the prior gradient is returned separately.
struct BatchGradient {
  LossBreakdown loss;
  std::vector<double> d_params;
  std::vector<double> d_prior;
};
BatchGradient ComputeBatchGradient(const EvidentialModel& model, const LabeledDataset& data,
                                   std::span<const size_t> indices, const TrainConfig& cfg);

// Clip negatives to zero and renormalize. A vector already on the simplex is
// returned unchanged.
std::vector<double> ProjectToSimplex(std::span<const double> v);

// Smoothed empirical class frequency, (count + 1) / (n + k).
std::vector<double> FrequencyPrior(const LabeledDataset& data);

struct TrainResult {
  EvidentialModel model;
  std::vector<LossBreakdown> history;  // one per epoch
};

// Mini-batch SGD over `data` for cfg.local_epochs. Batch order is reshuffled
// each epoch from `rng`. Throws EmptyInputError on empty data and
// NonFiniteLossError if a batch loss is NaN/Inf.
TrainResult TrainLocal(EvidentialModel model, const LabeledDataset& data,
                       const TrainConfig& cfg, RngStream& rng);

// Fraction of samples whose argmax expected probability matches the label.
double Accuracy(const EvidentialModel& model, const LabeledDataset& data);

}  // namespace tpfl

#endif  // TPFL_EVIDENTIAL_NET_H_
