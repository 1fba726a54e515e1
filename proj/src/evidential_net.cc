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

#include <algorithm>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "tpfl/data_forge.h"
#include "tpfl/errors.h"
#include "tpfl/special_fns.h"

namespace tpfl {
namespace {

constexpr double kLeakySlope = 0.01;
// Floors keeping every Dirichlet parameter strictly positive.
constexpr double kAlphaFloor = 1e-8;
constexpr double kCorFloor = 1e-8;
constexpr double kIncReferenceFloor = 1e-6;

constexpr char kCheckpointMagic[8] = {'T', 'P', 'F', 'L', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

double Activate(Activation act, double x) {
  switch (act) {
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
    case Activation::kLeakyRelu:
      return x > 0.0 ? x : kLeakySlope * x;
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kGaussian:
      return std::exp(-x * x);
  }
  return x;
}

double ActivateGrad(Activation act, double pre, double post) {
  switch (act) {
    case Activation::kRelu:
      return pre > 0.0 ? 1.0 : 0.0;
    case Activation::kLeakyRelu:
      return pre > 0.0 ? 1.0 : kLeakySlope;
    case Activation::kTanh:
      return 1.0 - post * post;
    case Activation::kGaussian:
      return -2.0 * pre * post;
  }
  return 1.0;
}

void Affine(const DenseLayer& layer, std::span<const double> in, std::span<double> out) {
  for (size_t o = 0; o < layer.out; ++o) {
    const double* w = &layer.weights[o * layer.in];
    double acc = layer.bias[o];
    for (size_t i = 0; i < layer.in; ++i) acc += w[i] * in[i];
    out[o] = acc;
  }
}

void InitNormal(std::vector<double>& values, double stddev, RngStream& rng) {
  for (double& v : values) v = rng.Normal(0.0, stddev);
}

// Walks a flat parameter vector in AllParams() layout.
template <typename Fn>
void ForEachBlock(std::vector<DenseLayer>& encoder, DenseLayer& head, Fn&& fn) {
  for (auto& layer : encoder) {
    fn(layer.weights);
    fn(layer.bias);
  }
  fn(head.weights);
  fn(head.bias);
}

void WriteU32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void WriteU64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void WriteF64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  WriteU64(out, bits);
}

void WriteArray(std::ostream& out, const std::vector<double>& values) {
  WriteU64(out, values.size());
  for (double v : values) WriteF64(out, v);
}

uint32_t ReadU32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated checkpoint", 0, 0);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t ReadU64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("truncated checkpoint", 0, 0);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double ReadF64(std::istream& in) {
  const uint64_t bits = ReadU64(in);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::vector<double> ReadArray(std::istream& in, size_t expected) {
  const uint64_t n = ReadU64(in);
  if (n != expected) throw ParseError("checkpoint array length mismatch", 0, 0);
  std::vector<double> values(n);
  for (double& v : values) v = ReadF64(in);
  return values;
}

}  // namespace

std::string ActivationName(Activation act) {
  switch (act) {
    case Activation::kRelu:
      return "relu";
    case Activation::kLeakyRelu:
      return "leaky_relu";
    case Activation::kTanh:
      return "tanh";
    case Activation::kGaussian:
      return "gaussian";
  }
  return "unknown";
}

Activation ParseActivation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "gaussian") return Activation::kGaussian;
  throw DomainError("unknown activation '" + name + "'");
}

EvidentialModel EvidentialModel::Create(const ModelSpec& spec, RngStream& rng) {
  if (spec.input_dim == 0) throw DomainError("model: input_dim must be positive");
  if (spec.num_classes < 2) throw DomainError("model: need at least two classes");
  EvidentialModel m;
  m.score_clamp_ = spec.score_clamp;
  m.prior_weight_ =
      spec.prior_weight > 0.0 ? spec.prior_weight : static_cast<double>(spec.num_classes);
  size_t width = spec.input_dim;
  for (size_t h : spec.hidden) {
    if (h == 0) throw DomainError("model: hidden widths must be positive");
    DenseLayer layer(width, h);
    InitNormal(layer.weights, std::sqrt(2.0 / static_cast<double>(width)), rng);
    m.encoder_.push_back(std::move(layer));
    m.activations_.push_back(m.activations_.size() + 1 == spec.hidden.size()
                                 ? spec.feature_activation
                                 : spec.activation);
    width = h;
  }
  m.head_ = DenseLayer(width, spec.num_classes);
  InitNormal(m.head_.weights, std::sqrt(1.0 / static_cast<double>(width)), rng);
  std::fill(m.head_.bias.begin(), m.head_.bias.end(), spec.head_bias_init);
  m.prior_.assign(spec.num_classes, 1.0 / static_cast<double>(spec.num_classes));
  return m;
}

size_t EvidentialModel::input_dim() const {
  return encoder_.empty() ? head_.in : encoder_.front().in;
}

void EvidentialModel::set_prior(std::vector<double> prior) {
  if (prior.size() != num_classes()) throw ShapeError("model: prior size mismatch");
  double sum = 0.0;
  for (double p : prior) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("model: prior must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("model: prior must sum to 1");
  prior_ = std::move(prior);
}

void EvidentialModel::set_prior_weight(double w) {
  if (!(w > 0.0) || !std::isfinite(w)) throw DomainError("model: prior weight must be positive");
  prior_weight_ = w;
}

std::vector<double> EvidentialModel::Features(std::span<const double> x) const {
  if (x.size() != input_dim()) {
    throw ShapeError("model: expected input of dimension " + std::to_string(input_dim()) +
                     ", got " + std::to_string(x.size()));
  }
  std::vector<double> current(x.begin(), x.end());
  std::vector<double> next;
  for (size_t l = 0; l < encoder_.size(); ++l) {
    const DenseLayer& layer = encoder_[l];
    next.resize(layer.out);
    Affine(layer, current, next);
    for (double& v : next) v = Activate(activations_[l], v);
    current.swap(next);
  }
  return current;
}

std::vector<double> EvidentialModel::Scores(std::span<const double> x) const {
  const std::vector<double> h = Features(x);
  std::vector<double> z(head_.out);
  Affine(head_, h, z);
  return z;
}

std::vector<double> EvidentialModel::Forward(std::span<const double> x) const {
  std::vector<double> e = Scores(x);
  for (double& v : e) v = std::exp(std::min(v, score_clamp_));
  return e;
}

Opinion EvidentialModel::OpinionFor(std::span<const double> x) const {
  return OpinionFromEvidence(Forward(x), prior_, prior_weight_);
}

size_t EvidentialModel::num_encoder_params() const {
  size_t n = 0;
  for (const auto& layer : encoder_) n += layer.num_params();
  return n;
}

std::vector<double> EvidentialModel::EncoderParams() const {
  std::vector<double> flat;
  flat.reserve(num_encoder_params());
  for (const auto& layer : encoder_) {
    flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void EvidentialModel::SetEncoderParams(std::span<const double> flat) {
  if (flat.size() != num_encoder_params()) throw ShapeError("model: encoder parameter count");
  size_t pos = 0;
  for (auto& layer : encoder_) {
    for (auto* block : {&layer.weights, &layer.bias}) {
      std::copy_n(flat.begin() + pos, block->size(), block->begin());
      pos += block->size();
    }
  }
}

std::vector<double> EvidentialModel::HeadParams() const {
  std::vector<double> flat(head_.weights);
  flat.insert(flat.end(), head_.bias.begin(), head_.bias.end());
  return flat;
}

void EvidentialModel::SetHeadParams(std::span<const double> flat) {
  if (flat.size() != head_.num_params()) throw ShapeError("model: head parameter count");
  std::copy_n(flat.begin(), head_.weights.size(), head_.weights.begin());
  std::copy_n(flat.begin() + head_.weights.size(), head_.bias.size(), head_.bias.begin());
}

std::vector<double> EvidentialModel::AllParams() const {
  std::vector<double> flat = EncoderParams();
  const std::vector<double> head = HeadParams();
  flat.insert(flat.end(), head.begin(), head.end());
  return flat;
}

void EvidentialModel::SetAllParams(std::span<const double> flat) {
  const size_t n_enc = num_encoder_params();
  if (flat.size() != n_enc + num_head_params()) throw ShapeError("model: parameter count");
  SetEncoderParams(flat.first(n_enc));
  SetHeadParams(flat.subspan(n_enc));
}

bool EvidentialModel::SameArchitecture(const EvidentialModel& other) const {
  if (encoder_.size() != other.encoder_.size()) return false;
  for (size_t i = 0; i < encoder_.size(); ++i) {
    if (encoder_[i].in != other.encoder_[i].in || encoder_[i].out != other.encoder_[i].out) {
      return false;
    }
  }
  return head_.in == other.head_.in && head_.out == other.head_.out &&
         activations_ == other.activations_;
}

bool EvidentialModel::IsFinite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  for (const auto& layer : encoder_) {
    if (!finite(layer.weights) || !finite(layer.bias)) return false;
  }
  return finite(head_.weights) && finite(head_.bias) && finite(prior_);
}

bool EvidentialModel::operator==(const EvidentialModel& other) const {
  if (!SameArchitecture(other)) return false;
  for (size_t i = 0; i < encoder_.size(); ++i) {
    if (encoder_[i].weights != other.encoder_[i].weights ||
        encoder_[i].bias != other.encoder_[i].bias) {
      return false;
    }
  }
  return head_.weights == other.head_.weights && head_.bias == other.head_.bias &&
         prior_ == other.prior_ && prior_weight_ == other.prior_weight_ &&
         score_clamp_ == other.score_clamp_;
}

// Layout (all integers little-endian, doubles as IEEE-754 bit patterns):
//   magic[8] version:u32 score_clamp:f64 prior_weight:f64
//   num_layers:u64 (encoder layers + head)
//   per layer: in:u64 out:u64 activation:u32 weights:array bias:array
//     (the head's activation field is written as 0 and ignored)
//   prior:array
// where array = count:u64 followed by count f64 values.
void EvidentialModel::Save(std::ostream& out) const {
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  WriteU32(out, kCheckpointVersion);
  WriteF64(out, score_clamp_);
  WriteF64(out, prior_weight_);
  WriteU64(out, encoder_.size() + 1);
  auto write_layer = [&out](const DenseLayer& layer, Activation act) {
    WriteU64(out, layer.in);
    WriteU64(out, layer.out);
    WriteU32(out, static_cast<uint32_t>(act));
    WriteArray(out, layer.weights);
    WriteArray(out, layer.bias);
  };
  for (size_t l = 0; l < encoder_.size(); ++l) write_layer(encoder_[l], activations_[l]);
  write_layer(head_, Activation::kRelu);
  WriteArray(out, prior_);
  if (!out) throw Error("checkpoint: write failed");
}

EvidentialModel EvidentialModel::Load(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) ||
      std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw ParseError("not a model checkpoint", 0, 0);
  }
  const uint32_t version = ReadU32(in);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 0, 0);
  }
  EvidentialModel m;
  m.score_clamp_ = ReadF64(in);
  m.prior_weight_ = ReadF64(in);
  const uint64_t layers = ReadU64(in);
  if (layers == 0 || layers > 1024) throw ParseError("bad layer count in checkpoint", 0, 0);
  for (uint64_t l = 0; l < layers; ++l) {
    const uint64_t in_dim = ReadU64(in);
    const uint64_t out_dim = ReadU64(in);
    if (in_dim == 0 || out_dim == 0 || in_dim * out_dim > (uint64_t{1} << 32)) {
      throw ParseError("bad layer shape in checkpoint", 0, 0);
    }
    const uint32_t act = ReadU32(in);
    if (act > static_cast<uint32_t>(Activation::kGaussian)) {
      throw ParseError("unknown activation in checkpoint", 0, 0);
    }
    DenseLayer layer(in_dim, out_dim);
    layer.weights = ReadArray(in, in_dim * out_dim);
    layer.bias = ReadArray(in, out_dim);
    if (l + 1 < layers) {
      m.encoder_.push_back(std::move(layer));
      m.activations_.push_back(static_cast<Activation>(act));
    } else {
      m.head_ = std::move(layer);
    }
  }
  m.prior_ = ReadArray(in, m.head_.out);
  return m;
}

void EvidentialModel::SaveFile(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open " + path);
  Save(out);
}

EvidentialModel EvidentialModel::LoadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path);
  return Load(in);
}

void TrainConfig::Validate() const {
  std::vector<std::string> problems;
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    problems.push_back("learning_rate: must be >= 0");
  }
  if (!(lambda1 >= 0.0)) problems.push_back("lambda1: must be >= 0");
  if (!(lambda2 >= 0.0)) problems.push_back("lambda2: must be >= 0");
  if (!(lambda3 >= 0.0)) problems.push_back("lambda3: must be >= 0");
  if (!(epsilon > 0.0)) problems.push_back("epsilon: must be > 0");
  if (local_epochs < 0) problems.push_back("local_epochs: must be >= 0");
  if (batch_size <= 0) problems.push_back("batch_size: must be > 0");
  if (!(grad_clip >= 0.0)) problems.push_back("grad_clip: must be >= 0");
  if (!problems.empty()) throw ValidationError(std::move(problems));
}

double LossCe(const DirichletParams& alpha, size_t label) {
  if (label >= alpha.size()) throw DomainError("loss_ce: label out of range");
  return Digamma(alpha.strength()) - Digamma(alpha[label]);
}

double LossInc(const DirichletParams& alpha, size_t label, std::span<const double> prior,
               double prior_weight) {
  if (label >= alpha.size() || prior.size() != alpha.size()) {
    throw ShapeError("loss_inc: label or prior does not match alpha");
  }
  std::vector<double> trimmed(alpha.alpha());
  std::vector<double> reference(alpha.size());
  for (size_t i = 0; i < alpha.size(); ++i) {
    reference[i] = std::max(prior_weight * prior[i], kIncReferenceFloor);
  }
  trimmed[label] = reference[label];
  return KlDirichlet(DirichletParams(std::move(trimmed)), DirichletParams(std::move(reference)));
}

double LossCor(const DirichletParams& alpha, size_t label, std::span<const double> prior,
               double uncertainty) {
  if (label >= alpha.size() || prior.size() != alpha.size()) {
    throw ShapeError("loss_cor: label or prior does not match alpha");
  }
  if (uncertainty == 0.0) return 0.0;
  return -uncertainty * std::log(std::max(alpha[label] - prior[label], kCorFloor));
}

double LossEvi(std::span<const double> evidence, double epsilon) {
  double sum = 0.0;
  for (double e : evidence) {
    const double excess = std::max(0.0, e - epsilon);
    sum += excess * excess;
  }
  return sum;
}

double LossNeg(std::span<const double> prior_raw) {
  double sum = 0.0;
  for (double a : prior_raw) sum += std::max(0.0, -a);
  return sum;
}

SampleGradient LossAndGradient(std::span<const double> scores, size_t label,
                               std::span<const double> prior, double prior_weight,
                               double score_clamp, const TrainConfig& cfg) {
  const size_t k = scores.size();
  if (label >= k || prior.size() != k) throw ShapeError("loss: label or prior size mismatch");
  const double w = prior_weight;

  std::vector<double> e(k), alpha(k);
  std::vector<bool> alpha_floored(k, false);
  double evidence_sum = 0.0;
  for (size_t i = 0; i < k; ++i) {
    e[i] = std::exp(std::min(scores[i], score_clamp));
    evidence_sum += e[i];
    alpha[i] = e[i] + w * prior[i];
    if (!(alpha[i] > kAlphaFloor)) {
      alpha[i] = kAlphaFloor;
      alpha_floored[i] = true;
    }
  }
  double strength = 0.0;
  for (double a : alpha) strength += a;
  const double u = w / (w + evidence_sum);

  SampleGradient out;
  std::vector<double> d_e(k, 0.0);
  std::vector<double> d_alpha(k, 0.0);  // CE + cor contributions through alpha
  std::vector<double> d_prior_direct(k, 0.0);
  std::vector<double> d_prior_neg(k, 0.0);
  LossBreakdown& loss = out.loss;

  if (cfg.terms.ce) {
    loss.ce = Digamma(strength) - Digamma(alpha[label]);
    const double tri_s = Trigamma(strength);
    for (size_t i = 0; i < k; ++i) d_alpha[i] += tri_s;
    d_alpha[label] -= Trigamma(alpha[label]);
  }

  if (cfg.terms.cor) {
    const double raw = alpha[label] - prior[label];
    const bool floored = !(raw > kCorFloor);
    const double arg = floored ? kCorFloor : raw;
    const double log_arg = std::log(arg);
    loss.cor = -u * log_arg;
    // du/de_i = -u^2 / W for every i.
    for (size_t i = 0; i < k; ++i) d_e[i] += u * u / w * log_arg;
    if (!floored) {
      d_e[label] += -u / arg;
      // d(alpha_gt - a_gt)/d a_gt = W - 1.
      d_prior_direct[label] += -u * (w - 1.0) / arg;
    }
  }

  if (cfg.terms.inc) {
    std::vector<double> trimmed(alpha);
    std::vector<double> reference(k);
    for (size_t i = 0; i < k; ++i) reference[i] = std::max(w * prior[i], kIncReferenceFloor);
    trimmed[label] = reference[label];
    double trimmed_strength = 0.0;
    double excess_sum = 0.0;
    for (size_t i = 0; i < k; ++i) {
      trimmed_strength += trimmed[i];
      excess_sum += trimmed[i] - reference[i];
    }
    loss.inc = KlDirichlet(DirichletParams(trimmed), DirichletParams(reference));
    const double tri_s = Trigamma(trimmed_strength);
    // Only evidence receives this gradient; the prior is held fixed.
    for (size_t i = 0; i < k; ++i) {
      if (i == label || alpha_floored[i]) continue;
      d_e[i] += cfg.lambda1 * ((trimmed[i] - reference[i]) * Trigamma(trimmed[i]) -
                               tri_s * excess_sum);
    }
  }

  if (cfg.terms.evi) {
    loss.evi = LossEvi(e, cfg.epsilon);
    for (size_t i = 0; i < k; ++i) {
      d_e[i] += cfg.lambda2 * 2.0 * std::max(0.0, e[i] - cfg.epsilon);
    }
  }

  if (cfg.terms.neg) {
    loss.neg = LossNeg(prior);
    for (size_t i = 0; i < k; ++i) {
      if (prior[i] < 0.0) d_prior_neg[i] = -cfg.lambda3;
    }
  }

  loss.total = loss.ce + loss.cor + cfg.lambda1 * loss.inc + cfg.lambda2 * loss.evi +
               cfg.lambda3 * loss.neg;

  out.d_scores.resize(k);
  out.d_prior.assign(k, 0.0);
  for (size_t i = 0; i < k; ++i) {
    if (!alpha_floored[i]) {
      d_e[i] += d_alpha[i];
      d_prior_direct[i] += w * d_alpha[i];
    }
    // de/dz = e. Past the clamp this is a straight-through estimate so the
    // evidence penalty can still pull a saturated score back down.
    out.d_scores[i] = d_e[i] * e[i];
  }
  switch (cfg.prior_update) {
    case PriorUpdate::kAllButInc:
      for (size_t i = 0; i < k; ++i) out.d_prior[i] = d_prior_direct[i] + d_prior_neg[i];
      break;
    case PriorUpdate::kNegOnly:
      out.d_prior = d_prior_neg;
      break;
    case PriorUpdate::kFrozen:
      break;
  }
  return out;
}

BatchGradient ComputeBatchGradient(const EvidentialModel& model, const LabeledDataset& data,
                                   std::span<const size_t> indices, const TrainConfig& cfg) {
  const auto& encoder = model.encoder();
  const auto& head = model.head();
  const size_t n_layers = encoder.size();
  const std::vector<Activation>& acts = model.activations();

  BatchGradient out;
  out.d_params.assign(model.num_encoder_params() + model.num_head_params(), 0.0);
  out.d_prior.assign(model.num_classes(), 0.0);

  // Offsets of each layer's weight block in the flat gradient.
  std::vector<size_t> offsets(n_layers + 1);
  size_t pos = 0;
  for (size_t l = 0; l < n_layers; ++l) {
    offsets[l] = pos;
    pos += encoder[l].num_params();
  }
  offsets[n_layers] = pos;

  // activations[0] is the input, activations[l+1] the output of layer l.
  std::vector<std::vector<double>> pre(n_layers), post(n_layers + 1);
  std::vector<double> scores(head.out), delta, back;
  const bool need_encoder_grad = cfg.train_encoder;

  for (size_t idx : indices) {
    const auto x = data.row(idx);
    post[0].assign(x.begin(), x.end());
    for (size_t l = 0; l < n_layers; ++l) {
      pre[l].resize(encoder[l].out);
      Affine(encoder[l], post[l], pre[l]);
      post[l + 1].resize(encoder[l].out);
      for (size_t o = 0; o < encoder[l].out; ++o) post[l + 1][o] = Activate(acts[l], pre[l][o]);
    }
    Affine(head, post[n_layers], scores);

    SampleGradient g = LossAndGradient(scores, static_cast<size_t>(data.labels[idx]),
                                       model.prior(), model.prior_weight(),
                                       model.score_clamp(), cfg);
    out.loss.total += g.loss.total;
    out.loss.ce += g.loss.ce;
    out.loss.cor += g.loss.cor;
    out.loss.inc += g.loss.inc;
    out.loss.evi += g.loss.evi;
    out.loss.neg += g.loss.neg;
    for (size_t i = 0; i < g.d_prior.size(); ++i) out.d_prior[i] += g.d_prior[i];

    // Head.
    const auto& h = post[n_layers];
    double* gw = &out.d_params[offsets[n_layers]];
    double* gb = gw + head.weights.size();
    for (size_t o = 0; o < head.out; ++o) {
      const double d = g.d_scores[o];
      for (size_t i = 0; i < head.in; ++i) gw[o * head.in + i] += d * h[i];
      gb[o] += d;
    }
    if (!need_encoder_grad || n_layers == 0) continue;
    back.assign(head.in, 0.0);
    for (size_t o = 0; o < head.out; ++o) {
      const double d = g.d_scores[o];
      const double* w = &head.weights[o * head.in];
      for (size_t i = 0; i < head.in; ++i) back[i] += w[i] * d;
    }
    for (size_t l = n_layers; l-- > 0;) {
      const DenseLayer& layer = encoder[l];
      delta.resize(layer.out);
      for (size_t o = 0; o < layer.out; ++o) {
        delta[o] = back[o] * ActivateGrad(acts[l], pre[l][o], post[l + 1][o]);
      }
      double* lw = &out.d_params[offsets[l]];
      double* lb = lw + layer.weights.size();
      const auto& in = post[l];
      for (size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        for (size_t i = 0; i < layer.in; ++i) lw[o * layer.in + i] += d * in[i];
        lb[o] += d;
      }
      if (l == 0) break;
      back.assign(layer.in, 0.0);
      for (size_t o = 0; o < layer.out; ++o) {
        const double d = delta[o];
        const double* w = &layer.weights[o * layer.in];
        for (size_t i = 0; i < layer.in; ++i) back[i] += w[i] * d;
      }
    }
  }

  const double inv = indices.empty() ? 0.0 : 1.0 / static_cast<double>(indices.size());
  for (double& v : out.d_params) v *= inv;
  for (double& v : out.d_prior) v *= inv;
  out.loss.total *= inv;
  out.loss.ce *= inv;
  out.loss.cor *= inv;
  out.loss.inc *= inv;
  out.loss.evi *= inv;
  out.loss.neg *= inv;
  return out;
}

std::vector<double> ProjectToSimplex(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : out) {
    if (!(x > 0.0)) x = 0.0;
    sum += x;
  }
  if (!(sum > 0.0)) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(out.size()));
    return out;
  }
  if (sum != 1.0) {
    for (double& x : out) x /= sum;
  }
  return out;
}

std::vector<double> FrequencyPrior(const LabeledDataset& data) {
  const std::vector<size_t> counts = data.ClassCounts();
  const double denom = static_cast<double>(data.size() + counts.size());
  std::vector<double> prior(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    prior[i] = static_cast<double>(counts[i] + 1) / denom;
  }
  return ProjectToSimplex(prior);
}

TrainResult TrainLocal(EvidentialModel model, const LabeledDataset& data,
                       const TrainConfig& cfg, RngStream& rng) {
  cfg.Validate();
  if (data.empty()) throw EmptyInputError("train_local: empty dataset");
  if (data.dim != model.input_dim()) throw ShapeError("train_local: feature dimension mismatch");
  if (data.num_classes != model.num_classes()) {
    throw ShapeError("train_local: class count mismatch");
  }
  TrainResult result;
  const size_t n = data.size();
  const size_t batch = static_cast<size_t>(cfg.batch_size);
  const size_t n_enc = model.num_encoder_params();

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::vector<size_t> order = rng.Permutation(n);
    LossBreakdown epoch_loss;
    int batch_index = 0;
    for (size_t start = 0; start < n; start += batch, ++batch_index) {
      const size_t stop = std::min(n, start + batch);
      std::span<const size_t> idx(order.data() + start, stop - start);
      BatchGradient g = ComputeBatchGradient(model, data, idx, cfg);
      if (!std::isfinite(g.loss.total)) {
        throw NonFiniteLossError("train_local: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(batch_index),
                                 epoch, batch_index);
      }
      const double weight = static_cast<double>(stop - start) / static_cast<double>(n);
      epoch_loss.total += weight * g.loss.total;
      epoch_loss.ce += weight * g.loss.ce;
      epoch_loss.cor += weight * g.loss.cor;
      epoch_loss.inc += weight * g.loss.inc;
      epoch_loss.evi += weight * g.loss.evi;
      epoch_loss.neg += weight * g.loss.neg;

      if (!cfg.train_encoder) std::fill_n(g.d_params.begin(), n_enc, 0.0);
      if (!cfg.train_head) std::fill(g.d_params.begin() + n_enc, g.d_params.end(), 0.0);
      double scale = cfg.learning_rate;
      if (cfg.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (double v : g.d_params) norm2 += v * v;
        for (double v : g.d_prior) norm2 += v * v;
        const double norm = std::sqrt(norm2);
        if (norm > cfg.grad_clip) scale *= cfg.grad_clip / norm;
      }
      if (scale == 0.0) continue;

      size_t p = 0;
      ForEachBlock(model.mutable_encoder(), model.mutable_head(), [&](std::vector<double>& block) {
        for (double& v : block) v -= scale * g.d_params[p++];
      });
      // Step along the simplex: the common-mode part of the prior gradient
      // only rescales the prior, and clip-then-renormalize would turn it into
      // a drift towards a vertex.
      bool prior_moved = false;
      std::vector<double> prior = model.prior();
      double mean_grad = 0.0;
      for (double v : g.d_prior) mean_grad += v;
      mean_grad /= static_cast<double>(prior.size());
      for (size_t i = 0; i < prior.size(); ++i) {
        const double step = g.d_prior[i] - mean_grad;
        if (step != 0.0) {
          prior[i] -= scale * step;
          prior_moved = true;
        }
      }
      if (prior_moved) model.set_prior(ProjectToSimplex(prior));
    }
    // Recompute the total from its parts so the logged identity is exact.
    epoch_loss.total = epoch_loss.ce + epoch_loss.cor + cfg.lambda1 * epoch_loss.inc +
                       cfg.lambda2 * epoch_loss.evi + cfg.lambda3 * epoch_loss.neg;
    result.history.push_back(epoch_loss);
  }
  result.model = std::move(model);
  return result;
}

double Accuracy(const EvidentialModel& model, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  size_t correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    const std::vector<double> p = ExpectProb(model.OpinionFor(data.row(i)));
    const size_t pred = static_cast<size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (pred == static_cast<size_t>(data.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace tpfl
