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

#include "tpfl/rng.h"

#include <cmath>

#include "tpfl/errors.h"

namespace tpfl {
namespace {

uint64_t Rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(uint64_t seed, uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
  uint64_t key = Mix64(seed) ^ Mix64(stream_id ^ 0x6a09e667f3bcc909ULL);
  for (auto& word : s_) {
    key += 0x9e3779b97f4a7c15ULL;
    word = Mix64(key);
  }
  // xoshiro must not start from the all-zero state.
  if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
}

RngStream RngStream::Derive(uint64_t sub_id) const {
  return RngStream(seed_, Mix64(stream_id_ * 0x9e3779b97f4a7c15ULL + Mix64(sub_id)));
}

uint64_t RngStream::NextU64() {
  const uint64_t result = Rotl(s_[1] * 5, 7) * 9;
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = Rotl(s_[3], 45);
  return result;
}

double RngStream::Uniform() {
  return static_cast<double>(NextU64() >> 11) * 0x1.0p-53;
}

double RngStream::UniformOpen() {
  return (static_cast<double>(NextU64() >> 12) + 0.5) * 0x1.0p-52;
}

uint64_t RngStream::UniformIndex(uint64_t n) {
  if (n == 0) throw DomainError("UniformIndex: n must be positive");
  // Lemire's nearly-divisionless rejection.
  __uint128_t m = static_cast<__uint128_t>(NextU64()) * n;
  uint64_t low = static_cast<uint64_t>(m);
  if (low < n) {
    const uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<__uint128_t>(NextU64()) * n;
      low = static_cast<uint64_t>(m);
    }
  }
  return static_cast<uint64_t>(m >> 64);
}

double RngStream::Normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  // Marsaglia polar method.
  double u, v, s;
  do {
    u = 2.0 * Uniform() - 1.0;
    v = 2.0 * Uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * f;
  has_spare_normal_ = true;
  return u * f;
}

double RngStream::LogGamma(double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) {
    throw DomainError("Gamma: shape must be positive and finite");
  }
  if (shape < 1.0) {
    // X ~ Gamma(shape + 1), U^(1/shape) boost; kept in log space.
    return LogGamma(shape + 1.0) + std::log(UniformOpen()) / shape;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x, v;
    do {
      x = Normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = UniformOpen();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return std::log(d * v);
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
      return std::log(d * v);
    }
  }
}

double RngStream::Gamma(double shape) { return std::exp(LogGamma(shape)); }

std::vector<size_t> RngStream::Permutation(size_t n) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Shuffle(idx);
  return idx;
}

}  // namespace tpfl
