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

#ifndef TPFL_RNG_H_
#define TPFL_RNG_H_

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace tpfl {

// Deterministic, splittable random stream. Two streams built from the same
// (seed, stream_id) produce the same sequence on every platform; streams with
// different ids are decorrelated by a SplitMix64 key schedule. The core
// generator is xoshiro256**.
//
// A stream is not thread-safe. Hand each concurrent task its own stream,
// typically through Derive().
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id);

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }

  // Child stream keyed on (seed, stream_id, sub_id). Does not advance *this.
  RngStream Derive(uint64_t sub_id) const;

  uint64_t NextU64();
  // Uniform on [0, 1) with 53 random bits.
  double Uniform();
  // Uniform on (0, 1).
  double UniformOpen();
  // Unbiased integer in [0, n). n must be > 0.
  uint64_t UniformIndex(uint64_t n);
  double Normal();
  double Normal(double mean, double stddev) { return mean + stddev * Normal(); }
  // Gamma(shape, 1) variate, Marsaglia-Tsang with the shape < 1 boost.
  double Gamma(double shape);
  // log of a Gamma(shape, 1) variate; stays finite for tiny shapes where the
  // variate itself underflows.
  double LogGamma(double shape);

  template <typename T>
  void Shuffle(std::span<T> items) {
    for (size_t i = items.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(UniformIndex(i));
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void Shuffle(std::vector<T>& items) {
    Shuffle(std::span<T>(items));
  }

  // Random permutation of 0..n-1.
  std::vector<size_t> Permutation(size_t n);

 private:
  uint64_t seed_;
  uint64_t stream_id_;
  uint64_t s_[4];
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// SplitMix64 finalizer; exposed for key derivation.
uint64_t Mix64(uint64_t x);

// Stream id spelled as a short tag: up to 8 ASCII bytes packed big-endian,
// so StreamKey("part") == 0x70617274.
constexpr uint64_t StreamKey(std::string_view tag) {
  uint64_t key = 0;
  for (size_t i = 0; i < tag.size() && i < 8; ++i) {
    key = (key << 8) | static_cast<unsigned char>(tag[i]);
  }
  return key;
}

}  // namespace tpfl

#endif  // TPFL_RNG_H_
