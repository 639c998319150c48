/*
 * Copyright (C) 2026 The dtformer authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cstdint>

namespace dtf {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
/// Every draw is a pure function of (key, counter), so voxels and patches can
/// pull independent streams in any order and on any thread.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter counter, Key key) noexcept;
};

/// Named sub-streams so different consumers of one seed never overlap.
enum class Stream : std::uint64_t {
  PhantomField = 1,
  PhantomGeometry = 2,
  RicianNoise = 3,
  HeInit = 4,
  Shuffle = 5,
  DatasetSplit = 6,
  Test = 99,
};

/// Two uniforms in the open interval (0, 1) for draw `index` of `stream`.
std::array<double, 2> uniform_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept;

/// Two independent standard normals (Box-Muller) for draw `index` of `stream`.
std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept;

inline std::uint64_t stream_id(Stream s, std::uint64_t sub = 0) noexcept
{
  return (static_cast<std::uint64_t>(s) << 40) ^ sub;
}

/// Sequential convenience wrapper over the stateless draws.
class RandomStream {
public:
  RandomStream(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(seed), stream_(stream) {}

  double uniform() noexcept;
  double normal() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
  std::array<double, 2> cache_{};
  int cached_uniform_ = 0;
  int cached_normal_ = 0;
  std::array<double, 2> ncache_{};
};

} // namespace dtf
