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

#include "dtformer/random.hpp"

#include <doctest.h>

#include <cmath>

using dtf::Philox4x32;

TEST_CASE("philox4x32-10 known-answer vectors")
{
  // Reference outputs published with Random123 (kat_vectors).
  CHECK(Philox4x32::generate({0, 0, 0, 0}, {0, 0}) == Philox4x32::Counter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox4x32::generate({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        Philox4x32::Counter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox4x32::generate({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        Philox4x32::Counter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("normal draws have unit variance and are reproducible")
{
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n / 2; ++i) {
    const auto z = dtf::normal_pair(42, 7, static_cast<std::uint64_t>(i));
    sum += z[0] + z[1];
    sq += z[0] * z[0] + z[1] * z[1];
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.01);
  CHECK(dtf::normal_pair(42, 7, 12345) == dtf::normal_pair(42, 7, 12345));
  CHECK(dtf::normal_pair(42, 7, 12345) != dtf::normal_pair(43, 7, 12345));
}

TEST_CASE("uniforms stay inside the open unit interval")
{
  dtf::RandomStream rng(1, 2);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}
