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

#include "dtformer/ad/graph.hpp"
#include "dtformer/volume.hpp"

#include <array>
#include <cstddef>
#include <vector>

namespace dtf::nn {

using Origin = std::array<std::size_t, 3>;

/// The L^3 voxels of a cubic patch as an n x channels matrix. Row r holds the
/// voxel at offset (r / L^2, (r / L) % L, r % L) from the origin.
struct PatchSequence {
  ad::Matrix features;
  Origin origin{};
};

/// Start offsets along one axis: 0, stride, 2*stride, ... and a final
/// dim - L so the last voxels are always covered. Throws Patching when
/// dim < L.
std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t patch, std::size_t stride);

/// All patch origins in row-major (x, y, z) order.
std::vector<Origin> patch_origins(const Dims& dims, std::size_t patch, std::size_t stride);

PatchSequence extract_patch(const Volume4D& volume, const Origin& origin, std::size_t patch);

std::vector<PatchSequence> extract_patches(const Volume4D& volume, std::size_t patch, std::size_t stride);

/// Writes a patch back into `volume` (which must already have the right
/// channel count). Later writes overwrite earlier ones.
void insert_patch(Volume4D& volume, const PatchSequence& seq, std::size_t patch);

/// Sums patch values into `sum` and increments `count` for every voxel touched.
void accumulate_patch(Volume4D& sum, std::vector<std::uint32_t>& count, const PatchSequence& seq,
                      std::size_t patch);

} // namespace dtf::nn
