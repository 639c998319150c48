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

#include "dtformer/nn/patches.hpp"

#include "dtformer/errors.hpp"

namespace dtf::nn {
namespace {

void check_fits(const Volume4D& volume, const Origin& o, std::size_t patch, const char* op)
{
  for (int a = 0; a < 3; ++a)
    if (o[a] + patch > volume.dims()[a])
      throw Error(ErrorCode::Patching, std::string(op) + ": patch at offset " + std::to_string(o[a]) + " on axis " +
                                           std::to_string(a) + " leaves the volume");
}

} // namespace

std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t patch, std::size_t stride)
{
  if (patch == 0 || stride == 0) throw Error(ErrorCode::InvalidArgument, "patch side and stride must be positive");
  if (dim < patch)
    throw Error(ErrorCode::Patching, "volume extent " + std::to_string(dim) + " is smaller than the patch side " +
                                         std::to_string(patch) + "; use a larger volume or a smaller --patch");
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= dim; o += stride) out.push_back(o);
  if (out.back() + patch < dim) out.push_back(dim - patch);
  return out;
}

std::vector<Origin> patch_origins(const Dims& dims, std::size_t patch, std::size_t stride)
{
  const auto ox = axis_origins(dims[0], patch, stride);
  const auto oy = axis_origins(dims[1], patch, stride);
  const auto oz = axis_origins(dims[2], patch, stride);
  std::vector<Origin> out;
  out.reserve(ox.size() * oy.size() * oz.size());
  for (auto x : ox)
    for (auto y : oy)
      for (auto z : oz) out.push_back({x, y, z});
  return out;
}

PatchSequence extract_patch(const Volume4D& volume, const Origin& origin, std::size_t patch)
{
  check_fits(volume, origin, patch, "extract_patch");
  const auto c = static_cast<ad::Index>(volume.channels());
  PatchSequence seq{ad::Matrix(static_cast<ad::Index>(patch * patch * patch), c), origin};
  ad::Index r = 0;
  for (std::size_t i = 0; i < patch; ++i)
    for (std::size_t j = 0; j < patch; ++j)
      for (std::size_t k = 0; k < patch; ++k, ++r) {
        const auto src = volume.voxel(origin[0] + i, origin[1] + j, origin[2] + k);
        for (ad::Index ch = 0; ch < c; ++ch) seq.features(r, ch) = src[static_cast<std::size_t>(ch)];
      }
  return seq;
}

std::vector<PatchSequence> extract_patches(const Volume4D& volume, std::size_t patch, std::size_t stride)
{
  std::vector<PatchSequence> out;
  for (const auto& o : patch_origins(volume.dims(), patch, stride)) out.push_back(extract_patch(volume, o, patch));
  return out;
}

void insert_patch(Volume4D& volume, const PatchSequence& seq, std::size_t patch)
{
  check_fits(volume, seq.origin, patch, "insert_patch");
  if (seq.features.cols() != static_cast<ad::Index>(volume.channels()) ||
      seq.features.rows() != static_cast<ad::Index>(patch * patch * patch))
    throw ShapeError("insert_patch", "patch features do not match the volume");
  ad::Index r = 0;
  for (std::size_t i = 0; i < patch; ++i)
    for (std::size_t j = 0; j < patch; ++j)
      for (std::size_t k = 0; k < patch; ++k, ++r) {
        auto dst = volume.voxel(seq.origin[0] + i, seq.origin[1] + j, seq.origin[2] + k);
        for (std::size_t ch = 0; ch < dst.size(); ++ch) dst[ch] = seq.features(r, static_cast<ad::Index>(ch));
      }
}

void accumulate_patch(Volume4D& sum, std::vector<std::uint32_t>& count, const PatchSequence& seq, std::size_t patch)
{
  check_fits(sum, seq.origin, patch, "accumulate_patch");
  ad::Index r = 0;
  for (std::size_t i = 0; i < patch; ++i)
    for (std::size_t j = 0; j < patch; ++j)
      for (std::size_t k = 0; k < patch; ++k, ++r) {
        const auto v = sum.voxel_index(seq.origin[0] + i, seq.origin[1] + j, seq.origin[2] + k);
        auto dst = sum.voxel(v);
        for (std::size_t ch = 0; ch < dst.size(); ++ch) dst[ch] += seq.features(r, static_cast<ad::Index>(ch));
        ++count[v];
      }
}

} // namespace dtf::nn
