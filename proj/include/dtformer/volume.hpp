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
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dtf {

using Dims = std::array<std::size_t, 3>;

/// A 3-D grid with `channels` values per voxel. Storage is row-major over
/// (x, y, z, channel), channel fastest.
class Volume4D {
public:
  Volume4D() = default;
  Volume4D(Dims dims, std::size_t channels, double fill = 0.0);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t voxel_count() const noexcept { return dims_[0] * dims_[1] * dims_[2]; }
  bool empty() const noexcept { return data_.empty(); }

  std::array<double, 3> voxel_size = {1.0, 1.0, 1.0};

  std::size_t voxel_index(std::size_t x, std::size_t y, std::size_t z) const noexcept
  {
    return (x * dims_[1] + y) * dims_[2] + z;
  }
  std::array<std::size_t, 3> voxel_coords(std::size_t v) const noexcept
  {
    return {v / (dims_[1] * dims_[2]), (v / dims_[2]) % dims_[1], v % dims_[2]};
  }

  std::span<double> voxel(std::size_t v) noexcept { return {data_.data() + v * channels_, channels_}; }
  std::span<const double> voxel(std::size_t v) const noexcept { return {data_.data() + v * channels_, channels_}; }
  std::span<double> voxel(std::size_t x, std::size_t y, std::size_t z) noexcept { return voxel(voxel_index(x, y, z)); }
  std::span<const double> voxel(std::size_t x, std::size_t y, std::size_t z) const noexcept
  {
    return voxel(voxel_index(x, y, z));
  }

  double& at(std::size_t v, std::size_t c) noexcept { return data_[v * channels_ + c]; }
  double at(std::size_t v, std::size_t c) const noexcept { return data_[v * channels_ + c]; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool same_grid(const Volume4D& other) const noexcept { return dims_ == other.dims_; }

private:
  Dims dims_ = {0, 0, 0};
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// Sidecar metadata stored next to the raw payload.
struct VolumeMeta {
  std::uint64_t seed = 0;
  std::string description;
};

/// Writes `<base>.raw` (little-endian float32) and `<base>.json`. A trailing
/// `.raw` or `.json` on `base` is ignored. Both files are written atomically.
void save_volume(const Volume4D& volume, const std::string& base, const VolumeMeta& meta = {});
Volume4D load_volume(const std::string& base, VolumeMeta* meta = nullptr);

/// Strip a `.raw`/`.json` suffix.
std::string volume_base(const std::string& path);

/// Write `bytes` to `path` through a temporary file and rename.
void write_file_atomic(const std::string& path, std::span<const char> bytes);
void write_file_atomic(const std::string& path, const std::string& text);

} // namespace dtf
