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

#include "dtformer/volume.hpp"

#include "dtformer/errors.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dtf {

Volume4D::Volume4D(Dims dims, std::size_t channels, double fill) : dims_(dims), channels_(channels)
{
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || channels == 0)
    throw Error(ErrorCode::InvalidArgument, "volume: dimensions and channel count must be positive");
  data_.assign(dims[0] * dims[1] * dims[2] * channels, fill);
}

std::string volume_base(const std::string& path)
{
  for (const char* ext : {".raw", ".json"}) {
    const std::size_t n = std::strlen(ext);
    if (path.size() > n && path.compare(path.size() - n, n, ext) == 0) return path.substr(0, path.size() - n);
  }
  return path;
}

void write_file_atomic(const std::string& path, std::span<const char> bytes)
{
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

void write_file_atomic(const std::string& path, const std::string& text)
{
  write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

namespace {

std::uint32_t to_little(std::uint32_t v) noexcept
{
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

} // namespace

void save_volume(const Volume4D& volume, const std::string& base_path, const VolumeMeta& meta)
{
  const std::string base = volume_base(base_path);
  const auto& src = volume.data();
  std::vector<char> bytes(src.size() * 4);
  for (std::size_t i = 0; i < src.size(); ++i) {
    const float f = static_cast<float>(src[i]);
    if (!std::isfinite(f)) throw Error(ErrorCode::Numeric, "volume: non-finite value at index " + std::to_string(i));
    const std::uint32_t u = to_little(std::bit_cast<std::uint32_t>(f));
    std::memcpy(bytes.data() + 4 * i, &u, 4);
  }

  nlohmann::ordered_json j;
  const auto& d = volume.dims();
  j["dims"] = {d[0], d[1], d[2]};
  j["channels"] = volume.channels();
  j["voxel_size"] = {volume.voxel_size[0], volume.voxel_size[1], volume.voxel_size[2]};
  j["dtype"] = "float32";
  j["byte_order"] = "little";
  j["seed"] = meta.seed;
  j["description"] = meta.description;
  j["data_file"] = std::filesystem::path(base + ".raw").filename().string();

  write_file_atomic(base + ".raw", std::span<const char>(bytes));
  write_file_atomic(base + ".json", j.dump(2) + "\n");
}

Volume4D load_volume(const std::string& base_path, VolumeMeta* meta)
{
  const std::string base = volume_base(base_path);
  std::ifstream js(base + ".json");
  if (!js) throw Error(ErrorCode::Io, "cannot open " + base + ".json");
  nlohmann::json j;
  try {
    js >> j;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::Format, base + ".json: " + e.what());
  }

  Volume4D v;
  try {
    if (j.at("dtype").get<std::string>() != "float32")
      throw Error(ErrorCode::Format, base + ".json: unsupported dtype");
    const auto dims = j.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw Error(ErrorCode::Format, base + ".json: dims must have 3 entries");
    v = Volume4D({dims[0], dims[1], dims[2]}, j.at("channels").get<std::size_t>());
    if (j.contains("voxel_size")) {
      const auto vs = j.at("voxel_size").get<std::vector<double>>();
      if (vs.size() == 3) v.voxel_size = {vs[0], vs[1], vs[2]};
    }
    if (meta) {
      meta->seed = j.value("seed", std::uint64_t{0});
      meta->description = j.value("description", std::string{});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, base + ".json: " + e.what());
  }

  std::ifstream raw(base + ".raw", std::ios::binary);
  if (!raw) throw Error(ErrorCode::Io, "cannot open " + base + ".raw");
  std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  auto& dst = v.data();
  if (bytes.size() != dst.size() * 4)
    throw Error(ErrorCode::Format, base + ".raw: expected " + std::to_string(dst.size() * 4) + " bytes, found " +
                                       std::to_string(bytes.size()));
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * i, 4);
    dst[i] = static_cast<double>(std::bit_cast<float>(to_little(u)));
  }
  return v;
}

} // namespace dtf
