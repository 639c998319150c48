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

#include "dtformer/ad/checkpoint.hpp"

#include "dtformer/volume.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dtf::ad {
namespace {

constexpr char kMagic[8] = {'D', 'T', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

std::uint64_t to_little(std::uint64_t v) noexcept
{
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

void append_u64(std::string& out, std::uint64_t v)
{
  v = to_little(v);
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

std::uint64_t read_u64(const char* p)
{
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return to_little(v);
}

struct Parsed {
  nlohmann::json manifest;
  std::string payload;
};

Parsed parse(const std::filesystem::path& path, bool need_payload)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingCheckpoint, "cannot open checkpoint " + path.string());
  char head[16];
  if (!in.read(head, 16) || std::memcmp(head, kMagic, 8) != 0)
    throw Error(ErrorCode::Format, path.string() + " is not a dtformer checkpoint");
  const std::uint64_t len = read_u64(head + 8);
  if (len > (1ull << 30)) throw Error(ErrorCode::Format, "checkpoint manifest too large");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw Error(ErrorCode::Format, "truncated checkpoint manifest in " + path.string());
  Parsed p;
  try {
    p.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, "bad checkpoint manifest: " + std::string(e.what()));
  }
  if (p.manifest.value("format", "") != "dtformer-checkpoint" || p.manifest.value("version", 0) != kFormatVersion)
    throw Error(ErrorCode::Format, "unsupported checkpoint format in " + path.string());
  if (need_payload) p.payload.assign(std::istreambuf_iterator<char>(in), {});
  return p;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const nlohmann::json& metadata)
{
  nlohmann::json manifest;
  manifest["format"] = "dtformer-checkpoint";
  manifest["version"] = kFormatVersion;
  manifest["params"] = nlohmann::json::array();
  std::string payload;
  payload.reserve(params.scalar_count() * 8);
  std::uint64_t offset = 0;
  for (const auto& p : params) {
    manifest["params"].push_back({{"name", p.name},
                                  {"shape", {p.value.rows(), p.value.cols()}},
                                  {"offset", offset},
                                  {"trainable", p.trainable}});
    for (Index i = 0; i < p.value.size(); ++i) append_u64(payload, std::bit_cast<std::uint64_t>(p.value.data()[i]));
    offset += static_cast<std::uint64_t>(p.value.size());
  }
  manifest["metadata"] = metadata;
  const std::string text = manifest.dump();

  std::string out(kMagic, 8);
  append_u64(out, text.size());
  out += text;
  out += payload;
  write_file_atomic(path.string(), out);
}

nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path)
{
  return parse(path, false).manifest.value("metadata", nlohmann::json::object());
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterSet& params, bool strict)
{
  const Parsed p = parse(path, true);
  const std::uint64_t total = p.payload.size() / 8;
  std::size_t matched = 0;
  for (auto& param : params) {
    const nlohmann::json* entry = nullptr;
    for (const auto& e : p.manifest["params"])
      if (e["name"] == param.name) entry = &e;
    if (!entry) throw Error(ErrorCode::Format, "checkpoint lacks parameter '" + param.name + "'");
    const Index r = (*entry)["shape"][0], c = (*entry)["shape"][1];
    if (r != param.value.rows() || c != param.value.cols())
      throw ShapeError("load_checkpoint", "parameter '" + param.name + "' stored as " + Shape{r, c}.str() +
                                              ", model expects " + param.shape().str());
    const std::uint64_t off = (*entry)["offset"];
    if (off + static_cast<std::uint64_t>(r * c) > total)
      throw Error(ErrorCode::Format, "checkpoint payload truncated at '" + param.name + "'");
    for (Index i = 0; i < r * c; ++i)
      param.value.data()[i] = std::bit_cast<double>(read_u64(p.payload.data() + 8 * (off + static_cast<std::uint64_t>(i))));
    ++matched;
  }
  if (strict && matched != p.manifest["params"].size())
    throw Error(ErrorCode::Format, "checkpoint holds parameters the model does not define");
  return p.manifest.value("metadata", nlohmann::json::object());
}

} // namespace dtf::ad
