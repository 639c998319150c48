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

#include <json.hpp>

#include <filesystem>

namespace dtf::ad {

/// Binary checkpoint: an 8-byte magic, a little-endian u64 manifest length,
/// a JSON manifest (parameter names, shapes, offsets plus free-form
/// metadata), then all parameter values as little-endian float64.
/// Written atomically.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& metadata);

/// Reads the manifest and metadata only.
nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path);

/// Loads values into `params`. Every parameter in `params` must be present
/// with a matching shape; extra entries in the file are ignored unless
/// `strict` is set. Returns the stored metadata.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParameterSet& params, bool strict = true);

} // namespace dtf::ad
