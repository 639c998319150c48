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

#include <cstddef>
#include <functional>

namespace dtf {

/// Worker count used by voxel- and patch-level loops. 0 selects all cores.
void set_thread_count(std::size_t n) noexcept;
std::size_t thread_count() noexcept;

/// Run body(i) for i in [0, n), split into contiguous blocks across workers.
/// Callers write results to per-index slots so output never depends on the
/// worker count. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Like parallel_for but hands each worker its own index so per-worker scratch
/// state can be reused: body(worker, i).
void parallel_for_workers(std::size_t n, std::size_t workers,
                          const std::function<void(std::size_t, std::size_t)>& body);

} // namespace dtf
