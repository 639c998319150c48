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
#include "dtformer/nn/model.hpp"
#include "dtformer/phantom.hpp"
#include "dtformer/scheme.hpp"

#include <cstdint>
#include <vector>

namespace dtf::train {

/// One training pair. `signals` are normalized and masked; `target` is the
/// reference tensor patch in scaled units. `s_tensors` is filled with frozen
/// Model S outputs before second-stage training.
struct Sample {
  ad::Matrix signals;
  ad::Matrix target;
  ad::Matrix s_tensors;
  nn::Origin origin{};
  /// Source volume; the validation split never separates a group.
  std::size_t group = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t patch = 0;
  std::size_t signal_channels = 0;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t group_count() const;
};

/// Cuts `normalized` and `tensors` (mm^2/s) into patches and appends them.
/// Patches without any foreground voxel are skipped when a mask is given.
/// stride 0 means non-overlapping (stride = patch side).
void add_volume(Dataset& ds, const Volume4D& normalized, const Volume4D& tensors, const Volume4D* mask,
                std::size_t group, const nn::ModelConfig& cfg, std::size_t stride = 0);

enum class LabelMode { GroundTruth, DenseFit };

LabelMode parse_label_mode(std::string_view name);
const char* label_mode_name(LabelMode m) noexcept;

struct SyntheticDatasetSpec {
  std::size_t phantoms = 8;
  Dims dims = {24, 24, 24};
  std::uint64_t seed = 1;
  RegionModel model = RegionModel::CurvedTract;
  double length_scale = 8.0;
  /// Phantom i is corrupted at snr_db[i % size]; +inf adds no noise.
  std::vector<double> snr_db = {20.0};
  LabelMode labels = LabelMode::GroundTruth;
  /// Direction count of the dense scheme used for DenseFit labels.
  std::size_t dense_directions = 30;
  std::size_t stride = 0;

  void validate() const;
};

/// Phantom i uses seed derived from (seed, i). Deterministic.
Dataset synthetic_dataset(const SyntheticDatasetSpec& spec, const GradientScheme& scheme,
                          const nn::ModelConfig& cfg);

/// Phantom seed for index i of a synthetic dataset.
std::uint64_t phantom_seed(std::uint64_t seed, std::size_t index);

} // namespace dtf::train
