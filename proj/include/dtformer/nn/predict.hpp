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

#include "dtformer/nn/model.hpp"
#include "dtformer/scheme.hpp"
#include "dtformer/volume.hpp"

namespace dtf::nn {

/// Diffusion-weighted channels divided by the designated b = 0 channel and
/// clamped to the model's input range. Voxels with s0 <= 0 become zero.
Volume4D normalize_signals(const Volume4D& dwi, const GradientScheme& scheme, const ModelConfig& cfg);

/// One channel, 1 where label != 0.
Volume4D foreground_mask(const Volume4D& labels);

/// Zeroes the features of voxels outside `mask` (which may be null).
void apply_mask(PatchSequence& seq, const Volume4D* mask, std::size_t patch);

/// Full-volume tensor estimate in mm^2/s. Patches are placed with `stride`
/// (0 uses the config's inference stride), predictions are averaged per voxel
/// and voxels outside `mask` are zero. Model ST runs its embedded Model S on
/// each patch first.
Volume4D predict_volume(const Model& model, const Volume4D& normalized, const Volume4D* mask,
                        std::size_t stride = 0);

} // namespace dtf::nn
