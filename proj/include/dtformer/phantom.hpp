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

#include "dtformer/scheme.hpp"
#include "dtformer/volume.hpp"

#include <cstdint>
#include <limits>
#include <string_view>

namespace dtf {

enum class RegionModel { Layered, CurvedTract };

RegionModel parse_region_model(std::string_view name);
const char* region_model_name(RegionModel m) noexcept;

/// Label values stored in the label volume.
enum class Region : int { Background = 0, WhiteMatter = 1, GrayMatter = 2, Csf = 3 };

const char* region_name(Region r) noexcept;

/// Per-region tissue parameters. MD and FA are drawn from smooth random
/// fields scaled into these ranges; the tensors are cylindrically symmetric,
/// which fixes the eigenvalues.
struct RegionParams {
  double md_min;
  double md_max;
  double fa_min;
  double fa_max;
  double s0_scale;
};

struct PhantomSpec {
  Dims dims = {32, 32, 32};
  std::uint64_t seed = 0;
  RegionModel model = RegionModel::CurvedTract;
  /// Spacing of the random control grid in voxels. 1 gives independent
  /// directions per voxel.
  double length_scale = 8.0;
  double s0_amplitude = 1000.0;
  RegionParams white_matter{0.60e-3, 0.80e-3, 0.60, 0.90, 1.00};
  RegionParams gray_matter{0.70e-3, 0.90e-3, 0.05, 0.25, 1.15};
  RegionParams csf{2.90e-3, 3.10e-3, 0.00, 0.02, 1.60};

  /// Throws InvalidArgument when a range is empty or would give a
  /// non-positive eigenvalue.
  void validate() const;
  const RegionParams& params(Region r) const;
};

struct Phantom {
  Volume4D tensors; // 6 channels, mm^2/s
  Volume4D labels;  // 1 channel, Region values
  Volume4D s0;      // 1 channel
};

/// Deterministic in `spec`; every tensor is positive definite by construction.
Phantom generate_phantom(const PhantomSpec& spec);

/// One channel per scheme entry: b = 0 entries carry s0, the rest the
/// noiseless signal model.
Volume4D synthesize_dwi(const Volume4D& tensors, const Volume4D& s0, const GradientScheme& scheme);

struct NoiseSpec {
  /// +inf disables noise.
  double snr_db = std::numeric_limits<double>::infinity();
  double reference_amplitude = 1.0;
  std::uint64_t seed = 0;

  /// reference_amplitude / 10^(snr_db / 20); 0 for the +inf sentinel.
  double sigma() const;
};

/// Magnitude of a complex signal with i.i.d. Gaussian noise on both parts:
/// sqrt((A + n1)^2 + n2^2).
Volume4D add_rician_noise(const Volume4D& signals, const NoiseSpec& noise);

/// Mean of `channel` over voxels where it is positive (the foreground).
double reference_amplitude(const Volume4D& volume, std::size_t channel = 0);

} // namespace dtf
