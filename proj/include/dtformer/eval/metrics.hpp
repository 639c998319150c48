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

#include "dtformer/volume.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace dtf::eval {

/// Principal directions are compared only where the reference FA exceeds this.
inline constexpr double kAngleFaThreshold = 0.15;

struct MetricSet {
  /// Mean over voxels of sum_i |pred_i - ref_i| over the six elements, mm^2/s.
  double tensor_error = 0.0;
  double md_error = 0.0;
  double fa_error = 0.0;
  double angle_error_deg = 0.0;
  std::size_t voxels = 0;
  std::size_t angle_voxels = 0;
};

struct RegionMetrics {
  int label = 0;
  std::string name;
  MetricSet metrics;
};

struct MetricsReport {
  std::string method;
  MetricSet overall;
  std::vector<RegionMetrics> regions;
  double angle_fa_threshold = kAngleFaThreshold;

  nlohmann::json to_json() const;
};

/// Voxel-wise comparison of two tensor volumes over `mask` (null means every
/// voxel). With `labels`, metrics are also reported per label value.
MetricsReport compare_volumes(const Volume4D& pred, const Volume4D& ref, const Volume4D* mask,
                              const Volume4D* labels = nullptr, std::string method = "",
                              double angle_fa_threshold = kAngleFaThreshold);

/// Flat CSV with header method,region,metric,value; region "all" holds the
/// whole-mask numbers.
std::string reports_to_csv(const std::vector<MetricsReport>& reports);

enum class ScalarMap { Fa, Md };
ScalarMap parse_scalar_map(std::string_view name);

/// FA or MD of every voxel of a tensor volume.
Volume4D scalar_map(const Volume4D& tensors, ScalarMap which);

struct BlandAltman {
  /// ((pred + ref) / 2, pred - ref) per masked voxel in voxel order.
  std::vector<std::pair<double, double>> rows;
  double bias = 0.0;
  /// Sample standard deviation of the differences.
  double sd = 0.0;
  double lower = 0.0;
  double upper = 0.0;

  std::string to_csv() const;
  nlohmann::json summary() const;
};

BlandAltman bland_altman(const Volume4D& pred, const Volume4D& ref, const Volume4D* mask);

} // namespace dtf::eval
