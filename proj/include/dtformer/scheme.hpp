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

#include "dtformer/tensor.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace dtf {

/// Acquisition table: one unit direction and b-value (s/mm^2) per measurement.
/// Directions of diffusion-weighted entries are renormalized on construction;
/// b = 0 entries keep whatever direction they were given.
class GradientScheme {
public:
  GradientScheme() = default;
  /// Throws InvalidScheme on length mismatch, negative or non-finite b, or a
  /// diffusion-weighted direction that cannot be normalized. `b0_index`
  /// selects the normalization measurement; defaults to the first b = 0 entry.
  GradientScheme(std::vector<Vec3> directions, std::vector<double> bvalues, std::optional<std::size_t> b0_index = {});

  std::size_t size() const noexcept { return bvalues_.size(); }
  const std::vector<Vec3>& directions() const noexcept { return directions_; }
  const std::vector<double>& bvalues() const noexcept { return bvalues_; }
  /// Index of the designated b = 0 measurement, if any.
  std::optional<std::size_t> b0_index() const noexcept { return b0_index_; }
  /// Indices of b > 0 entries in scheme order.
  const std::vector<std::size_t>& weighted_indices() const noexcept { return weighted_; }

private:
  std::vector<Vec3> directions_;
  std::vector<double> bvalues_;
  std::optional<std::size_t> b0_index_;
  std::vector<std::size_t> weighted_;
};

/// The six condition-number-optimized directions at b = `bvalue`, preceded by
/// one b = 0 entry when `with_b0` is set.
GradientScheme skare6_scheme(double bvalue = 1000.0, bool with_b0 = true);

/// `count` near-uniform directions on the hemisphere (Fibonacci lattice),
/// preceded by one b = 0 entry.
GradientScheme uniform_scheme(std::size_t count, double bvalue = 1000.0);

/// FSL text format: bvec holds three rows (x, y, z), bval one row.
GradientScheme load_fsl_scheme(const std::string& bvec_path, const std::string& bval_path);
void save_fsl_scheme(const GradientScheme& scheme, const std::string& bvec_path, const std::string& bval_path);
GradientScheme parse_fsl_scheme(const std::string& bvec_text, const std::string& bval_text);

using DesignRows = Eigen::Matrix<double, Eigen::Dynamic, 6>;

/// Matrix B mapping the vectorized tensor to negated log attenuation:
/// B * D = -ln(s / s0), one row per b > 0 measurement.
struct DesignMatrix {
  DesignRows rows;
  std::vector<std::size_t> scheme_indices;

  Eigen::Index measurements() const noexcept { return rows.rows(); }
};

/// Row for a single (g, b): [b gx^2, b gy^2, b gz^2, 2b gx gy, 2b gx gz, 2b gy gz].
Eigen::Matrix<double, 1, 6> design_row(const Vec3& g, double b) noexcept;

DesignMatrix build_design_matrix(const GradientScheme& scheme);

/// Ratio of extreme singular values; +inf when rank deficient.
double condition_number(const DesignRows& rows);

/// Diffusion-weighted signals s0 * exp(-B_i D), in scheme order of b > 0 entries.
Eigen::VectorXd predict_signals(const DiffusionTensor& tensor, const DesignMatrix& design, double s0);
Eigen::VectorXd predict_signals(const DiffusionTensor& tensor, const GradientScheme& scheme, double s0);

} // namespace dtf
