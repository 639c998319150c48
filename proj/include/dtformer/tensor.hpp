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

#include <Eigen/Core>

#include <array>
#include <span>

namespace dtf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Symmetric 3x3 diffusion tensor in mm^2/s, stored in the vectorized order
/// [Dxx, Dyy, Dzz, Dxy, Dxz, Dyz].
struct DiffusionTensor {
  double xx = 0, yy = 0, zz = 0, xy = 0, xz = 0, yz = 0;

  static DiffusionTensor from_elements(std::span<const double, 6> e) noexcept
  {
    return {e[0], e[1], e[2], e[3], e[4], e[5]};
  }
  static DiffusionTensor from_matrix(const Mat3& m) noexcept;
  static DiffusionTensor isotropic(double d) noexcept { return {d, d, d, 0, 0, 0}; }

  std::array<double, 6> elements() const noexcept { return {xx, yy, zz, xy, xz, yz}; }
  Mat3 matrix() const noexcept;
  double trace() const noexcept { return xx + yy + zz; }
  bool finite() const noexcept;

  friend bool operator==(const DiffusionTensor&, const DiffusionTensor&) = default;
};

/// Eigenvalues sorted descending; column i of `vectors` pairs with `values[i]`.
struct EigenSystem {
  Vec3 values = Vec3::Zero();
  Mat3 vectors = Mat3::Identity();

  Vec3 principal() const { return vectors.col(0); }
  Mat3 reconstruct() const;
};

/// Cyclic Jacobi rotations; stops once the off-diagonal Frobenius norm is
/// below 1e-12 of the total norm or after 50 sweeps.
EigenSystem eigendecompose(const DiffusionTensor& tensor);
EigenSystem eigendecompose(const Mat3& symmetric);

/// Zero tensor (all eigenvalues zero) yields FA = 0.
double fractional_anisotropy(const Vec3& eigenvalues) noexcept;
inline double fractional_anisotropy(const EigenSystem& eigs) noexcept { return fractional_anisotropy(eigs.values); }

inline double mean_diffusivity(const Vec3& eigenvalues) noexcept { return eigenvalues.sum() / 3.0; }
inline double mean_diffusivity(const EigenSystem& eigs) noexcept { return mean_diffusivity(eigs.values); }

/// Angle between two axes in degrees, in [0, 90]; invariant to the sign of
/// either vector. Throws InvalidArgument on a zero-norm input.
double angular_error_deg(const Vec3& a, const Vec3& b);

/// Replace eigenvalues below `floor` with `floor` and rebuild. Returns the
/// input unchanged when no eigenvalue is below the floor.
DiffusionTensor clamp_eigenvalues(const DiffusionTensor& tensor, double floor, bool* changed = nullptr);

/// Tensor with the given eigenvalues along the columns of `rotation`.
DiffusionTensor tensor_from_eigen(const Vec3& eigenvalues, const Mat3& rotation) noexcept;

} // namespace dtf
