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
// Test-only reference routines. These deliberately avoid the library's own
// numerical paths so they can serve as independent checks.

#include "dtformer/random.hpp"
#include "dtformer/tensor.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace oracle {

/// Eigenvalues of a symmetric 3x3 matrix from the characteristic cubic
/// (trigonometric closed form), polished by Newton steps in long double.
/// Returned in descending order.
inline std::array<double, 3> cubic_eigenvalues(const dtf::Mat3& a)
{
  using ld = long double;
  const ld a00 = a(0, 0), a11 = a(1, 1), a22 = a(2, 2), a01 = a(0, 1), a02 = a(0, 2), a12 = a(1, 2);
  // lambda^3 - c2 lambda^2 + c1 lambda - c0 = 0
  const ld c2 = a00 + a11 + a22;
  const ld c1 = a00 * a11 + a00 * a22 + a11 * a22 - a01 * a01 - a02 * a02 - a12 * a12;
  const ld c0 = a00 * a11 * a22 + 2 * a01 * a02 * a12 - a00 * a12 * a12 - a11 * a02 * a02 - a22 * a01 * a01;

  const ld q = c2 / 3;
  const ld p2 = (a00 - q) * (a00 - q) + (a11 - q) * (a11 - q) + (a22 - q) * (a22 - q) + 2 * (a01 * a01 + a02 * a02 + a12 * a12);
  std::array<ld, 3> roots;
  if (p2 == 0) {
    roots = {q, q, q};
  } else {
    const ld p = std::sqrt(p2 / 6);
    // det((A - qI) / p) / 2
    const ld b00 = (a00 - q) / p, b11 = (a11 - q) / p, b22 = (a22 - q) / p;
    const ld b01 = a01 / p, b02 = a02 / p, b12 = a12 / p;
    ld r = (b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) + b02 * (b01 * b12 - b11 * b02)) / 2;
    r = std::clamp<ld>(r, -1, 1);
    const ld phi = std::acos(r) / 3;
    const ld pi = std::numbers::pi_v<ld>;
    roots = {q + 2 * p * std::cos(phi), q + 2 * p * std::cos(phi + 2 * pi / 3), q + 2 * p * std::cos(phi + 4 * pi / 3)};
  }
  for (ld& x : roots) {
    for (int it = 0; it < 3; ++it) {
      const ld f = ((x - c2) * x + c1) * x - c0;
      const ld df = (3 * x - 2 * c2) * x + c1;
      if (df == 0) break;
      const ld nx = x - f / df;
      if (std::abs(nx - x) > std::abs(x) * 1e-6L + 1e-30L) break; // do not jump roots near multiplicity
      x = nx;
    }
  }
  std::array<double, 3> out = {static_cast<double>(roots[0]), static_cast<double>(roots[1]), static_cast<double>(roots[2])};
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

inline dtf::Mat3 random_rotation(dtf::RandomStream& rng)
{
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

/// Brain-like PSD tensor: MD in [0.5, 1.0]e-3, FA in [0.05, 0.9], random axes.
inline dtf::DiffusionTensor random_psd_tensor(dtf::RandomStream& rng)
{
  const double md = 0.5e-3 + 0.5e-3 * rng.uniform();
  const double fa = 0.05 + 0.85 * rng.uniform();
  const double k = fa / std::sqrt(3.0 - 2.0 * fa * fa);
  const dtf::Vec3 l(md * (1 + 2 * k), md * (1 - k), md * (1 - k));
  return dtf::tensor_from_eigen(l, random_rotation(rng));
}

inline double rel_diff(const dtf::DiffusionTensor& a, const dtf::DiffusionTensor& b)
{
  return (a.matrix() - b.matrix()).norm() / b.matrix().norm();
}

inline double tensor_abs_error(const dtf::DiffusionTensor& a, const dtf::DiffusionTensor& b)
{
  const auto x = a.elements();
  const auto y = b.elements();
  double s = 0;
  for (int i = 0; i < 6; ++i) s += std::abs(x[i] - y[i]);
  return s;
}

} // namespace oracle
