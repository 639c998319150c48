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

#include "dtformer/tensor.hpp"

#include "dtformer/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dtf {

DiffusionTensor DiffusionTensor::from_matrix(const Mat3& m) noexcept
{
  return {m(0, 0), m(1, 1), m(2, 2), 0.5 * (m(0, 1) + m(1, 0)), 0.5 * (m(0, 2) + m(2, 0)), 0.5 * (m(1, 2) + m(2, 1))};
}

Mat3 DiffusionTensor::matrix() const noexcept
{
  Mat3 m;
  m << xx, xy, xz, xy, yy, yz, xz, yz, zz;
  return m;
}

bool DiffusionTensor::finite() const noexcept
{
  for (double v : elements())
    if (!std::isfinite(v)) return false;
  return true;
}

Mat3 EigenSystem::reconstruct() const
{
  return vectors * values.asDiagonal() * vectors.transpose();
}

EigenSystem eigendecompose(const DiffusionTensor& tensor)
{
  return eigendecompose(tensor.matrix());
}

EigenSystem eigendecompose(const Mat3& symmetric)
{
  constexpr double kTolerance = 1e-12;
  constexpr int kMaxSweeps = 50;

  Mat3 a = 0.5 * (symmetric + symmetric.transpose());
  Mat3 v = Mat3::Identity();
  const double total = a.norm();

  auto off_norm = [&a] {
    return std::sqrt(2.0 * (a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2)));
  };

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    const double off = off_norm();
    if (off == 0.0 || off <= kTolerance * total) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J^T A J with J the (p, q) Givens rotation.
        for (int k = 0; k < 3; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&a](int i, int j) { return a(i, i) > a(j, j); });

  EigenSystem out;
  for (int i = 0; i < 3; ++i) {
    out.values[i] = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]).normalized();
  }
  return out;
}

double fractional_anisotropy(const Vec3& l) noexcept
{
  const double norm = l.norm();
  if (norm == 0.0) return 0.0;
  const double mean = l.sum() / 3.0;
  const double dev = (l.array() - mean).matrix().norm();
  return std::clamp(std::sqrt(1.5) * dev / norm, 0.0, 1.0);
}

double angular_error_deg(const Vec3& a, const Vec3& b)
{
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::InvalidArgument, "angular_error: zero-norm vector");
  const double c = std::clamp(std::abs(a.dot(b)) / (na * nb), 0.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

DiffusionTensor clamp_eigenvalues(const DiffusionTensor& tensor, double floor, bool* changed)
{
  const EigenSystem eig = eigendecompose(tensor);
  bool any = false;
  Vec3 values = eig.values;
  for (int i = 0; i < 3; ++i) {
    if (values[i] < floor) {
      values[i] = floor;
      any = true;
    }
  }
  if (changed) *changed = any;
  if (!any) return tensor;
  return tensor_from_eigen(values, eig.vectors);
}

DiffusionTensor tensor_from_eigen(const Vec3& eigenvalues, const Mat3& rotation) noexcept
{
  return DiffusionTensor::from_matrix(rotation * eigenvalues.asDiagonal() * rotation.transpose());
}

} // namespace dtf
