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
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace dtf;

TEST_CASE("eigendecompose diagonal and isotropic tensors")
{
  const auto eig = eigendecompose(DiffusionTensor{1e-3, 3e-3, 2e-3, 0, 0, 0});
  CHECK(eig.values[0] == doctest::Approx(3e-3).epsilon(1e-12));
  CHECK(eig.values[1] == doctest::Approx(2e-3).epsilon(1e-12));
  CHECK(eig.values[2] == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(std::abs(eig.vectors.col(0).dot(Vec3::UnitY())) == doctest::Approx(1.0));
  CHECK(std::abs(eig.vectors.col(1).dot(Vec3::UnitZ())) == doctest::Approx(1.0));
  CHECK(std::abs(eig.vectors.col(2).dot(Vec3::UnitX())) == doctest::Approx(1.0));

  const auto iso = eigendecompose(DiffusionTensor::isotropic(0.7e-3));
  for (int i = 0; i < 3; ++i) CHECK(iso.values[i] == doctest::Approx(0.7e-3));
  CHECK((iso.vectors.transpose() * iso.vectors - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("Jacobi eigenvalues agree with the characteristic cubic")
{
  RandomStream rng(2024, stream_id(Stream::Test, 1));
  for (int t = 0; t < 2000; ++t) {
    Mat3 m;
    for (int i = 0; i < 3; ++i)
      for (int j = i; j < 3; ++j) m(i, j) = m(j, i) = rng.normal() * 1e-3;
    const auto eig = eigendecompose(m);
    const auto ref = oracle::cubic_eigenvalues(m);
    const double scale = std::max({std::abs(ref[0]), std::abs(ref[2])});
    for (int i = 0; i < 3; ++i) REQUIRE(std::abs(eig.values[i] - ref[i]) <= 1e-9 * scale);
    REQUIRE((eig.reconstruct() - m).norm() <= 1e-9 * m.norm());
    REQUIRE((eig.vectors.transpose() * eig.vectors - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
    REQUIRE(eig.values[0] >= eig.values[1]);
    REQUIRE(eig.values[1] >= eig.values[2]);
  }
}

TEST_CASE("fractional anisotropy")
{
  CHECK(fractional_anisotropy(Vec3(1, 1, 1)) == doctest::Approx(0.0));
  CHECK(fractional_anisotropy(Vec3(1, 0, 0)) == doctest::Approx(1.0));
  // sqrt(3/2) * sqrt((2/3)^2 + 2 (1/3)^2) / sqrt(6) = sqrt(1/6)
  CHECK(fractional_anisotropy(Vec3(2e-3, 1e-3, 1e-3)) == doctest::Approx(0.408248290463863).epsilon(1e-12));
  CHECK(fractional_anisotropy(Vec3::Zero()) == 0.0);

  RandomStream rng(5, stream_id(Stream::Test, 2));
  for (int t = 0; t < 100; ++t) {
    const Vec3 l(rng.uniform(), rng.uniform(), rng.uniform());
    const double c = 1e-4 + 100 * rng.uniform();
    CHECK(fractional_anisotropy(l * c) == doctest::Approx(fractional_anisotropy(l)).epsilon(1e-12));
  }
}

TEST_CASE("mean diffusivity is the trace over three")
{
  CHECK(mean_diffusivity(Vec3(1e-3, 2e-3, 3e-3)) == doctest::Approx(2e-3).epsilon(1e-14));
  CHECK(mean_diffusivity(eigendecompose(DiffusionTensor{})) == 0.0);
  RandomStream rng(9, stream_id(Stream::Test, 3));
  for (int t = 0; t < 100; ++t) {
    const auto tensor = oracle::random_psd_tensor(rng);
    CHECK(std::abs(mean_diffusivity(eigendecompose(tensor)) - tensor.trace() / 3.0) < 1e-12);
  }
}

TEST_CASE("angular error is sign invariant")
{
  const Vec3 v = Vec3(1, 2, 3).normalized();
  CHECK(angular_error_deg(v, v) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(angular_error_deg(v, -v) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(angular_error_deg(Vec3::UnitX(), Vec3::UnitY()) == doctest::Approx(90.0));
  CHECK(angular_error_deg(Vec3::UnitX(), Vec3(1, 1, 0).normalized()) == doctest::Approx(45.0));
  CHECK_THROWS_AS(angular_error_deg(Vec3::Zero(), Vec3::UnitX()), Error);
}

TEST_CASE("eigenvalue clamping")
{
  const DiffusionTensor t = tensor_from_eigen(Vec3(1e-3, 0.5e-3, -0.2e-3), Mat3::Identity());
  bool changed = false;
  const auto c = clamp_eigenvalues(t, 1e-7, &changed);
  CHECK(changed);
  CHECK(eigendecompose(c).values[2] == doctest::Approx(1e-7));
  CHECK(eigendecompose(c).values[0] == doctest::Approx(1e-3));

  const DiffusionTensor ok = DiffusionTensor::isotropic(1e-3);
  CHECK(clamp_eigenvalues(ok, 1e-7, &changed) == ok);
  CHECK_FALSE(changed);
}
