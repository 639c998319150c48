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

#include "dtformer/scheme.hpp"

#include "dtformer/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace dtf;

TEST_CASE("design matrix rows")
{
  auto r = design_row(Vec3::UnitX(), 1000);
  CHECK(r(0) == 1000);
  for (int i = 1; i < 6; ++i) CHECK(r(i) == 0);

  r = design_row(Vec3(1, 1, 0).normalized(), 1000);
  CHECK(r(0) == doctest::Approx(500));
  CHECK(r(1) == doctest::Approx(500));
  CHECK(r(2) == doctest::Approx(0));
  CHECK(r(3) == doctest::Approx(1000));
  CHECK(r(4) == doctest::Approx(0));
  CHECK(r(5) == doctest::Approx(0));

  const Vec3 g = Vec3(0.3, -0.5, 0.8).normalized();
  CHECK((design_row(g, 700) - design_row(-g, 700)).norm() == 0.0);
  const auto row = design_row(g, 700);
  CHECK(std::abs(row(0) + row(1) + row(2) - 700) <= 1e-9 * 700);
}

TEST_CASE("skare6 scheme")
{
  const auto scheme = skare6_scheme(1000);
  REQUIRE(scheme.size() == 7);
  REQUIRE(scheme.b0_index() == 0);
  for (auto i : scheme.weighted_indices()) CHECK(std::abs(scheme.directions()[i].norm() - 1) < 1e-12);

  const auto design = build_design_matrix(scheme);
  CHECK(design.measurements() == 6);
  CHECK(design.scheme_indices == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  // Frozen from numpy.linalg.svd on the same renormalized 6x6 matrix.
  CHECK(condition_number(design.rows) == doctest::Approx(1.3232917833857434).epsilon(1e-12));
}

TEST_CASE("predict_signals")
{
  const auto scheme = skare6_scheme(1000);
  auto s = predict_signals(DiffusionTensor::isotropic(1e-3), scheme, 1.0);
  for (auto v : s) CHECK(v == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  s = predict_signals(DiffusionTensor{}, scheme, 42.0);
  for (auto v : s) CHECK(v == 42.0);

  const GradientScheme x({Vec3::UnitX()}, {1000});
  s = predict_signals(DiffusionTensor{2e-3, 1e-3, 1e-3, 0, 0, 0}, x, 100.0);
  CHECK(s[0] == doctest::Approx(13.5335283236613).epsilon(1e-12));
}

TEST_CASE("scheme validation")
{
  CHECK_THROWS_AS(GradientScheme({Vec3::UnitX()}, {1000, 0}), Error);
  CHECK_THROWS_AS(GradientScheme({Vec3::Zero()}, {1000}), Error);
  CHECK_THROWS_AS(GradientScheme({Vec3::UnitX()}, {-5}), Error);
  CHECK_THROWS_AS(GradientScheme({Vec3::UnitX(), Vec3::Zero()}, {1000, 0}, std::size_t{0}), Error);

  const GradientScheme s({Vec3(2, 0, 0), Vec3::Zero(), Vec3::Zero()}, {1000, 0, 0});
  CHECK(s.directions()[0].norm() == doctest::Approx(1.0));
  CHECK(s.b0_index() == 1);
  const GradientScheme t({Vec3(2, 0, 0), Vec3::Zero(), Vec3::Zero()}, {1000, 0, 0}, std::size_t{2});
  CHECK(t.b0_index() == 2);
}

TEST_CASE("FSL bvec/bval parsing and writing")
{
  const auto s = parse_fsl_scheme("0 1 0 0.5\n0 0 1 0.5\n0 0 0 0\n", "0 1000 1000 800\n");
  REQUIRE(s.size() == 4);
  CHECK(s.b0_index() == 0);
  CHECK(s.directions()[1] == Vec3::UnitX());
  CHECK(s.directions()[3].norm() == doctest::Approx(1.0));
  CHECK(s.bvalues()[3] == 800);

  const auto col = parse_fsl_scheme("0 0 0\n1 0 0\n0 1 0\n0 0 1\n", "0\n1000\n1000\n1000\n");
  CHECK(col.size() == 4);
  CHECK(col.directions()[3] == Vec3::UnitZ());

  CHECK_THROWS_AS(parse_fsl_scheme("0 1\n0 0\n", "0 1000"), Error);
  CHECK_THROWS_AS(parse_fsl_scheme("0 x 0\n0 0 0\n0 0 1\n", "0 0 1000"), Error);

  const auto dir = std::filesystem::temp_directory_path() / "dtf_scheme_test";
  std::filesystem::create_directories(dir);
  const auto sk = skare6_scheme(1000);
  save_fsl_scheme(sk, (dir / "s.bvec").string(), (dir / "s.bval").string());
  const auto back = load_fsl_scheme((dir / "s.bvec").string(), (dir / "s.bval").string());
  REQUIRE(back.size() == sk.size());
  for (std::size_t i = 0; i < sk.size(); ++i) {
    CHECK((back.directions()[i] - sk.directions()[i]).norm() < 1e-15);
    CHECK(back.bvalues()[i] == sk.bvalues()[i]);
  }
}
