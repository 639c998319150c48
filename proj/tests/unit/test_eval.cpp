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

#include "dtformer/errors.hpp"
#include "dtformer/eval/metrics.hpp"
#include "dtformer/eval/sweep.hpp"
#include "dtformer/phantom.hpp"
#include "dtformer/tensor.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace dtf;
using namespace dtf::eval;

namespace {

Phantom layered(Dims d = {12, 12, 8}, std::uint64_t seed = 4)
{
  PhantomSpec spec;
  spec.dims = d;
  spec.seed = seed;
  spec.model = RegionModel::Layered;
  return generate_phantom(spec);
}

// Cylindrical tensors with principal axis along x.
Volume4D axial_tensors(Dims d)
{
  Volume4D v(d, 6);
  for (std::size_t i = 0; i < v.voxel_count(); ++i) {
    const double l1 = 1.5e-3 + 1e-5 * static_cast<double>(i % 7), l2 = 0.4e-3;
    const auto e = tensor_from_eigen(Vec3(l1, l2, l2), Mat3::Identity()).elements();
    std::copy(e.begin(), e.end(), v.voxel(i).begin());
  }
  return v;
}

} // namespace

TEST_CASE("identical volumes give zero error")
{
  const Phantom ph = layered();
  const MetricsReport r = compare_volumes(ph.tensors, ph.tensors, nullptr, &ph.labels, "same");
  CHECK(r.overall.tensor_error == 0.0);
  CHECK(r.overall.md_error == 0.0);
  CHECK(r.overall.fa_error == 0.0);
  CHECK(r.overall.angle_error_deg < 1e-6);
  CHECK(r.overall.voxels == ph.tensors.voxel_count());
}

TEST_CASE("constant Dxx shift")
{
  const Phantom ph = layered();
  Volume4D shifted = ph.tensors;
  for (std::size_t v = 0; v < shifted.voxel_count(); ++v) shifted.at(v, 0) += 1e-4;
  const MetricsReport r = compare_volumes(shifted, ph.tensors, nullptr);
  CHECK(r.overall.tensor_error == doctest::Approx(1e-4).epsilon(1e-9));
  CHECK(r.overall.md_error == doctest::Approx(1e-4 / 3).epsilon(1e-9));
}

TEST_CASE("rotation by 90 degrees about z")
{
  const Volume4D ref = axial_tensors({4, 4, 4});
  Volume4D rot(ref.dims(), 6);
  const Mat3 R = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
  for (std::size_t v = 0; v < ref.voxel_count(); ++v) {
    const auto e = ref.voxel(v);
    const Mat3 m = DiffusionTensor::from_elements(std::span<const double, 6>(e.data(), 6)).matrix();
    const auto r = DiffusionTensor::from_matrix(R * m * R.transpose()).elements();
    std::copy(r.begin(), r.end(), rot.voxel(v).begin());
  }
  const MetricsReport rep = compare_volumes(rot, ref, nullptr);
  CHECK(rep.overall.angle_error_deg == doctest::Approx(90.0).epsilon(1e-9));
  CHECK(rep.overall.md_error < 1e-18);
  CHECK(rep.overall.angle_voxels == 64);
}

TEST_CASE("angle error ignores eigenvector sign and low-FA voxels")
{
  Volume4D ref(Dims{2, 1, 1}, 6);
  auto put = [&](std::size_t v, const DiffusionTensor& t) {
    const auto e = t.elements();
    std::copy(e.begin(), e.end(), ref.voxel(v).begin());
  };
  put(0, tensor_from_eigen(Vec3(1.7e-3, 0.3e-3, 0.3e-3), Mat3::Identity()));
  put(1, DiffusionTensor::isotropic(1e-3));
  Volume4D pred = ref;
  const Mat3 flip = Vec3(-1, 1, -1).asDiagonal();
  const auto e = ref.voxel(0);
  const auto f =
      DiffusionTensor::from_matrix(flip * DiffusionTensor::from_elements(std::span<const double, 6>(e.data(), 6)).matrix() * flip)
          .elements();
  std::copy(f.begin(), f.end(), pred.voxel(0).begin());
  const MetricsReport r = compare_volumes(pred, ref, nullptr);
  CHECK(r.overall.angle_voxels == 1);
  CHECK(r.overall.angle_error_deg < 1e-6);
}

TEST_CASE("region errors average to the whole-mask error")
{
  const Phantom ph = layered({10, 10, 12}, 9);
  Volume4D noisy = add_rician_noise(synthesize_dwi(ph.tensors, ph.s0, skare6_scheme()),
                                    NoiseSpec{20.0, reference_amplitude(ph.s0), 3});
  const Volume4D fit = fit_volume(noisy, skare6_scheme(), FitMethod::Ols);
  Volume4D mask(ph.labels.dims(), 1, 1.0);
  for (std::size_t v = 0; v < mask.voxel_count(); v += 5) mask.at(v, 0) = 0.0;
  const MetricsReport r = compare_volumes(fit, ph.tensors, &mask, &ph.labels, "ols");
  REQUIRE(r.regions.size() >= 2);
  double t = 0, md = 0, fa = 0, ang = 0;
  std::size_t n = 0, na = 0;
  for (const auto& g : r.regions) {
    t += g.metrics.tensor_error * static_cast<double>(g.metrics.voxels);
    md += g.metrics.md_error * static_cast<double>(g.metrics.voxels);
    fa += g.metrics.fa_error * static_cast<double>(g.metrics.voxels);
    ang += g.metrics.angle_error_deg * static_cast<double>(g.metrics.angle_voxels);
    n += g.metrics.voxels;
    na += g.metrics.angle_voxels;
  }
  CHECK(n == r.overall.voxels);
  CHECK(std::abs(t / static_cast<double>(n) - r.overall.tensor_error) <= 1e-10 * r.overall.tensor_error);
  CHECK(std::abs(md / static_cast<double>(n) - r.overall.md_error) <= 1e-10 * r.overall.md_error);
  CHECK(std::abs(fa / static_cast<double>(n) - r.overall.fa_error) <= 1e-10 * r.overall.fa_error);
  CHECK(std::abs(ang / static_cast<double>(na) - r.overall.angle_error_deg) <= 1e-10 * r.overall.angle_error_deg);

  const std::string csv = reports_to_csv({r});
  CHECK(csv.rfind("method,region,metric,value\n", 0) == 0);
  CHECK(csv.find("ols,all,angle_error_deg,") != std::string::npos);
  CHECK(csv.find("ols,wm,tensor_error,") != std::string::npos);
  const auto j = r.to_json();
  CHECK(j["angle_fa_threshold"] == 0.15);

  Volume4D empty(ph.labels.dims(), 1, 0.0);
  CHECK_THROWS_AS(compare_volumes(fit, ph.tensors, &empty), Error);
  CHECK_THROWS_AS(compare_volumes(fit, Volume4D({2, 2, 2}, 6), nullptr), ShapeError);
}

TEST_CASE("Bland-Altman data")
{
  Volume4D ref({3, 3, 3}, 1);
  for (std::size_t v = 0; v < ref.voxel_count(); ++v) ref.at(v, 0) = 0.1 * static_cast<double>(v);
  Volume4D mask({3, 3, 3}, 1, 1.0);
  mask.at(4, 0) = 0.0;

  const BlandAltman same = bland_altman(ref, ref, &mask);
  CHECK(same.rows.size() == 26);
  CHECK(same.bias == 0.0);
  for (const auto& row : same.rows) CHECK(row.second == 0.0);

  Volume4D shifted = ref;
  for (double& v : shifted.data()) v += 0.25;
  const BlandAltman s = bland_altman(shifted, ref, &mask);
  CHECK(s.bias == doctest::Approx(0.25));
  CHECK(s.upper - s.lower == doctest::Approx(0.0).epsilon(1e-12));
  const std::string csv = s.to_csv();
  CHECK(csv.rfind("mean,diff\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 27);
  CHECK_THROWS_AS(bland_altman(ref, Volume4D({3, 3, 2}, 1), nullptr), ShapeError);
}

TEST_CASE("noise sweep")
{
  const Phantom ph = layered({8, 8, 8}, 2);
  SweepConfig cfg;
  cfg.methods = {Method::Ols, Method::Cwlls};
  cfg.repetitions = 2;
  cfg.seed = 5;
  const SweepResult r = noise_sweep(ph, skare6_scheme(), cfg, {});
  CHECK(r.entries.size() == (1 + 4 * 2) * 2);
  CHECK(r.means.size() == 5 * 2);
  CHECK(r.mean(std::numeric_limits<double>::infinity(), Method::Cwlls).overall.tensor_error < 1e-6);
  CHECK(r.mean(15.0, Method::Cwlls).overall.tensor_error > r.mean(50.0, Method::Cwlls).overall.tensor_error);
  const std::string csv = r.to_csv();
  CHECK(csv.find("inf,0,cwlls,all,tensor_error,") != std::string::npos);
  CHECK(csv.find("15,mean,ols,all,fa_error,") != std::string::npos);
  CHECK(r.to_json()["means"].size() == 10);

  SweepConfig learned = cfg;
  learned.methods = {Method::ModelST};
  try {
    noise_sweep(ph, skare6_scheme(), learned, {});
    FAIL("expected a missing-checkpoint error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingCheckpoint);
  }
  SweepConfig dup = cfg;
  dup.snr_db = {20, 20};
  CHECK_THROWS_AS(noise_sweep(ph, skare6_scheme(), dup, {}), Error);
}
