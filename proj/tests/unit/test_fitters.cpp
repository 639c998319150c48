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

#include "dtformer/fitters.hpp"

#include "dtformer/errors.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace dtf;

namespace {

std::vector<double> as_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::vector<double> rician(const Eigen::VectorXd& clean, double sigma, std::uint64_t seed, std::uint64_t voxel)
{
  std::vector<double> out(static_cast<std::size_t>(clean.size()));
  for (Eigen::Index i = 0; i < clean.size(); ++i) {
    const auto n = normal_pair(seed, stream_id(Stream::Test, 77), voxel * 64 + static_cast<std::uint64_t>(i));
    out[static_cast<std::size_t>(i)] = std::hypot(clean[i] + sigma * n[0], sigma * n[1]);
  }
  return out;
}

double median(std::vector<double> v)
{
  std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

} // namespace

TEST_CASE("noiseless round trip for all three fitters")
{
  const auto design = build_design_matrix(skare6_scheme(1000));
  RandomStream rng(11, stream_id(Stream::Test, 10));
  for (int t = 0; t < 200; ++t) {
    const auto truth = oracle::random_psd_tensor(rng);
    const double s0 = 100 + 900 * rng.uniform();
    const auto sig = as_vector(predict_signals(truth, design, s0));
    const auto ols = fit_ols(sig, s0, design);
    const auto wlls = fit_wlls_constrained(sig, s0, design);
    const auto cnls = fit_cnls(sig, s0, design);
    REQUIRE(oracle::rel_diff(ols.tensor, truth) < 1e-8);
    REQUIRE(oracle::rel_diff(wlls.tensor, truth) < 1e-8);
    REQUIRE(oracle::rel_diff(cnls.tensor, truth) < 1e-6);
    REQUIRE(oracle::tensor_abs_error(ols.tensor, wlls.tensor) < 1e-8);
    REQUIRE(cnls.iterations <= 1);
    REQUIRE(cnls.converged);
    REQUIRE_FALSE(wlls.constrained_projection_applied);
  }
}

TEST_CASE("round trip with a redundant 30-direction scheme")
{
  const auto design = build_design_matrix(uniform_scheme(30));
  RandomStream rng(12, stream_id(Stream::Test, 11));
  for (int t = 0; t < 50; ++t) {
    const auto truth = oracle::random_psd_tensor(rng);
    const auto sig = as_vector(predict_signals(truth, design, 1.0));
    CHECK(oracle::rel_diff(fit_ols(sig, 1.0, design).tensor, truth) < 1e-8);
    CHECK(oracle::rel_diff(fit_wlls_constrained(sig, 1.0, design).tensor, truth) < 1e-8);
    CHECK(oracle::rel_diff(fit_cnls(sig, 1.0, design).tensor, truth) < 1e-6);
  }
}

TEST_CASE("singular and insufficient designs")
{
  auto dirs = skare6_scheme(1000, false).directions();
  dirs[5] = dirs[4];
  const auto design = build_design_matrix(GradientScheme(dirs, std::vector<double>(6, 1000.0)));
  const std::vector<double> sig(6, 0.5);
  try {
    (void)fit_ols(sig, 1.0, design);
    FAIL("expected singular design");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularDesign);
  }
  CHECK_THROWS_AS(fit_wlls_constrained(sig, 1.0, design), Error);

  const GradientScheme five(std::vector<Vec3>(dirs.begin(), dirs.begin() + 5), std::vector<double>(5, 1000.0));
  try {
    (void)fit_ols(std::vector<double>(5, 0.5), 1.0, build_design_matrix(five));
    FAIL("expected insufficient measurements");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientMeasurements);
  }
}

TEST_CASE("log-domain handling")
{
  const auto design = build_design_matrix(skare6_scheme(1000));
  std::vector<double> sig(6, 0.5);
  sig[2] = 0.0;
  try {
    (void)fit_ols(sig, 1.0, design);
    FAIL("expected log-domain error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LogDomain);
  }
  const auto r = fit_ols(sig, 1.0, design, {.clamp_nonpositive = true});
  CHECK(r.signals_clamped);
  CHECK(r.tensor.finite());
  CHECK_THROWS_AS(fit_ols(std::vector<double>(6, 0.5), 0.0, design), Error);
}

TEST_CASE("signals equal to s0 give the zero tensor")
{
  const auto design = build_design_matrix(skare6_scheme(1000));
  const std::vector<double> sig(6, 250.0);
  const auto r = fit_ols(sig, 250.0, design);
  for (double e : r.tensor.elements()) CHECK(std::abs(e) < 1e-18);
  CHECK(r.residual_norm < 1e-15);
  const auto c = fit_cnls(sig, 250.0, design);
  for (double e : c.tensor.elements()) CHECK(std::abs(e) < 1e-9);
}

TEST_CASE("positivity projection")
{
  const auto design = build_design_matrix(skare6_scheme(1000));
  // A strongly anisotropic tensor with a negative third eigenvalue produces
  // signals above s0 along some directions; the unconstrained fit reproduces it.
  const DiffusionTensor bad = tensor_from_eigen(Vec3(1.5e-3, 0.3e-3, -0.25e-3), Mat3::Identity());
  const auto sig = as_vector(predict_signals(bad, design, 1.0));
  const auto r = fit_wlls_constrained(sig, 1.0, design);
  CHECK(r.constrained_projection_applied);
  CHECK(eigendecompose(r.tensor).values.minCoeff() >= 1e-7 * (1 - 1e-9));

  const auto c = fit_cnls(sig, 1.0, design);
  CHECK(eigendecompose(c.tensor).values.minCoeff() >= -1e-15);
}

TEST_CASE("CNLS output is PSD at every noise level and its objective never increases")
{
  const auto design = build_design_matrix(skare6_scheme(1000));
  RandomStream rng(13, stream_id(Stream::Test, 12));
  for (double sigma : {0.01, 0.1, 0.3, 0.6}) {
    for (int t = 0; t < 100; ++t) {
      const auto truth = oracle::random_psd_tensor(rng);
      const auto sig = rician(predict_signals(truth, design, 1.0), sigma, 3, static_cast<std::uint64_t>(t));
      std::vector<double> trace;
      const auto r = fit_cnls(sig, 1.0, design, {}, {}, &trace);
      REQUIRE(eigendecompose(r.tensor).values.minCoeff() >= -1e-12 * eigendecompose(r.tensor).values.maxCoeff());
      for (std::size_t k = 1; k < trace.size(); ++k) REQUIRE(trace[k] <= trace[k - 1]);
      REQUIRE(r.residual_norm == doctest::Approx(std::sqrt(trace.back())));
    }
  }
}

TEST_CASE("each fitter is optimal on its own objective")
{
  const auto design = build_design_matrix(uniform_scheme(20));
  RandomStream rng(14, stream_id(Stream::Test, 13));
  int checked_wlls = 0;
  for (int t = 0; t < 200; ++t) {
    const auto truth = oracle::random_psd_tensor(rng);
    const auto sig = rician(predict_signals(truth, design, 1.0), 0.05, 4, static_cast<std::uint64_t>(t));
    const auto ols = fit_ols(sig, 1.0, design);
    CHECK(ols.residual_norm <= ols_objective(truth, sig, 1.0, design) + 1e-12);
    CHECK(ols.residual_norm == doctest::Approx(ols_objective(ols.tensor, sig, 1.0, design)));
    const auto wlls = fit_wlls_constrained(sig, 1.0, design);
    if (!wlls.constrained_projection_applied) {
      CHECK(wlls.residual_norm <= wlls_objective(truth, sig, 1.0, design) + 1e-12);
      ++checked_wlls;
    }
    const auto cnls = fit_cnls(sig, 1.0, design);
    CHECK(cnls.residual_norm <= nls_objective(truth, sig, 1.0, design) + 1e-12);
    CHECK(cnls.residual_norm == doctest::Approx(nls_objective(cnls.tensor, sig, 1.0, design)));
  }
  CHECK(checked_wlls > 150);
}

TEST_CASE("stationary start: CNLS takes at most one step")
{
  const auto design = build_design_matrix(skare6_scheme(1000));
  // With six measurements the log-linear fit interpolates the data exactly, so
  // it is already the nonlinear minimizer whenever it is positive definite.
  RandomStream rng(15, stream_id(Stream::Test, 14));
  for (int t = 0; t < 50; ++t) {
    const auto truth = oracle::random_psd_tensor(rng);
    auto sig = rician(predict_signals(truth, design, 1.0), 0.01, 5, static_cast<std::uint64_t>(t));
    if (fit_wlls_constrained(sig, 1.0, design).constrained_projection_applied) continue;
    const auto r = fit_cnls(sig, 1.0, design);
    CHECK(r.iterations <= 1);
  }
}

TEST_CASE("scale equivariance")
{
  const auto design = build_design_matrix(uniform_scheme(12));
  RandomStream rng(16, stream_id(Stream::Test, 15));
  for (int t = 0; t < 50; ++t) {
    const auto truth = oracle::random_psd_tensor(rng);
    const auto sig = rician(predict_signals(truth, design, 1.0), 0.05, 6, static_cast<std::uint64_t>(t));
    const double c = 1000.0 * (0.5 + rng.uniform());
    std::vector<double> scaled(sig);
    for (double& v : scaled) v *= c;
    CHECK(oracle::tensor_abs_error(fit_ols(sig, 1.0, design).tensor, fit_ols(scaled, c, design).tensor) < 1e-10);
    CHECK(oracle::tensor_abs_error(fit_wlls_constrained(sig, 1.0, design).tensor,
                                   fit_wlls_constrained(scaled, c, design).tensor) < 1e-10);
    CHECK(oracle::tensor_abs_error(fit_cnls(sig, 1.0, design).tensor, fit_cnls(scaled, c, design).tensor) < 1e-10);
  }
}

namespace {

void compare_medians(const GradientScheme& scheme, double snr_db)
{
  {
    const auto design = build_design_matrix(scheme);
    RandomStream rng(17, stream_id(Stream::Test, 16));
    const double sigma = 1.0 / std::pow(10.0, snr_db / 20.0);
    std::vector<double> e_ols, e_wlls;
    for (int t = 0; t < 10000; ++t) {
      const auto truth = oracle::random_psd_tensor(rng);
      const auto sig = rician(predict_signals(truth, design, 1.0), sigma, 7, static_cast<std::uint64_t>(t));
      e_ols.push_back(oracle::tensor_abs_error(fit_ols(sig, 1.0, design).tensor, truth));
      e_wlls.push_back(oracle::tensor_abs_error(fit_wlls_constrained(sig, 1.0, design).tensor, truth));
    }
    MESSAGE("m=" << design.measurements() << " snr=" << snr_db << " median OLS " << median(e_ols) << " CWLLS "
                 << median(e_wlls));
    CHECK(median(e_wlls) <= median(e_ols));
  }
}

} // namespace

TEST_CASE("CWLLS median tensor error does not exceed OLS at 20 dB with six directions")
{
  compare_medians(skare6_scheme(1000), 20.0);
}

TEST_CASE("signal-squared weighting helps once heteroskedasticity dominates the Rician floor")
{
  // With 30 directions at 20 dB the noisy weights bias the fit enough that OLS
  // wins in median; at 34 dB the variance-matching weights pay off.
  compare_medians(uniform_scheme(30), 34.0);
}
