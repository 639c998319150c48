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
#include "dtformer/tensor.hpp"
#include "dtformer/volume.hpp"

#include <Eigen/Core>

#include <span>
#include <string_view>
#include <vector>

namespace dtf {

enum class Weighting {
  Uniform,
  /// w_i = s_i^2, the inverse of the approximate variance of ln(s_i).
  SignalSquared,
};

struct FitResult {
  DiffusionTensor tensor;
  /// Norm of the residual of the fitter's own objective.
  double residual_norm = 0.0;
  /// Accepted Levenberg-Marquardt steps; 0 for linear fits.
  int iterations = 0;
  bool converged = true;
  bool constrained_projection_applied = false;
  bool signals_clamped = false;
};

struct FitOptions {
  /// Replace signals <= 0 with 1e-6 * s0 before the log transform instead of
  /// failing with a log-domain error.
  bool clamp_nonpositive = false;
};

struct CnlsConfig {
  double initial_damping = 1e-3;
  double damping_factor = 10.0;
  int max_iterations = 100;
  double relative_tolerance = 1e-10;
  /// Cosine between the residual and any Jacobian column below which the
  /// start point counts as stationary.
  double gradient_tolerance = 1e-10;
};

/// Eigenvalue floor applied by the constrained linear fit.
inline constexpr double kPositivityFloor = 1e-7;

/// Log-linear least squares. `signals` are the b > 0 measurements in design
/// row order.
FitResult fit_ols(std::span<const double> signals, double s0, const DesignMatrix& design, FitOptions options = {});

/// Weighted log-linear least squares followed by eigenvalue clamping when the
/// estimate has a negative eigenvalue.
FitResult fit_wlls_constrained(std::span<const double> signals, double s0, const DesignMatrix& design,
                               Weighting weighting = Weighting::SignalSquared, FitOptions options = {});

/// Nonlinear least squares on the signals with D = L L^T, solved by
/// Levenberg-Marquardt from the constrained WLLS estimate. When `objective_trace`
/// is given, the objective after initialization and after every accepted step
/// is appended.
FitResult fit_cnls(std::span<const double> signals, double s0, const DesignMatrix& design,
                   const CnlsConfig& config = {}, FitOptions options = {},
                   std::vector<double>* objective_trace = nullptr);

/// Objectives evaluated at an arbitrary tensor; each fitter minimizes its own.
double ols_objective(const DiffusionTensor& t, std::span<const double> signals, double s0, const DesignMatrix& design);
double wlls_objective(const DiffusionTensor& t, std::span<const double> signals, double s0,
                      const DesignMatrix& design, Weighting weighting = Weighting::SignalSquared);
double nls_objective(const DiffusionTensor& t, std::span<const double> signals, double s0, const DesignMatrix& design);

enum class FitMethod { Ols, Cwlls, Cnls };
FitMethod parse_fit_method(std::string_view name);
const char* fit_method_name(FitMethod m) noexcept;

/// Fit every voxel of a DWI volume whose channels follow `scheme`. Voxels with
/// a non-positive b = 0 signal are background and get a zero tensor.
/// Non-positive diffusion-weighted signals are clamped.
Volume4D fit_volume(const Volume4D& dwi, const GradientScheme& scheme, FitMethod method, const CnlsConfig& cnls = {});

} // namespace dtf
