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
#include "dtformer/parallel.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <string>

namespace dtf {

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

constexpr double kMaxCondition = 1e12;

void check_design(const DesignMatrix& design)
{
  if (design.measurements() < 6)
    throw Error(ErrorCode::InsufficientMeasurements,
                "fit: need at least 6 diffusion-weighted measurements, got " + std::to_string(design.measurements()));
  const double cond = condition_number(design.rows);
  if (!(cond <= kMaxCondition))
    throw Error(ErrorCode::SingularDesign, "fit: design matrix is rank deficient (condition number " +
                                               std::to_string(cond) + ")");
}

Vec6 to_vec(const DiffusionTensor& t)
{
  Vec6 v;
  v << t.xx, t.yy, t.zz, t.xy, t.xz, t.yz;
  return v;
}

DiffusionTensor from_vec(const Vec6& v) { return {v[0], v[1], v[2], v[3], v[4], v[5]}; }

/// Measured signals with non-positive entries optionally clamped.
Eigen::VectorXd prepare_signals(std::span<const double> signals, double s0, const DesignMatrix& design,
                                FitOptions options, bool& clamped)
{
  if (static_cast<Eigen::Index>(signals.size()) != design.measurements())
    throw ShapeError("fit", "got " + std::to_string(signals.size()) + " signals for " +
                                std::to_string(design.measurements()) + " design rows");
  if (!(s0 > 0.0) || !std::isfinite(s0)) throw Error(ErrorCode::LogDomain, "fit: s0 must be positive");
  Eigen::VectorXd s(static_cast<Eigen::Index>(signals.size()));
  clamped = false;
  for (std::size_t i = 0; i < signals.size(); ++i) {
    double v = signals[i];
    if (!std::isfinite(v)) throw Error(ErrorCode::LogDomain, "fit: non-finite signal");
    if (v <= 0.0) {
      if (!options.clamp_nonpositive) throw Error(ErrorCode::LogDomain, "fit: non-positive signal");
      v = 1e-6 * s0;
      clamped = true;
    }
    s[static_cast<Eigen::Index>(i)] = v;
  }
  return s;
}

Eigen::VectorXd neg_log_ratio(const Eigen::VectorXd& s, double s0) { return -(s.array() / s0).log().matrix(); }

Vec6 weighted_solve(const DesignRows& b, const Eigen::VectorXd& rhs, const Eigen::VectorXd* weights)
{
  if (!weights) return b.colPivHouseholderQr().solve(rhs);
  const Eigen::VectorXd sw = weights->array().sqrt().matrix();
  const DesignRows wb = sw.asDiagonal() * b;
  const Eigen::VectorXd wr = sw.cwiseProduct(rhs);
  return wb.colPivHouseholderQr().solve(wr);
}

Eigen::VectorXd weights_for(const Eigen::VectorXd& s, Weighting weighting)
{
  if (weighting == Weighting::Uniform) return Eigen::VectorXd::Ones(s.size());
  return s.array().square().matrix();
}

FitResult ols_impl(std::span<const double> signals, double s0, const DesignMatrix& design, FitOptions options)
{
  FitResult r;
  const Eigen::VectorXd s = prepare_signals(signals, s0, design, options, r.signals_clamped);
  const Eigen::VectorXd rhs = neg_log_ratio(s, s0);
  const Vec6 d = weighted_solve(design.rows, rhs, nullptr);
  r.tensor = from_vec(d);
  r.residual_norm = (design.rows * d - rhs).norm();
  return r;
}

FitResult wlls_impl(std::span<const double> signals, double s0, const DesignMatrix& design, Weighting weighting,
                    FitOptions options)
{
  FitResult r;
  const Eigen::VectorXd s = prepare_signals(signals, s0, design, options, r.signals_clamped);
  const Eigen::VectorXd rhs = neg_log_ratio(s, s0);
  const Eigen::VectorXd w = weights_for(s, weighting);
  const Vec6 d = weighted_solve(design.rows, rhs, &w);
  r.tensor = from_vec(d);
  r.residual_norm = (w.array().sqrt() * (design.rows * d - rhs).array()).matrix().norm();

  if (eigendecompose(r.tensor).values.minCoeff() < 0.0) {
    r.tensor = clamp_eigenvalues(r.tensor, kPositivityFloor);
    r.constrained_projection_applied = true;
    r.residual_norm = (w.array().sqrt() * (design.rows * to_vec(r.tensor) - rhs).array()).matrix().norm();
  }
  return r;
}

// Lower-triangular factor packed as [l00, l10, l11, l20, l21, l22].
Vec6 tensor_from_cholesky(const Vec6& l)
{
  Vec6 d;
  d << l[0] * l[0], l[1] * l[1] + l[2] * l[2], l[3] * l[3] + l[4] * l[4] + l[5] * l[5], l[0] * l[1], l[0] * l[3],
      l[1] * l[3] + l[2] * l[4];
  return d;
}

Mat6 cholesky_jacobian(const Vec6& l)
{
  Mat6 j = Mat6::Zero();
  j(0, 0) = 2 * l[0];
  j(1, 1) = 2 * l[1];
  j(1, 2) = 2 * l[2];
  j(2, 3) = 2 * l[3];
  j(2, 4) = 2 * l[4];
  j(2, 5) = 2 * l[5];
  j(3, 0) = l[1];
  j(3, 1) = l[0];
  j(4, 0) = l[3];
  j(4, 3) = l[0];
  j(5, 1) = l[3];
  j(5, 2) = l[4];
  j(5, 3) = l[1];
  j(5, 4) = l[2];
  return j;
}

Vec6 cholesky_start(const DiffusionTensor& t)
{
  Mat3 m = t.matrix();
  Eigen::LLT<Mat3> llt(m);
  if (llt.info() != Eigen::Success) {
    const EigenSystem eig = eigendecompose(t);
    Vec3 vals = eig.values;
    const double floor = std::max(1e-6 * std::abs(vals[0]), 1e-12);
    for (int i = 0; i < 3; ++i) vals[i] = std::max(vals[i], floor);
    m = eig.vectors * vals.asDiagonal() * eig.vectors.transpose();
    llt.compute(m);
  }
  const Mat3 l = llt.matrixL();
  Vec6 out;
  out << l(0, 0), l(1, 0), l(1, 1), l(2, 0), l(2, 1), l(2, 2);
  return out;
}

double sum_sq(const Eigen::VectorXd& r) { return r.squaredNorm(); }

FitResult cnls_impl(std::span<const double> signals, double s0, const DesignMatrix& design, const CnlsConfig& cfg,
                    FitOptions options, std::vector<double>* trace)
{
  FitResult init = wlls_impl(signals, s0, design, Weighting::SignalSquared, options);
  bool clamped = false;
  const Eigen::VectorXd s = prepare_signals(signals, s0, design, options, clamped);
  const DesignRows& b = design.rows;

  auto residual = [&](const Vec6& l) -> Eigen::VectorXd {
    const Eigen::VectorXd pred = s0 * (-(b * tensor_from_cholesky(l)).array()).exp().matrix();
    return s - pred;
  };

  Vec6 l = cholesky_start(init.tensor);
  Eigen::VectorXd r = residual(l);
  double f = sum_sq(r);
  if (trace) trace->push_back(f);

  FitResult out;
  out.signals_clamped = clamped;
  double damping = cfg.initial_damping;
  int accepted = 0;
  int attempts = 0;
  // Residuals at round-off level of the data carry no usable direction.
  const double floor_sq = std::pow(1e-13 * s.norm(), 2);
  bool converged = (f <= floor_sq);

  while (!converged && attempts < cfg.max_iterations) {
    // r = s - s0 exp(-B D(l)); dr/dl = diag(pred) * B * dD/dl.
    const Eigen::VectorXd pred = s - r;
    const Eigen::MatrixXd jac = pred.asDiagonal() * (b * cholesky_jacobian(l));
    const Vec6 grad = jac.transpose() * r;
    Mat6 jtj = jac.transpose() * jac;
    Vec6 diag = jtj.diagonal();

    // Scale-free stationarity test: largest cosine between r and a column of J.
    const double rn = r.norm();
    double max_cos = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double cn = std::sqrt(diag[k]);
      if (cn > 0.0 && rn > 0.0) max_cos = std::max(max_cos, std::abs(grad[k]) / (cn * rn));
    }
    if (max_cos < cfg.gradient_tolerance) {
      converged = true;
      break;
    }

    const double dmax = diag.maxCoeff();
    for (int k = 0; k < 6; ++k) diag[k] = std::max(diag[k], 1e-12 * dmax);

    ++attempts;
    Mat6 lhs = jtj;
    lhs.diagonal() += damping * diag;
    const Vec6 step = lhs.ldlt().solve(-grad);
    const Vec6 candidate = l + step;
    const Eigen::VectorXd rc = residual(candidate);
    const double fc = sum_sq(rc);
    if (std::isfinite(fc) && fc < f) {
      const double rel = (f - fc) / f;
      l = candidate;
      r = rc;
      f = fc;
      ++accepted;
      if (trace) trace->push_back(f);
      damping /= cfg.damping_factor;
      if (rel < cfg.relative_tolerance || f <= floor_sq) converged = true;
    } else {
      damping *= cfg.damping_factor;
      if (damping > 1e16) converged = true; // no descent direction left at working precision
    }
  }

  out.tensor = from_vec(tensor_from_cholesky(l));
  out.residual_norm = std::sqrt(f);
  out.converged = converged;
  out.iterations = converged ? accepted : cfg.max_iterations;
  return out;
}

} // namespace

FitResult fit_ols(std::span<const double> signals, double s0, const DesignMatrix& design, FitOptions options)
{
  check_design(design);
  return ols_impl(signals, s0, design, options);
}

FitResult fit_wlls_constrained(std::span<const double> signals, double s0, const DesignMatrix& design,
                               Weighting weighting, FitOptions options)
{
  check_design(design);
  return wlls_impl(signals, s0, design, weighting, options);
}

FitResult fit_cnls(std::span<const double> signals, double s0, const DesignMatrix& design, const CnlsConfig& config,
                   FitOptions options, std::vector<double>* objective_trace)
{
  check_design(design);
  return cnls_impl(signals, s0, design, config, options, objective_trace);
}

double ols_objective(const DiffusionTensor& t, std::span<const double> signals, double s0, const DesignMatrix& design)
{
  bool clamped = false;
  const Eigen::VectorXd s = prepare_signals(signals, s0, design, {}, clamped);
  return (design.rows * to_vec(t) - neg_log_ratio(s, s0)).norm();
}

double wlls_objective(const DiffusionTensor& t, std::span<const double> signals, double s0,
                      const DesignMatrix& design, Weighting weighting)
{
  bool clamped = false;
  const Eigen::VectorXd s = prepare_signals(signals, s0, design, {}, clamped);
  const Eigen::VectorXd w = weights_for(s, weighting);
  return (w.array().sqrt() * (design.rows * to_vec(t) - neg_log_ratio(s, s0)).array()).matrix().norm();
}

double nls_objective(const DiffusionTensor& t, std::span<const double> signals, double s0, const DesignMatrix& design)
{
  Eigen::Map<const Eigen::VectorXd> s(signals.data(), static_cast<Eigen::Index>(signals.size()));
  return (s - predict_signals(t, design, s0)).norm();
}

FitMethod parse_fit_method(std::string_view name)
{
  if (name == "ols") return FitMethod::Ols;
  if (name == "cwlls") return FitMethod::Cwlls;
  if (name == "cnls") return FitMethod::Cnls;
  throw Error(ErrorCode::InvalidArgument, "unknown fit method '" + std::string(name) + "'");
}

const char* fit_method_name(FitMethod m) noexcept
{
  switch (m) {
  case FitMethod::Ols: return "ols";
  case FitMethod::Cwlls: return "cwlls";
  case FitMethod::Cnls: return "cnls";
  }
  return "?";
}

Volume4D fit_volume(const Volume4D& dwi, const GradientScheme& scheme, FitMethod method, const CnlsConfig& cnls)
{
  if (dwi.channels() != scheme.size())
    throw ShapeError("fit_volume", "volume has " + std::to_string(dwi.channels()) + " channels, scheme has " +
                                       std::to_string(scheme.size()) + " entries");
  const auto b0 = scheme.b0_index();
  if (!b0) throw Error(ErrorCode::InvalidScheme, "fit_volume: scheme has no b=0 measurement");
  const DesignMatrix design = build_design_matrix(scheme);
  check_design(design);

  Volume4D out(dwi.dims(), 6);
  out.voxel_size = dwi.voxel_size;
  const FitOptions options{.clamp_nonpositive = true};
  parallel_for(dwi.voxel_count(), [&](std::size_t v) {
    const auto in = dwi.voxel(v);
    const double s0 = in[*b0];
    if (!(s0 > 0.0)) return;
    std::vector<double> sig(design.scheme_indices.size());
    for (std::size_t k = 0; k < sig.size(); ++k) sig[k] = in[design.scheme_indices[k]];
    FitResult r;
    switch (method) {
    case FitMethod::Ols: r = ols_impl(sig, s0, design, options); break;
    case FitMethod::Cwlls: r = wlls_impl(sig, s0, design, Weighting::SignalSquared, options); break;
    case FitMethod::Cnls: r = cnls_impl(sig, s0, design, cnls, options, nullptr); break;
    }
    const auto e = r.tensor.elements();
    std::copy(e.begin(), e.end(), out.voxel(v).begin());
  });
  return out;
}

} // namespace dtf
