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

#include "dtformer/phantom.hpp"

#include "dtformer/errors.hpp"
#include "dtformer/parallel.hpp"
#include "dtformer/random.hpp"
#include "dtformer/tensor.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <string>

namespace dtf {

RegionModel parse_region_model(std::string_view name)
{
  if (name == "layered") return RegionModel::Layered;
  if (name == "curved-tract") return RegionModel::CurvedTract;
  throw Error(ErrorCode::InvalidArgument, "unknown region model '" + std::string(name) + "'");
}

const char* region_model_name(RegionModel m) noexcept
{
  return m == RegionModel::Layered ? "layered" : "curved-tract";
}

const char* region_name(Region r) noexcept
{
  switch (r) {
  case Region::Background: return "background";
  case Region::WhiteMatter: return "wm";
  case Region::GrayMatter: return "gm";
  case Region::Csf: return "csf";
  }
  return "?";
}

namespace {

/// Cylindrical eigenvalues (l1, l2, l2) with the requested MD and FA.
Vec3 cylindrical_eigenvalues(double md, double fa)
{
  const double k = fa / std::sqrt(3.0 - 2.0 * fa * fa);
  return {md * (1.0 + 2.0 * k), md * (1.0 - k), md * (1.0 - k)};
}

/// Random values on a coarse grid with trilinear interpolation in between.
class ControlGrid {
public:
  ControlGrid(const Dims& dims, double spacing) : spacing_(spacing)
  {
    for (int a = 0; a < 3; ++a)
      n_[a] = static_cast<std::size_t>(std::floor(static_cast<double>(dims[a] - 1) / spacing)) + 2;
  }

  std::size_t size() const { return n_[0] * n_[1] * n_[2]; }
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * n_[1] + j) * n_[2] + k; }

  /// Calls f(control_index, weight) for the 8 corners around voxel (x, y, z).
  template <class F>
  void corners(std::size_t x, std::size_t y, std::size_t z, F&& f) const
  {
    const std::array<double, 3> g = {x / spacing_, y / spacing_, z / spacing_};
    std::array<std::size_t, 3> i0;
    std::array<double, 3> t;
    for (int a = 0; a < 3; ++a) {
      i0[a] = std::min(static_cast<std::size_t>(std::floor(g[a])), n_[a] - 2);
      t[a] = g[a] - static_cast<double>(i0[a]);
    }
    for (int c = 0; c < 8; ++c) {
      const int dx = c >> 2, dy = (c >> 1) & 1, dz = c & 1;
      const double w = (dx ? t[0] : 1 - t[0]) * (dy ? t[1] : 1 - t[1]) * (dz ? t[2] : 1 - t[2]);
      if (w == 0.0) continue;
      f(index(i0[0] + dx, i0[1] + dy, i0[2] + dz), w);
    }
  }

private:
  double spacing_;
  std::array<std::size_t, 3> n_{};
};

struct ScalarField {
  ControlGrid grid;
  std::vector<double> values;

  ScalarField(const Dims& dims, double spacing, std::uint64_t seed, std::uint64_t sub) : grid(dims, spacing)
  {
    values.resize(grid.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = uniform_pair(seed, stream_id(Stream::PhantomField, sub), i)[0];
  }

  double at(std::size_t x, std::size_t y, std::size_t z) const
  {
    double s = 0;
    grid.corners(x, y, z, [&](std::size_t c, double w) { s += w * values[c]; });
    return s;
  }
};

/// Axis field: interpolates the sign-free orientation matrices v v^T of random
/// control directions and returns the principal axis.
struct AxisField {
  ControlGrid grid;
  std::vector<Vec3> axes;

  AxisField(const Dims& dims, double spacing, std::uint64_t seed, std::uint64_t sub) : grid(dims, spacing)
  {
    axes.resize(grid.size());
    for (std::size_t i = 0; i < axes.size(); ++i) {
      Vec3 v;
      do {
        const auto a = normal_pair(seed, stream_id(Stream::PhantomField, sub), 2 * i);
        const auto b = normal_pair(seed, stream_id(Stream::PhantomField, sub + 1), 2 * i);
        v = Vec3(a[0], a[1], b[0]);
        if (v.norm() < 1e-6) v = Vec3(b[1], a[1], a[0]);
      } while (v.norm() < 1e-6);
      axes[i] = v.normalized();
    }
  }

  Mat3 orientation(std::size_t x, std::size_t y, std::size_t z) const
  {
    Mat3 m = Mat3::Zero();
    grid.corners(x, y, z, [&](std::size_t c, double w) { m += w * axes[c] * axes[c].transpose(); });
    return m;
  }
};

/// Rotation whose first column is `axis`.
Mat3 frame_from_axis(const Vec3& axis)
{
  const Vec3 a = axis.normalized();
  const Vec3 helper = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 b = a.cross(helper).normalized();
  const Vec3 c = a.cross(b);
  Mat3 r;
  r.col(0) = a;
  r.col(1) = b;
  r.col(2) = c;
  return r;
}

struct TractGeometry {
  Vec3 center;
  double ring1_radius, tube1_radius;
  double ring2_radius, tube2_radius;
  Vec3 line_point, line_dir;
  double tube3_radius;
  Vec3 csf_axes;
};

TractGeometry sample_geometry(std::uint64_t seed)
{
  RandomStream rng(seed, stream_id(Stream::PhantomGeometry));
  auto jitter = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  TractGeometry g;
  g.center = Vec3(jitter(0.45, 0.55), jitter(0.45, 0.55), jitter(0.45, 0.55));
  g.ring1_radius = jitter(0.28, 0.36);
  g.tube1_radius = jitter(0.08, 0.12);
  g.ring2_radius = jitter(0.20, 0.28);
  g.tube2_radius = jitter(0.07, 0.10);
  g.line_point = Vec3(jitter(0.2, 0.8), jitter(0.15, 0.3), jitter(0.6, 0.85));
  g.line_dir = Vec3(rng.normal(), rng.normal(), 0.3 * rng.normal()).normalized();
  g.tube3_radius = jitter(0.06, 0.09);
  g.csf_axes = Vec3(jitter(0.10, 0.14), jitter(0.16, 0.22), jitter(0.10, 0.14));
  return g;
}

/// Region and (for white matter) the tract tangent at normalized position u.
Region curved_tract_region(const TractGeometry& g, const Vec3& u, Vec3& tangent)
{
  const Vec3 p = u - g.center;
  const Vec3 e = p.cwiseQuotient(g.csf_axes);
  if (e.squaredNorm() < 1.0) return Region::Csf;

  const double rho1 = std::hypot(p.x(), p.y());
  if (rho1 > 1e-9 && std::hypot(rho1 - g.ring1_radius, p.z()) < g.tube1_radius) {
    tangent = Vec3(-p.y(), p.x(), 0.0) / rho1;
    return Region::WhiteMatter;
  }
  const double rho2 = std::hypot(p.y(), p.z());
  if (rho2 > 1e-9 && std::hypot(rho2 - g.ring2_radius, p.x()) < g.tube2_radius) {
    tangent = Vec3(0.0, -p.z(), p.y()) / rho2;
    return Region::WhiteMatter;
  }
  const Vec3 q = u - g.line_point;
  if ((q - q.dot(g.line_dir) * g.line_dir).norm() < g.tube3_radius) {
    tangent = g.line_dir;
    return Region::WhiteMatter;
  }
  return Region::GrayMatter;
}

Region layered_region(double w)
{
  static constexpr Region kBands[] = {Region::GrayMatter, Region::WhiteMatter, Region::GrayMatter,
                                      Region::Csf,        Region::GrayMatter,  Region::WhiteMatter};
  const double f = std::clamp(w, 0.0, 0.999999);
  return kBands[static_cast<int>(f * 6.0)];
}

void check_range(const char* name, const RegionParams& r)
{
  if (!(r.md_min > 0 && r.md_max >= r.md_min && r.fa_min >= 0 && r.fa_max >= r.fa_min && r.fa_max < 1.0 &&
        r.s0_scale > 0))
    throw Error(ErrorCode::InvalidArgument, std::string("phantom: invalid ") + name + " parameters");
  if (cylindrical_eigenvalues(r.md_min, r.fa_max)[2] <= 0.0)
    throw Error(ErrorCode::InvalidArgument, std::string("phantom: ") + name + " range yields non-positive eigenvalues");
}

} // namespace

void PhantomSpec::validate() const
{
  if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
    throw Error(ErrorCode::InvalidArgument, "phantom: dimensions must be positive");
  if (!(length_scale >= 1.0)) throw Error(ErrorCode::InvalidArgument, "phantom: length scale must be >= 1");
  if (!(s0_amplitude > 0.0)) throw Error(ErrorCode::InvalidArgument, "phantom: s0 amplitude must be positive");
  check_range("white matter", white_matter);
  check_range("gray matter", gray_matter);
  check_range("csf", csf);
}

const RegionParams& PhantomSpec::params(Region r) const
{
  switch (r) {
  case Region::WhiteMatter: return white_matter;
  case Region::Csf: return csf;
  default: return gray_matter;
  }
}

Phantom generate_phantom(const PhantomSpec& spec)
{
  spec.validate();
  const Dims& d = spec.dims;
  const double ls = spec.length_scale;
  const ScalarField md_field(d, ls, spec.seed, 1);
  const ScalarField fa_field(d, ls, spec.seed, 2);
  const ScalarField s0_field(d, ls, spec.seed, 3);
  const ScalarField warp_field(d, std::max(ls, 4.0), spec.seed, 4);
  const AxisField axis_field(d, ls, spec.seed, 10);
  const TractGeometry geometry = sample_geometry(spec.seed);
  const double extent = static_cast<double>(std::max({d[0], d[1], d[2]}));

  Phantom ph{Volume4D(d, 6), Volume4D(d, 1), Volume4D(d, 1)};
  parallel_for(ph.tensors.voxel_count(), [&](std::size_t v) {
    const auto [x, y, z] = ph.tensors.voxel_coords(v);
    const Vec3 u((x + 0.5) / extent, (y + 0.5) / extent, (z + 0.5) / extent);

    Vec3 tangent = Vec3::Zero();
    Region region;
    if (spec.model == RegionModel::CurvedTract) {
      region = curved_tract_region(geometry, u, tangent);
    } else {
      const double w = (z + 0.5) / static_cast<double>(d[2]) + 0.08 * (warp_field.at(x, y, z) - 0.5);
      region = layered_region(w);
    }

    Mat3 orient = axis_field.orientation(x, y, z);
    if (region == Region::WhiteMatter && spec.model == RegionModel::CurvedTract)
      orient = tangent * tangent.transpose() + 0.15 * orient;
    const Vec3 axis = eigendecompose(orient).principal();

    const RegionParams& rp = spec.params(region);
    const double md = rp.md_min + (rp.md_max - rp.md_min) * md_field.at(x, y, z);
    const double fa = rp.fa_min + (rp.fa_max - rp.fa_min) * fa_field.at(x, y, z);
    const auto t = tensor_from_eigen(cylindrical_eigenvalues(md, fa), frame_from_axis(axis)).elements();
    std::copy(t.begin(), t.end(), ph.tensors.voxel(v).begin());
    ph.labels.at(v, 0) = static_cast<double>(static_cast<int>(region));
    ph.s0.at(v, 0) = spec.s0_amplitude * rp.s0_scale * (0.95 + 0.1 * s0_field.at(x, y, z));
  });
  return ph;
}

Volume4D synthesize_dwi(const Volume4D& tensors, const Volume4D& s0, const GradientScheme& scheme)
{
  if (tensors.channels() != 6) throw ShapeError("synthesize_dwi", "tensor volume must have 6 channels");
  if (s0.channels() != 1) throw ShapeError("synthesize_dwi", "s0 volume must have 1 channel");
  if (!tensors.same_grid(s0)) throw ShapeError("synthesize_dwi", "tensor and s0 grids differ");

  const DesignMatrix design = build_design_matrix(scheme);
  Volume4D out(tensors.dims(), scheme.size());
  out.voxel_size = tensors.voxel_size;
  parallel_for(tensors.voxel_count(), [&](std::size_t v) {
    const auto e = tensors.voxel(v);
    const auto t = DiffusionTensor::from_elements(std::span<const double, 6>(e.data(), 6));
    const double base = s0.at(v, 0);
    const Eigen::VectorXd sig = predict_signals(t, design, base);
    auto dst = out.voxel(v);
    for (std::size_t i = 0; i < scheme.size(); ++i)
      if (scheme.bvalues()[i] == 0.0) dst[i] = base;
    for (std::size_t r = 0; r < design.scheme_indices.size(); ++r)
      dst[design.scheme_indices[r]] = sig[static_cast<Eigen::Index>(r)];
  });
  return out;
}

double NoiseSpec::sigma() const
{
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  if (!std::isfinite(snr_db)) throw Error(ErrorCode::InvalidArgument, "noise: SNR must be finite or +inf");
  if (!(reference_amplitude > 0.0)) throw Error(ErrorCode::InvalidArgument, "noise: reference amplitude must be positive");
  return reference_amplitude / std::pow(10.0, snr_db / 20.0);
}

Volume4D add_rician_noise(const Volume4D& signals, const NoiseSpec& noise)
{
  const double sigma = noise.sigma();
  Volume4D out = signals;
  if (sigma == 0.0) return out;
  auto& data = out.data();
  const std::uint64_t stream = stream_id(Stream::RicianNoise);
  for (double v : data)
    if (v < 0.0) throw Error(ErrorCode::InvalidArgument, "noise: signals must be non-negative");
  parallel_for(signals.voxel_count(), [&](std::size_t v) {
    const std::size_t c = signals.channels();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t k = v * c + ch;
      const auto n = normal_pair(noise.seed, stream, k);
      data[k] = std::hypot(data[k] + sigma * n[0], sigma * n[1]);
    }
  });
  return out;
}

double reference_amplitude(const Volume4D& volume, std::size_t channel)
{
  if (channel >= volume.channels()) throw ShapeError("reference_amplitude", "channel out of range");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < volume.voxel_count(); ++v) {
    const double s = volume.at(v, channel);
    if (s > 0) {
      sum += s;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "reference_amplitude: no foreground voxels");
  return sum / static_cast<double>(n);
}

} // namespace dtf
