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

#include "dtformer/eval/metrics.hpp"

#include "dtformer/errors.hpp"
#include "dtformer/parallel.hpp"
#include "dtformer/phantom.hpp"
#include "dtformer/tensor.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace dtf::eval {
namespace {

struct VoxelErrors {
  double tensor = 0, md = 0, fa = 0, angle = 0;
  bool has_angle = false;
};

struct Accum {
  double tensor = 0, md = 0, fa = 0, angle = 0;
  std::size_t n = 0, n_angle = 0;

  void add(const VoxelErrors& e)
  {
    tensor += e.tensor;
    md += e.md;
    fa += e.fa;
    ++n;
    if (e.has_angle) {
      angle += e.angle;
      ++n_angle;
    }
  }

  MetricSet finish() const
  {
    MetricSet m;
    m.voxels = n;
    m.angle_voxels = n_angle;
    if (n) {
      m.tensor_error = tensor / static_cast<double>(n);
      m.md_error = md / static_cast<double>(n);
      m.fa_error = fa / static_cast<double>(n);
    }
    if (n_angle) m.angle_error_deg = angle / static_cast<double>(n_angle);
    return m;
  }
};

DiffusionTensor tensor_at(const Volume4D& v, std::size_t i)
{
  const auto e = v.voxel(i);
  return DiffusionTensor::from_elements(std::span<const double, 6>(e.data(), 6));
}

void check_mask(const Volume4D& ref, const Volume4D* mask, const char* op)
{
  if (mask && (!mask->same_grid(ref) || mask->channels() != 1))
    throw ShapeError(op, "mask grid does not match the data");
}

nlohmann::json metric_json(const MetricSet& m)
{
  return {{"tensor_error", m.tensor_error},
          {"md_error", m.md_error},
          {"fa_error", m.fa_error},
          {"angle_error_deg", m.angle_error_deg},
          {"voxels", m.voxels},
          {"angle_voxels", m.angle_voxels}};
}

std::string region_label_name(int label)
{
  if (label >= 0 && label <= 3) return region_name(static_cast<Region>(label));
  return "label" + std::to_string(label);
}

} // namespace

nlohmann::json MetricsReport::to_json() const
{
  nlohmann::json j{{"method", method},
                   {"units", {{"tensor_error", "mm^2/s"}, {"md_error", "mm^2/s"}, {"fa_error", "1"}, {"angle_error_deg", "degrees"}}},
                   {"angle_fa_threshold", angle_fa_threshold},
                   {"overall", metric_json(overall)},
                   {"regions", nlohmann::json::array()}};
  for (const auto& r : regions) {
    auto e = metric_json(r.metrics);
    e["label"] = r.label;
    e["name"] = r.name;
    j["regions"].push_back(e);
  }
  return j;
}

MetricsReport compare_volumes(const Volume4D& pred, const Volume4D& ref, const Volume4D* mask, const Volume4D* labels,
                              std::string method, double angle_fa_threshold)
{
  if (pred.channels() != 6 || ref.channels() != 6) throw ShapeError("compare_volumes", "tensor volumes need 6 channels");
  if (!pred.same_grid(ref)) throw ShapeError("compare_volumes", "prediction and reference grids differ");
  check_mask(ref, mask, "compare_volumes");
  if (labels && (!labels->same_grid(ref) || labels->channels() != 1))
    throw ShapeError("compare_volumes", "label grid does not match the data");

  const std::size_t n = ref.voxel_count();
  std::vector<VoxelErrors> errs(n);
  std::vector<char> used(n, 0);
  parallel_for(n, [&](std::size_t v) {
    if (mask && mask->at(v, 0) == 0.0) return;
    used[v] = 1;
    const DiffusionTensor p = tensor_at(pred, v), r = tensor_at(ref, v);
    VoxelErrors& e = errs[v];
    const auto pe = p.elements(), re = r.elements();
    for (int i = 0; i < 6; ++i) e.tensor += std::abs(pe[i] - re[i]);
    const EigenSystem ps = eigendecompose(p), rs = eigendecompose(r);
    e.md = std::abs(p.trace() - r.trace()) / 3.0;
    const double rfa = fractional_anisotropy(rs);
    e.fa = std::abs(fractional_anisotropy(ps) - rfa);
    if (rfa > angle_fa_threshold) {
      e.angle = angular_error_deg(ps.principal(), rs.principal());
      e.has_angle = true;
    }
  });

  Accum all;
  std::map<int, Accum> by_label;
  for (std::size_t v = 0; v < n; ++v) {
    if (!used[v]) continue;
    all.add(errs[v]);
    if (labels) by_label[static_cast<int>(std::lround(labels->at(v, 0)))].add(errs[v]);
  }
  if (all.n == 0) throw Error(ErrorCode::InvalidArgument, "compare_volumes: mask selects no voxels");

  MetricsReport rep;
  rep.method = std::move(method);
  rep.angle_fa_threshold = angle_fa_threshold;
  rep.overall = all.finish();
  for (const auto& [label, acc] : by_label) rep.regions.push_back({label, region_label_name(label), acc.finish()});
  return rep;
}

std::string reports_to_csv(const std::vector<MetricsReport>& reports)
{
  std::ostringstream out;
  out.precision(17);
  out << "method,region,metric,value\n";
  auto emit = [&out](const std::string& method, const std::string& region, const MetricSet& m) {
    out << method << ',' << region << ",tensor_error," << m.tensor_error << '\n';
    out << method << ',' << region << ",md_error," << m.md_error << '\n';
    out << method << ',' << region << ",fa_error," << m.fa_error << '\n';
    out << method << ',' << region << ",angle_error_deg," << m.angle_error_deg << '\n';
    out << method << ',' << region << ",voxels," << m.voxels << '\n';
  };
  for (const auto& r : reports) {
    emit(r.method, "all", r.overall);
    for (const auto& g : r.regions) emit(r.method, g.name, g.metrics);
  }
  return out.str();
}

ScalarMap parse_scalar_map(std::string_view name)
{
  if (name == "fa" || name == "FA") return ScalarMap::Fa;
  if (name == "md" || name == "MD") return ScalarMap::Md;
  throw Error(ErrorCode::InvalidArgument, "unknown scalar map '" + std::string(name) + "' (fa|md)");
}

Volume4D scalar_map(const Volume4D& tensors, ScalarMap which)
{
  if (tensors.channels() != 6) throw ShapeError("scalar_map", "tensor volume needs 6 channels");
  Volume4D out(tensors.dims(), 1);
  out.voxel_size = tensors.voxel_size;
  parallel_for(tensors.voxel_count(), [&](std::size_t v) {
    const DiffusionTensor t = tensor_at(tensors, v);
    out.at(v, 0) = which == ScalarMap::Md ? t.trace() / 3.0 : fractional_anisotropy(eigendecompose(t));
  });
  return out;
}

std::string BlandAltman::to_csv() const
{
  std::ostringstream out;
  out.precision(17);
  out << "mean,diff\n";
  for (const auto& [m, d] : rows) out << m << ',' << d << '\n';
  return out.str();
}

nlohmann::json BlandAltman::summary() const
{
  return {{"count", rows.size()}, {"bias", bias}, {"sd", sd}, {"lower_limit", lower}, {"upper_limit", upper}};
}

BlandAltman bland_altman(const Volume4D& pred, const Volume4D& ref, const Volume4D* mask)
{
  if (pred.channels() != 1 || ref.channels() != 1) throw ShapeError("bland_altman", "scalar volumes need 1 channel");
  if (!pred.same_grid(ref)) throw ShapeError("bland_altman", "prediction and reference grids differ");
  check_mask(ref, mask, "bland_altman");
  BlandAltman ba;
  for (std::size_t v = 0; v < ref.voxel_count(); ++v) {
    if (mask && mask->at(v, 0) == 0.0) continue;
    const double p = pred.at(v, 0), r = ref.at(v, 0);
    ba.rows.emplace_back(0.5 * (p + r), p - r);
  }
  if (ba.rows.empty()) throw Error(ErrorCode::InvalidArgument, "bland_altman: mask selects no voxels");
  double sum = 0;
  for (const auto& row : ba.rows) sum += row.second;
  ba.bias = sum / static_cast<double>(ba.rows.size());
  double ss = 0;
  for (const auto& row : ba.rows) ss += (row.second - ba.bias) * (row.second - ba.bias);
  ba.sd = ba.rows.size() > 1 ? std::sqrt(ss / static_cast<double>(ba.rows.size() - 1)) : 0.0;
  ba.lower = ba.bias - 1.96 * ba.sd;
  ba.upper = ba.bias + 1.96 * ba.sd;
  return ba;
}

} // namespace dtf::eval
