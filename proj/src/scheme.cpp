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

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace dtf {

GradientScheme::GradientScheme(std::vector<Vec3> directions, std::vector<double> bvalues,
                               std::optional<std::size_t> b0_index)
    : directions_(std::move(directions)), bvalues_(std::move(bvalues))
{
  if (directions_.size() != bvalues_.size())
    throw Error(ErrorCode::InvalidScheme, "scheme: " + std::to_string(directions_.size()) + " directions but " +
                                              std::to_string(bvalues_.size()) + " b-values");
  for (std::size_t i = 0; i < bvalues_.size(); ++i) {
    const double b = bvalues_[i];
    if (!std::isfinite(b) || b < 0.0)
      throw Error(ErrorCode::InvalidScheme, "scheme: invalid b-value at entry " + std::to_string(i));
    if (b == 0.0) {
      if (!b0_index_ && !b0_index) b0_index_ = i;
      continue;
    }
    Vec3& g = directions_[i];
    const double n = g.norm();
    if (!std::isfinite(n) || n < 1e-3)
      throw Error(ErrorCode::InvalidScheme, "scheme: direction " + std::to_string(i) + " cannot be normalized");
    g /= n;
    if (std::abs(g.norm() - 1.0) > 1e-6)
      throw Error(ErrorCode::InvalidScheme, "scheme: direction " + std::to_string(i) + " is not unit after renormalization");
    weighted_.push_back(i);
  }
  if (b0_index) {
    if (*b0_index >= bvalues_.size() || bvalues_[*b0_index] != 0.0)
      throw Error(ErrorCode::InvalidScheme, "scheme: designated normalization entry is not a b=0 measurement");
    b0_index_ = b0_index;
  }
}

GradientScheme skare6_scheme(double bvalue, bool with_b0)
{
  std::vector<Vec3> dirs = {
      {0.910, 0.416, 0.000}, {0.910, -0.416, 0.000}, {0.416, 0.000, 0.910},
      {-0.416, 0.000, 0.910}, {0.000, 0.910, 0.416}, {0.000, 0.910, -0.416},
  };
  std::vector<double> b(6, bvalue);
  if (with_b0) {
    dirs.insert(dirs.begin(), Vec3::Zero());
    b.insert(b.begin(), 0.0);
  }
  return GradientScheme(std::move(dirs), std::move(b));
}

GradientScheme uniform_scheme(std::size_t count, double bvalue)
{
  std::vector<Vec3> dirs = {Vec3::Zero()};
  std::vector<double> b = {0.0};
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < count; ++i) {
    // Upper hemisphere only: antipodal directions are redundant for DTI.
    const double z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(count);
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * static_cast<double>(i);
    dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    b.push_back(bvalue);
  }
  return GradientScheme(std::move(dirs), std::move(b));
}

namespace {

std::vector<std::vector<double>> parse_rows(const std::string& text, const char* what)
{
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    for (char& c : line)
      if (c == ',' || c == '\t' || c == '\r') c = ' ';
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(ErrorCode::Format, std::string(what) + ": not a number: '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

std::string read_text(const std::string& path)
{
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

} // namespace

GradientScheme parse_fsl_scheme(const std::string& bvec_text, const std::string& bval_text)
{
  auto bvec = parse_rows(bvec_text, "bvec");
  auto bval = parse_rows(bval_text, "bval");

  std::vector<double> b;
  for (const auto& row : bval) b.insert(b.end(), row.begin(), row.end());

  std::vector<Vec3> dirs;
  if (bvec.size() == 3 && bvec[0].size() == bvec[1].size() && bvec[1].size() == bvec[2].size()) {
    for (std::size_t j = 0; j < bvec[0].size(); ++j) dirs.emplace_back(bvec[0][j], bvec[1][j], bvec[2][j]);
  } else if (!bvec.empty() && std::all_of(bvec.begin(), bvec.end(), [](const auto& r) { return r.size() == 3; })) {
    // Column layout (one direction per line), as written by some converters.
    for (const auto& r : bvec) dirs.emplace_back(r[0], r[1], r[2]);
  } else {
    throw Error(ErrorCode::Format, "bvec: expected 3 rows of equal length");
  }
  return GradientScheme(std::move(dirs), std::move(b));
}

GradientScheme load_fsl_scheme(const std::string& bvec_path, const std::string& bval_path)
{
  return parse_fsl_scheme(read_text(bvec_path), read_text(bval_path));
}

void save_fsl_scheme(const GradientScheme& scheme, const std::string& bvec_path, const std::string& bval_path)
{
  std::ofstream vec(bvec_path);
  std::ofstream val(bval_path);
  if (!vec || !val) throw Error(ErrorCode::Io, "cannot write scheme to " + bvec_path);
  vec << std::setprecision(17);
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t i = 0; i < scheme.size(); ++i) vec << (i ? " " : "") << scheme.directions()[i][axis];
    vec << '\n';
  }
  val << std::setprecision(17);
  for (std::size_t i = 0; i < scheme.size(); ++i) val << (i ? " " : "") << scheme.bvalues()[i];
  val << '\n';
}

Eigen::Matrix<double, 1, 6> design_row(const Vec3& g, double b) noexcept
{
  Eigen::Matrix<double, 1, 6> r;
  r << b * g.x() * g.x(), b * g.y() * g.y(), b * g.z() * g.z(), 2 * b * g.x() * g.y(), 2 * b * g.x() * g.z(),
      2 * b * g.y() * g.z();
  return r;
}

DesignMatrix build_design_matrix(const GradientScheme& scheme)
{
  DesignMatrix d;
  const auto& idx = scheme.weighted_indices();
  d.rows.resize(static_cast<Eigen::Index>(idx.size()), 6);
  for (std::size_t r = 0; r < idx.size(); ++r)
    d.rows.row(static_cast<Eigen::Index>(r)) = design_row(scheme.directions()[idx[r]], scheme.bvalues()[idx[r]]);
  d.scheme_indices = idx;
  return d;
}

double condition_number(const DesignRows& rows)
{
  if (rows.rows() < 6) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(rows);
  const auto& s = svd.singularValues();
  const double smin = s[s.size() - 1];
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return s[0] / smin;
}

Eigen::VectorXd predict_signals(const DiffusionTensor& tensor, const DesignMatrix& design, double s0)
{
  Eigen::Matrix<double, 6, 1> d;
  const auto e = tensor.elements();
  for (int i = 0; i < 6; ++i) d[i] = e[static_cast<std::size_t>(i)];
  Eigen::VectorXd s = design.rows * d;
  return s0 * (-s.array()).exp().matrix();
}

Eigen::VectorXd predict_signals(const DiffusionTensor& tensor, const GradientScheme& scheme, double s0)
{
  return predict_signals(tensor, build_design_matrix(scheme), s0);
}

} // namespace dtf
