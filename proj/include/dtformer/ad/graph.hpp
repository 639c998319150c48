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

#include "dtformer/errors.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

namespace dtf::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Shape {
  Index rows = 0;
  Index cols = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const { return std::to_string(rows) + "x" + std::to_string(cols); }
};

/// A learnable array with its gradient buffer.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Shape shape() const { return {value.rows(), value.cols()}; }
};

/// Owns parameters at stable addresses so graphs can refer to them.
class ParameterSet {
public:
  Parameter& add(std::string name, Index rows, Index cols, bool trainable = true);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const noexcept;
  void zero_grad();
  /// Copies values from a set with identical names and shapes.
  void copy_values_from(const ParameterSet& other);

private:
  std::deque<Parameter> params_;
};

/// FNV-1a over names, shapes and the raw bytes of every value.
std::uint64_t parameter_hash(const ParameterSet& params);

struct NodeId {
  std::uint32_t index = 0;
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

enum class Op : std::uint8_t {
  Input,
  Param,
  Constant,
  MatMul,
  MatMulNT,
  Add,
  AddRow,
  MulRow,
  Scale,
  Softmax,
  LayerNorm,
  Relu,
  ConcatCols,
  Reshape,
  SumSquaredDiff,
};

const char* op_name(Op op) noexcept;

/// Static computation graph over dense row-major matrices.
///
/// Nodes are appended in topological order while the graph is built, and all
/// shapes are checked at that point. forward() evaluates every node from the
/// current inputs and parameter values; backward() walks the nodes in reverse,
/// accumulating gradients additively where a value fans out, and writes the
/// result into the gradient buffer of each trainable parameter (zeroed first).
class Graph {
public:
  NodeId input(std::string name, Index rows, Index cols, bool requires_grad = false);
  NodeId parameter(Parameter& p);
  NodeId constant(Matrix value);

  NodeId matmul(NodeId a, NodeId b);
  /// a * b^T
  NodeId matmul_nt(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  /// Adds a 1 x c row to every row of a.
  NodeId add_row(NodeId a, NodeId row);
  /// Multiplies every row of a elementwise by a 1 x c row.
  NodeId mul_row(NodeId a, NodeId row);
  NodeId scale(NodeId a, double factor);
  /// Row-wise softmax with the row maximum subtracted first.
  NodeId softmax_rows(NodeId a);
  /// Row-wise standardization to zero mean and unit variance (no affine).
  NodeId layer_norm_rows(NodeId a, double eps = 1e-5);
  NodeId relu(NodeId a);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  /// Row-major reshape.
  NodeId reshape(NodeId a, Index rows, Index cols);
  /// Scalar sum of (a - b)^2 over all entries.
  NodeId sum_squared_diff(NodeId a, NodeId b);

  Shape shape(NodeId n) const { return nodes_.at(n.index).shape; }
  Op op(NodeId n) const { return nodes_.at(n.index).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Copies `value` into an input node; throws ShapeError on mismatch.
  void set_input(NodeId n, const Matrix& value);
  void forward();
  void forward(const std::vector<std::pair<NodeId, const Matrix*>>& inputs);

  /// Throws StateError before forward().
  const Matrix& value(NodeId n) const;

  /// `loss` must be a 1x1 node. Throws StateError before forward().
  void backward(NodeId loss);
  /// Gradient of the last backward() loss with respect to the node's value.
  const Matrix& grad(NodeId n) const;

private:
  struct Node {
    Op op = Op::Input;
    Shape shape{};
    std::vector<std::uint32_t> in{};
    double scalar = 0.0;
    std::string name{};
    Parameter* param = nullptr;
    bool requires_grad = false;
    Matrix value{};
    Matrix aux{};
  };

  NodeId push(Node node);
  const Node& node(NodeId n) const { return nodes_.at(n.index); }
  const Matrix& val(std::uint32_t i) const;
  void eval(Node& n);
  void propagate(std::uint32_t i);

  std::vector<Node> nodes_;
  mutable std::vector<Matrix> grads_;
  std::vector<char> touched_;
  bool forward_done_ = false;
  bool backward_done_ = false;
};

} // namespace dtf::ad
