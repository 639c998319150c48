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

#include "dtformer/ad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dtf::ad {

Parameter& ParameterSet::add(std::string name, Index rows, Index cols, bool trainable)
{
  if (find(name)) throw Error(ErrorCode::InvalidArgument, "duplicate parameter '" + name + "'");
  Parameter& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = Matrix::Zero(rows, cols);
  p.grad = Matrix::Zero(rows, cols);
  p.trainable = trainable;
  return p;
}

Parameter* ParameterSet::find(std::string_view name)
{
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const
{
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter& ParameterSet::at(std::string_view name)
{
  if (auto* p = find(name)) return *p;
  throw Error(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
}

const Parameter& ParameterSet::at(std::string_view name) const
{
  if (const auto* p = find(name)) return *p;
  throw Error(ErrorCode::InvalidArgument, "no parameter named '" + std::string(name) + "'");
}

std::size_t ParameterSet::scalar_count() const noexcept
{
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterSet::zero_grad()
{
  for (auto& p : params_) p.grad.setZero();
}

void ParameterSet::copy_values_from(const ParameterSet& other)
{
  if (other.size() != size()) throw Error(ErrorCode::Shape, "parameter sets differ in size");
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i].name != other[i].name || params_[i].shape() != other[i].shape())
      throw ShapeError("copy_values_from", "parameter '" + params_[i].name + "' does not match '" + other[i].name + "'");
    params_[i].value = other[i].value;
  }
}

std::uint64_t parameter_hash(const ParameterSet& params)
{
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : params) {
    mix(p.name.data(), p.name.size());
    const std::int64_t dims[2] = {p.value.rows(), p.value.cols()};
    mix(dims, sizeof dims);
    mix(p.value.data(), static_cast<std::size_t>(p.value.size()) * sizeof(double));
  }
  return h;
}

const char* op_name(Op op) noexcept
{
  switch (op) {
  case Op::Input: return "input";
  case Op::Param: return "parameter";
  case Op::Constant: return "constant";
  case Op::MatMul: return "matmul";
  case Op::MatMulNT: return "matmul_nt";
  case Op::Add: return "add";
  case Op::AddRow: return "add_row";
  case Op::MulRow: return "mul_row";
  case Op::Scale: return "scale";
  case Op::Softmax: return "softmax";
  case Op::LayerNorm: return "layer_norm";
  case Op::Relu: return "relu";
  case Op::ConcatCols: return "concat_cols";
  case Op::Reshape: return "reshape";
  case Op::SumSquaredDiff: return "sum_squared_diff";
  }
  return "?";
}

NodeId Graph::push(Node n)
{
  for (auto i : n.in) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  nodes_.push_back(std::move(n));
  forward_done_ = false;
  backward_done_ = false;
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::input(std::string name, Index rows, Index cols, bool requires_grad)
{
  if (rows <= 0 || cols <= 0) throw ShapeError("input", name + " must have a positive shape");
  Node n{.op = Op::Input, .shape = {rows, cols}};
  n.name = std::move(name);
  n.requires_grad = requires_grad;
  n.value = Matrix::Zero(rows, cols);
  return push(std::move(n));
}

NodeId Graph::parameter(Parameter& p)
{
  Node n{.op = Op::Param, .shape = p.shape()};
  n.name = p.name;
  n.param = &p;
  n.requires_grad = p.trainable;
  return push(std::move(n));
}

NodeId Graph::constant(Matrix value)
{
  Node n{.op = Op::Constant, .shape = {value.rows(), value.cols()}};
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b)
{
  const Shape sa = shape(a), sb = shape(b);
  if (sa.cols != sb.rows) throw ShapeError("matmul", sa.str() + " times " + sb.str());
  return push(Node{.op = Op::MatMul, .shape = {sa.rows, sb.cols}, .in = {a.index, b.index}});
}

NodeId Graph::matmul_nt(NodeId a, NodeId b)
{
  const Shape sa = shape(a), sb = shape(b);
  if (sa.cols != sb.cols) throw ShapeError("matmul_nt", sa.str() + " times transpose of " + sb.str());
  return push(Node{.op = Op::MatMulNT, .shape = {sa.rows, sb.rows}, .in = {a.index, b.index}});
}

NodeId Graph::add(NodeId a, NodeId b)
{
  if (shape(a) != shape(b)) throw ShapeError("add", shape(a).str() + " plus " + shape(b).str());
  return push(Node{.op = Op::Add, .shape = shape(a), .in = {a.index, b.index}});
}

NodeId Graph::add_row(NodeId a, NodeId row)
{
  const Shape sa = shape(a), sr = shape(row);
  if (sr.rows != 1 || sr.cols != sa.cols) throw ShapeError("add_row", "cannot broadcast " + sr.str() + " over " + sa.str());
  return push(Node{.op = Op::AddRow, .shape = sa, .in = {a.index, row.index}});
}

NodeId Graph::mul_row(NodeId a, NodeId row)
{
  const Shape sa = shape(a), sr = shape(row);
  if (sr.rows != 1 || sr.cols != sa.cols) throw ShapeError("mul_row", "cannot broadcast " + sr.str() + " over " + sa.str());
  return push(Node{.op = Op::MulRow, .shape = sa, .in = {a.index, row.index}});
}

NodeId Graph::scale(NodeId a, double factor)
{
  return push(Node{.op = Op::Scale, .shape = shape(a), .in = {a.index}, .scalar = factor});
}

NodeId Graph::softmax_rows(NodeId a) { return push(Node{.op = Op::Softmax, .shape = shape(a), .in = {a.index}}); }

NodeId Graph::layer_norm_rows(NodeId a, double eps)
{
  if (shape(a).cols < 2) throw ShapeError("layer_norm", "rows need at least two entries");
  return push(Node{.op = Op::LayerNorm, .shape = shape(a), .in = {a.index}, .scalar = eps});
}

NodeId Graph::relu(NodeId a) { return push(Node{.op = Op::Relu, .shape = shape(a), .in = {a.index}}); }

NodeId Graph::concat_cols(const std::vector<NodeId>& parts)
{
  if (parts.empty()) throw ShapeError("concat_cols", "no inputs");
  Node n{.op = Op::ConcatCols, .shape = {shape(parts[0]).rows, 0}};
  for (auto p : parts) {
    if (shape(p).rows != n.shape.rows)
      throw ShapeError("concat_cols", "row counts differ: " + shape(parts[0]).str() + " vs " + shape(p).str());
    n.shape.cols += shape(p).cols;
    n.in.push_back(p.index);
  }
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, Index rows, Index cols)
{
  const Shape sa = shape(a);
  if (rows * cols != sa.rows * sa.cols)
    throw ShapeError("reshape", sa.str() + " into " + std::to_string(rows) + "x" + std::to_string(cols));
  return push(Node{.op = Op::Reshape, .shape = {rows, cols}, .in = {a.index}});
}

NodeId Graph::sum_squared_diff(NodeId a, NodeId b)
{
  if (shape(a) != shape(b)) throw ShapeError("sum_squared_diff", shape(a).str() + " vs " + shape(b).str());
  return push(Node{.op = Op::SumSquaredDiff, .shape = {1, 1}, .in = {a.index, b.index}});
}

void Graph::set_input(NodeId id, const Matrix& value)
{
  Node& n = nodes_.at(id.index);
  if (n.op != Op::Input) throw StateError("set_input: node is not an input");
  if (value.rows() != n.shape.rows || value.cols() != n.shape.cols)
    throw ShapeError("input " + n.name,
                     "expected " + n.shape.str() + ", got " + Shape{value.rows(), value.cols()}.str());
  n.value = value;
  forward_done_ = false;
  backward_done_ = false;
}

const Matrix& Graph::val(std::uint32_t i) const
{
  const Node& n = nodes_[i];
  return n.op == Op::Param ? n.param->value : n.value;
}

void Graph::eval(Node& n)
{
  switch (n.op) {
  case Op::Input:
  case Op::Param:
  case Op::Constant: return;
  case Op::MatMul: n.value.noalias() = val(n.in[0]) * val(n.in[1]); return;
  case Op::MatMulNT: n.value.noalias() = val(n.in[0]) * val(n.in[1]).transpose(); return;
  case Op::Add: n.value = val(n.in[0]) + val(n.in[1]); return;
  case Op::AddRow: n.value = val(n.in[0]).rowwise() + val(n.in[1]).row(0); return;
  case Op::MulRow: n.value = val(n.in[0]).array().rowwise() * val(n.in[1]).row(0).array(); return;
  case Op::Scale: n.value = n.scalar * val(n.in[0]); return;
  case Op::Softmax: {
    const Matrix& a = val(n.in[0]);
    n.value.resize(a.rows(), a.cols());
    for (Index r = 0; r < a.rows(); ++r) {
      const double m = a.row(r).maxCoeff();
      n.value.row(r) = (a.row(r).array() - m).exp();
      n.value.row(r) /= n.value.row(r).sum();
    }
    return;
  }
  case Op::LayerNorm: {
    const Matrix& a = val(n.in[0]);
    const double c = static_cast<double>(a.cols());
    n.value.resize(a.rows(), a.cols());
    n.aux.resize(a.rows(), 1);
    for (Index r = 0; r < a.rows(); ++r) {
      const double mean = a.row(r).sum() / c;
      const double var = (a.row(r).array() - mean).square().sum() / c;
      const double inv = 1.0 / std::sqrt(var + n.scalar);
      n.aux(r, 0) = inv;
      n.value.row(r) = (a.row(r).array() - mean) * inv;
    }
    return;
  }
  case Op::Relu: n.value = val(n.in[0]).cwiseMax(0.0); return;
  case Op::ConcatCols: {
    n.value.resize(n.shape.rows, n.shape.cols);
    Index off = 0;
    for (auto i : n.in) {
      const Matrix& p = val(i);
      n.value.middleCols(off, p.cols()) = p;
      off += p.cols();
    }
    return;
  }
  case Op::Reshape: {
    const Matrix& a = val(n.in[0]);
    n.value = Eigen::Map<const Matrix>(a.data(), n.shape.rows, n.shape.cols);
    return;
  }
  case Op::SumSquaredDiff:
    n.value.resize(1, 1);
    n.value(0, 0) = (val(n.in[0]) - val(n.in[1])).squaredNorm();
    return;
  }
}

void Graph::forward()
{
  for (auto& n : nodes_) eval(n);
  forward_done_ = true;
  backward_done_ = false;
}

void Graph::forward(const std::vector<std::pair<NodeId, const Matrix*>>& inputs)
{
  for (const auto& [id, m] : inputs) set_input(id, *m);
  forward();
}

const Matrix& Graph::value(NodeId id) const
{
  if (!forward_done_) throw StateError("value requested before forward()");
  (void)nodes_.at(id.index);
  return val(id.index);
}

void Graph::propagate(std::uint32_t i)
{
  Node& n = nodes_[i];
  const Matrix& g = grads_[i];

  auto accumulate = [this](std::uint32_t target) -> Matrix* {
    if (!nodes_[target].requires_grad) return nullptr;
    Matrix& t = grads_[target];
    if (!touched_[target]) {
      t.setZero(nodes_[target].shape.rows, nodes_[target].shape.cols);
      touched_[target] = 1;
    }
    return &t;
  };

  switch (n.op) {
  case Op::Input:
  case Op::Param:
  case Op::Constant: return;
  case Op::MatMul: {
    if (Matrix* da = accumulate(n.in[0])) da->noalias() += g * val(n.in[1]).transpose();
    if (Matrix* db = accumulate(n.in[1])) db->noalias() += val(n.in[0]).transpose() * g;
    return;
  }
  case Op::MatMulNT: {
    if (Matrix* da = accumulate(n.in[0])) da->noalias() += g * val(n.in[1]);
    if (Matrix* db = accumulate(n.in[1])) db->noalias() += g.transpose() * val(n.in[0]);
    return;
  }
  case Op::Add:
    if (Matrix* da = accumulate(n.in[0])) *da += g;
    if (Matrix* db = accumulate(n.in[1])) *db += g;
    return;
  case Op::AddRow:
    if (Matrix* da = accumulate(n.in[0])) *da += g;
    if (Matrix* dr = accumulate(n.in[1])) *dr += g.colwise().sum();
    return;
  case Op::MulRow:
    if (Matrix* da = accumulate(n.in[0])) da->array() += g.array().rowwise() * val(n.in[1]).row(0).array();
    if (Matrix* dr = accumulate(n.in[1])) *dr += g.cwiseProduct(val(n.in[0])).colwise().sum();
    return;
  case Op::Scale:
    if (Matrix* da = accumulate(n.in[0])) *da += n.scalar * g;
    return;
  case Op::Softmax:
    if (Matrix* da = accumulate(n.in[0])) {
      const Matrix& y = n.value;
      for (Index r = 0; r < y.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        da->row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
      }
    }
    return;
  case Op::LayerNorm:
    if (Matrix* da = accumulate(n.in[0])) {
      const Matrix& y = n.value;
      const double c = static_cast<double>(y.cols());
      for (Index r = 0; r < y.rows(); ++r) {
        const double mg = g.row(r).sum() / c;
        const double mgy = g.row(r).dot(y.row(r)) / c;
        da->row(r).array() += n.aux(r, 0) * (g.row(r).array() - mg - y.row(r).array() * mgy);
      }
    }
    return;
  case Op::Relu:
    if (Matrix* da = accumulate(n.in[0])) da->array() += (val(n.in[0]).array() > 0.0).select(g.array(), 0.0);
    return;
  case Op::ConcatCols: {
    Index off = 0;
    for (auto in : n.in) {
      const Index w = nodes_[in].shape.cols;
      if (Matrix* d = accumulate(in)) *d += g.middleCols(off, w);
      off += w;
    }
    return;
  }
  case Op::Reshape:
    if (Matrix* da = accumulate(n.in[0])) {
      const Shape s = nodes_[n.in[0]].shape;
      *da += Eigen::Map<const Matrix>(g.data(), s.rows, s.cols);
    }
    return;
  case Op::SumSquaredDiff: {
    const double s = g(0, 0);
    if (Matrix* da = accumulate(n.in[0])) *da += 2.0 * s * (val(n.in[0]) - val(n.in[1]));
    if (Matrix* db = accumulate(n.in[1])) *db -= 2.0 * s * (val(n.in[0]) - val(n.in[1]));
    return;
  }
  }
}

void Graph::backward(NodeId loss)
{
  if (!forward_done_) throw StateError("backward() called before forward()");
  const Node& l = nodes_.at(loss.index);
  if (l.shape.rows != 1 || l.shape.cols != 1) throw ShapeError("backward", "loss must be 1x1, got " + l.shape.str());

  grads_.resize(nodes_.size());
  touched_.assign(nodes_.size(), 0);
  for (auto& n : nodes_)
    if (n.op == Op::Param && n.param->trainable) n.param->grad.setZero(n.shape.rows, n.shape.cols);

  if (l.requires_grad) {
    grads_[loss.index].setOnes(1, 1);
    touched_[loss.index] = 1;
    for (std::uint32_t i = loss.index + 1; i-- > 0;)
      if (touched_[i]) propagate(i);
  }

  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::Param && n.param->trainable && touched_[i]) n.param->grad += grads_[i];
  }
  backward_done_ = true;
}

const Matrix& Graph::grad(NodeId id) const
{
  if (!backward_done_) throw StateError("grad requested before backward()");
  const std::uint32_t i = id.index;
  if (i >= nodes_.size()) throw Error(ErrorCode::InvalidArgument, "grad: unknown node");
  if (!touched_[i]) {
    grads_[i].setZero(nodes_[i].shape.rows, nodes_[i].shape.cols);
  }
  return grads_[i];
}

} // namespace dtf::ad
