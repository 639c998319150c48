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

#include "dtformer/nn/model.hpp"

#include "dtformer/ad/checkpoint.hpp"
#include "dtformer/errors.hpp"

#include <cmath>

namespace dtf::nn {

using ad::Index;
using ad::Matrix;
using ad::NodeId;

AttentionMode parse_attention_mode(std::string_view name)
{
  if (name == "softmax") return AttentionMode::Softmax;
  if (name == "literal") return AttentionMode::Literal;
  throw Error(ErrorCode::InvalidArgument, "unknown attention mode '" + std::string(name) + "' (softmax|literal)");
}

const char* attention_mode_name(AttentionMode m) noexcept
{
  return m == AttentionMode::Softmax ? "softmax" : "literal";
}

ModelKind parse_model_kind(std::string_view name)
{
  if (name == "s" || name == "S") return ModelKind::S;
  if (name == "st" || name == "ST") return ModelKind::ST;
  throw Error(ErrorCode::InvalidArgument, "unknown model kind '" + std::string(name) + "' (s|st)");
}

const char* model_kind_name(ModelKind k) noexcept { return k == ModelKind::S ? "s" : "st"; }

void ModelConfig::validate() const
{
  if (patch == 0 || width == 0 || head_width == 0 || heads == 0 || modules == 0 || signal_channels == 0 ||
      inference_stride == 0)
    throw Error(ErrorCode::InvalidArgument, "model sizes and strides must be positive integers");
  if (!(signal_min > 0.0 && signal_max > signal_min)) throw Error(ErrorCode::InvalidArgument, "bad signal clamp range");
  if (!(tensor_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "tensor scale must be positive");
}

nlohmann::json config_to_json(const ModelConfig& c)
{
  return {{"patch", c.patch},
          {"width", c.width},
          {"head_width", c.head_width},
          {"heads", c.heads},
          {"modules", c.modules},
          {"signal_channels", c.signal_channels},
          {"attention", attention_mode_name(c.attention)},
          {"stabilizers", c.stabilizers},
          {"inference_stride", c.inference_stride},
          {"signal_min", c.signal_min},
          {"signal_max", c.signal_max},
          {"tensor_scale", c.tensor_scale}};
}

ModelConfig config_from_json(const nlohmann::json& j)
{
  ModelConfig c;
  try {
    c.patch = j.at("patch");
    c.width = j.at("width");
    c.head_width = j.at("head_width");
    c.heads = j.at("heads");
    c.modules = j.at("modules");
    c.signal_channels = j.value("signal_channels", c.signal_channels);
    c.attention = parse_attention_mode(j.at("attention").get<std::string>());
    c.stabilizers = j.at("stabilizers");
    c.inference_stride = j.value("inference_stride", c.inference_stride);
    c.signal_min = j.value("signal_min", c.signal_min);
    c.signal_max = j.value("signal_max", c.signal_max);
    c.tensor_scale = j.value("tensor_scale", c.tensor_scale);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Format, std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

Index ix(std::size_t v) { return static_cast<Index>(v); }

std::string module_prefix(const std::string& trunk, std::size_t m) { return trunk + "m" + std::to_string(m) + "."; }

} // namespace

void add_trunk_parameters(ad::ParameterSet& params, const std::string& prefix, const ModelConfig& cfg,
                          std::size_t input_width)
{
  const Index d = ix(cfg.width), dh = ix(cfg.head_width);
  params.add(prefix + "embed.W", ix(input_width), d);
  params.add(prefix + "embed.p", ix(cfg.sequence_length()), d);
  for (std::size_t m = 0; m < cfg.modules; ++m) {
    const std::string mp = module_prefix(prefix, m);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::string hp = mp + "h" + std::to_string(h) + ".";
      params.add(hp + "Wq", d, dh);
      params.add(hp + "Wk", d, dh);
      params.add(hp + "Wv", d, dh);
    }
    params.add(mp + "Wo", ix(cfg.heads) * dh, d);
    params.add(mp + "bo", 1, d);
    if (cfg.stabilizers) {
      params.add(mp + "gamma", 1, d);
      params.add(mp + "beta", 1, d);
    }
  }
}

void add_head_parameters(ad::ParameterSet& params, const std::string& prefix, std::size_t input_width)
{
  params.add(prefix + "head.W", ix(input_width), 6);
  params.add(prefix + "head.b", 1, 6);
}

NodeId attention_module(ad::Graph& g, ad::ParameterSet& params, const std::string& prefix, const ModelConfig& cfg,
                        NodeId x)
{
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.head_width));
  std::vector<NodeId> heads;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string hp = prefix + "h" + std::to_string(h) + ".";
    const NodeId q = g.matmul(x, g.parameter(params.at(hp + "Wq")));
    const NodeId k = g.matmul(x, g.parameter(params.at(hp + "Wk")));
    const NodeId v = g.matmul(x, g.parameter(params.at(hp + "Wv")));
    NodeId a = g.scale(g.matmul_nt(q, k), inv_sqrt);
    if (cfg.attention == AttentionMode::Softmax) a = g.softmax_rows(a);
    heads.push_back(g.matmul(a, v));
  }
  const NodeId cat = heads.size() == 1 ? heads[0] : g.concat_cols(heads);
  const NodeId y =
      g.relu(g.add_row(g.matmul(cat, g.parameter(params.at(prefix + "Wo"))), g.parameter(params.at(prefix + "bo"))));
  if (!cfg.stabilizers) return y;
  const NodeId n = g.layer_norm_rows(g.add(x, y));
  return g.add_row(g.mul_row(n, g.parameter(params.at(prefix + "gamma"))), g.parameter(params.at(prefix + "beta")));
}

NodeId build_trunk(ad::Graph& g, ad::ParameterSet& params, const std::string& prefix, const ModelConfig& cfg, NodeId x)
{
  NodeId h = g.add(g.matmul(x, g.parameter(params.at(prefix + "embed.W"))), g.parameter(params.at(prefix + "embed.p")));
  for (std::size_t m = 0; m < cfg.modules; ++m) h = attention_module(g, params, module_prefix(prefix, m), cfg, h);
  return h;
}

void declare_model(ad::ParameterSet& params, ModelKind kind, const ModelConfig& cfg, const std::string& prefix)
{
  cfg.validate();
  if (kind == ModelKind::S) {
    add_trunk_parameters(params, prefix + "sig.", cfg, cfg.signal_channels);
    add_head_parameters(params, prefix, cfg.width);
  } else {
    add_trunk_parameters(params, prefix + "sig.", cfg, cfg.signal_channels);
    add_trunk_parameters(params, prefix + "ten.", cfg, 6);
    add_head_parameters(params, prefix, 2 * cfg.width);
  }
}

PatchNetwork::PatchNetwork(ModelKind kind, const ModelConfig& cfg, ad::ParameterSet& params, const std::string& prefix)
    : kind_(kind)
{
  const Index n = ix(cfg.sequence_length());
  signals_ = g_.input("signals", n, ix(cfg.signal_channels));
  NodeId features = build_trunk(g_, params, prefix + "sig.", cfg, signals_);
  if (kind == ModelKind::ST) {
    tensors_ = g_.input("tensors", n, 6);
    features = g_.concat_cols({features, build_trunk(g_, params, prefix + "ten.", cfg, tensors_)});
  }
  output_ = g_.add_row(g_.matmul(features, g_.parameter(params.at(prefix + "head.W"))),
                       g_.parameter(params.at(prefix + "head.b")));
  target_ = g_.input("target", n, 6);
  loss_ = g_.sum_squared_diff(output_, target_);
}

void PatchNetwork::bind(const Matrix& signals, const Matrix* tensors)
{
  g_.set_input(signals_, signals);
  if (kind_ == ModelKind::ST) {
    if (!tensors) throw Error(ErrorCode::InvalidArgument, "Model ST needs a tensor-branch input");
    g_.set_input(tensors_, *tensors);
  }
}

const Matrix& PatchNetwork::forward(const Matrix& signals)
{
  if (kind_ != ModelKind::S) throw Error(ErrorCode::InvalidArgument, "Model ST needs a tensor-branch input");
  bind(signals, nullptr);
  g_.forward();
  return g_.value(output_);
}

const Matrix& PatchNetwork::forward(const Matrix& signals, const Matrix& tensors)
{
  bind(signals, &tensors);
  g_.forward();
  return g_.value(output_);
}

double PatchNetwork::loss(const Matrix& signals, const Matrix* tensors, const Matrix& target)
{
  bind(signals, tensors);
  g_.set_input(target_, target);
  g_.forward();
  return g_.value(loss_)(0, 0);
}

double PatchNetwork::loss_and_gradient(const Matrix& signals, const Matrix* tensors, const Matrix& target)
{
  const double l = loss(signals, tensors, target);
  g_.backward(loss_);
  return l;
}

Model::Model(ModelKind kind, ModelConfig cfg) : kind_(kind), cfg_(cfg)
{
  declare_model(params_, kind_, cfg_);
  if (kind_ == ModelKind::ST) {
    ad::ParameterSet frozen;
    declare_model(frozen, ModelKind::S, cfg_, "s.");
    for (const auto& p : frozen) params_.add(p.name, p.value.rows(), p.value.cols(), false);
  }
}

Model Model::stage_two(const Model& s)
{
  if (s.kind_ != ModelKind::S) throw Error(ErrorCode::InvalidArgument, "stage_two expects a Model S");
  Model st(ModelKind::ST, s.cfg_);
  for (const auto& p : s.params_) st.params_.at("s." + p.name).value = p.value;
  return st;
}

Model Model::stage_one() const
{
  if (kind_ != ModelKind::ST) throw Error(ErrorCode::InvalidArgument, "stage_one expects a Model ST");
  Model s(ModelKind::S, cfg_);
  for (auto& p : s.params_) p.value = params_.at("s." + p.name).value;
  return s;
}

PatchNetwork inference_network(const Model& m, ModelKind kind, const std::string& prefix)
{
  // Forward passes never touch gradient buffers, so sharing read-only
  // parameters between networks is safe.
  return PatchNetwork(kind, m.config(), const_cast<ad::ParameterSet&>(m.params()), prefix);
}

Matrix Model::forward(const PatchSequence& signals) const
{
  if (kind_ != ModelKind::S) throw Error(ErrorCode::InvalidArgument, "Model ST needs a tensor-branch input");
  PatchNetwork net = inference_network(*this, ModelKind::S, "");
  return net.forward(signals.features);
}

Matrix Model::forward(const PatchSequence& signals, const PatchSequence& s_tensors) const
{
  if (kind_ != ModelKind::ST) throw Error(ErrorCode::InvalidArgument, "Model S takes a single input");
  if (signals.origin != s_tensors.origin)
    throw Error(ErrorCode::Patching, "signal and tensor patches come from different origins");
  PatchNetwork net = inference_network(*this, ModelKind::ST, "");
  return net.forward(signals.features, s_tensors.features);
}

Matrix Model::forward_cascade(const PatchSequence& signals) const
{
  if (kind_ != ModelKind::ST) throw Error(ErrorCode::InvalidArgument, "cascade needs a Model ST");
  PatchNetwork s = inference_network(*this, ModelKind::S, "s.");
  const Matrix t = s.forward(signals.features);
  PatchNetwork st = inference_network(*this, ModelKind::ST, "");
  return st.forward(signals.features, t);
}

void Model::save(const std::filesystem::path& path, const nlohmann::json& extra) const
{
  nlohmann::json meta = extra;
  meta["kind"] = model_kind_name(kind_);
  meta["config"] = config_to_json(cfg_);
  meta["normalization"] = {{"input", "s/s0"},
                           {"signal_min", cfg_.signal_min},
                           {"signal_max", cfg_.signal_max},
                           {"tensor_scale", cfg_.tensor_scale}};
  ad::save_checkpoint(path, params_, meta);
}

Model Model::load(const std::filesystem::path& path, nlohmann::json* metadata)
{
  const nlohmann::json meta = ad::read_checkpoint_metadata(path);
  if (!meta.contains("kind") || !meta.contains("config"))
    throw Error(ErrorCode::Format, path.string() + " is not a model checkpoint");
  Model m(parse_model_kind(meta["kind"].get<std::string>()), config_from_json(meta["config"]));
  ad::load_checkpoint(path, m.params_, true);
  if (metadata) *metadata = meta;
  return m;
}

} // namespace dtf::nn
