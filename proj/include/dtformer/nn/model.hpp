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

#include "dtformer/ad/graph.hpp"
#include "dtformer/nn/patches.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace dtf::nn {

enum class AttentionMode { Softmax, Literal };
enum class ModelKind { S, ST };

AttentionMode parse_attention_mode(std::string_view name);
const char* attention_mode_name(AttentionMode m) noexcept;
ModelKind parse_model_kind(std::string_view name);
const char* model_kind_name(ModelKind k) noexcept;

struct ModelConfig {
  std::size_t patch = 5;
  std::size_t width = 64;
  std::size_t head_width = 64;
  std::size_t heads = 2;
  std::size_t modules = 2;
  std::size_t signal_channels = 6;
  AttentionMode attention = AttentionMode::Softmax;
  /// Residual connection and layer normalization around every module.
  bool stabilizers = true;
  std::size_t inference_stride = 1;
  /// Signals enter as s / s0 clamped to [signal_min, signal_max].
  double signal_min = 1e-6;
  double signal_max = 10.0;
  /// Tensors are learned in units of 1 / tensor_scale mm^2/s.
  double tensor_scale = 1000.0;

  std::size_t sequence_length() const noexcept { return patch * patch * patch; }
  void validate() const;
};

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

/// Declares embedding, attention-module and (optionally) output-head
/// parameters under `prefix`. Values are left at zero.
void add_trunk_parameters(ad::ParameterSet& params, const std::string& prefix, const ModelConfig& cfg,
                          std::size_t input_width);
void add_head_parameters(ad::ParameterSet& params, const std::string& prefix, std::size_t input_width);

/// One attention module applied to `x` (n x width).
ad::NodeId attention_module(ad::Graph& g, ad::ParameterSet& params, const std::string& prefix,
                            const ModelConfig& cfg, ad::NodeId x);
/// Embedding followed by cfg.modules attention modules; returns n x width.
ad::NodeId build_trunk(ad::Graph& g, ad::ParameterSet& params, const std::string& prefix, const ModelConfig& cfg,
                       ad::NodeId x);

/// Declares every parameter of a model of the given kind under `prefix`.
void declare_model(ad::ParameterSet& params, ModelKind kind, const ModelConfig& cfg, const std::string& prefix = "");

/// Computation graph for a single patch, bound to parameters by name.
class PatchNetwork {
public:
  PatchNetwork(ModelKind kind, const ModelConfig& cfg, ad::ParameterSet& params, const std::string& prefix = "");

  ModelKind kind() const noexcept { return kind_; }
  /// Model S forward pass.
  const ad::Matrix& forward(const ad::Matrix& signals);
  /// Model ST forward pass.
  const ad::Matrix& forward(const ad::Matrix& signals, const ad::Matrix& tensors);
  /// Squared-error loss against `target` without gradients. `tensors` is
  /// ignored for Model S.
  double loss(const ad::Matrix& signals, const ad::Matrix* tensors, const ad::Matrix& target);
  /// Loss plus backward pass; gradients land in the bound parameters.
  double loss_and_gradient(const ad::Matrix& signals, const ad::Matrix* tensors, const ad::Matrix& target);

  ad::Graph& graph() noexcept { return g_; }
  ad::NodeId output() const noexcept { return output_; }
  ad::NodeId loss_node() const noexcept { return loss_; }

private:
  void bind(const ad::Matrix& signals, const ad::Matrix* tensors);

  ModelKind kind_;
  ad::Graph g_;
  ad::NodeId signals_{}, tensors_{}, target_{}, output_{}, loss_{};
};

/// A model with its parameters. A Model ST also carries the frozen Model S
/// parameters (prefixed "s.", not trainable) that feed its tensor branch.
class Model {
public:
  Model(ModelKind kind, ModelConfig cfg);

  ModelKind kind() const noexcept { return kind_; }
  const ModelConfig& config() const noexcept { return cfg_; }
  ad::ParameterSet& params() noexcept { return params_; }
  const ad::ParameterSet& params() const noexcept { return params_; }

  /// Builds a Model ST whose frozen stage copies the parameters of `s`.
  static Model stage_two(const Model& s);
  /// The embedded Model S of a Model ST, as a standalone model.
  Model stage_one() const;

  /// n x 6 output in scaled tensor units. Model S only.
  ad::Matrix forward(const PatchSequence& signals) const;
  /// Model ST with an explicit tensor-branch input; origins must match.
  ad::Matrix forward(const PatchSequence& signals, const PatchSequence& s_tensors) const;
  /// Model ST with the tensor branch fed by the embedded Model S.
  ad::Matrix forward_cascade(const PatchSequence& signals) const;

  /// Checkpoint metadata carries kind, config and `extra`.
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Model load(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

private:
  ModelKind kind_;
  ModelConfig cfg_;
  ad::ParameterSet params_;
};

/// Inference networks only read parameter values.
PatchNetwork inference_network(const Model& m, ModelKind kind, const std::string& prefix);

} // namespace dtf::nn
