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

#include "dtformer/nn/model.hpp"
#include "dtformer/train/dataset.hpp"

#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

namespace dtf::train {

struct TrainConfig {
  std::size_t batch_size = 10;
  double initial_lr = 1e-4;
  double lr_decay = 0.9;
  /// Stalled epochs before each decay.
  std::size_t plateau_patience = 1;
  /// Consecutive stalled epochs before stopping.
  std::size_t early_stop_patience = 2;
  std::size_t max_epochs = 50;
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);

enum class StopReason { EarlyStop, MaxEpochs };
const char* stop_reason_name(StopReason r) noexcept;

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  /// Rate used during this epoch.
  double lr = 0.0;
  bool improved = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  StopReason stop = StopReason::MaxEpochs;
  std::size_t best_epoch = 0;
  double best_validation = 0.0;
  std::string checkpoint;

  /// One JSON object per epoch followed by a summary line.
  std::string to_jsonl() const;
};

/// Sum over rows and channels of (pred - ref)^2 for one patch.
double loss_mse(const ad::Matrix& pred, const ad::Matrix& ref);
/// Mean of the per-patch loss over a batch.
double loss_mse(const std::vector<ad::Matrix>& pred, const std::vector<ad::Matrix>& ref);
/// d loss / d pred for one patch of a batch of `batch` patches.
ad::Matrix loss_mse_gradient(const ad::Matrix& pred, const ad::Matrix& ref, std::size_t batch);

/// Weights ~ N(0, 2 / fan_in) with fan_in the row count; positional
/// encodings, biases and shifts set to 0; layer-norm scales to 1.
/// Non-trainable parameters are left alone.
void he_initialize(ad::ParameterSet& params, std::uint64_t seed);

/// Adaptive moment estimation over the trainable parameters of a set.
class Adam {
public:
  Adam(ad::ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
  /// `grads` holds one matrix per trainable parameter, in set order.
  void step(const std::vector<ad::Matrix>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

private:
  ad::ParameterSet& params_;
  std::vector<ad::Parameter*> trainable_;
  std::vector<ad::Matrix> m_, v_;
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct TrainHooks {
  /// Replaces the computed validation loss, e.g. to simulate a stall.
  std::function<double(std::size_t epoch, double computed)> validation_override;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called after every optimizer step with the mean batch loss.
  std::function<void(std::size_t step, double loss)> on_step;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Holds out whole groups (round(fraction * groups), at least one) chosen by
/// a seeded shuffle. With a single group the patches themselves are split.
Split split_dataset(const Dataset& ds, double fraction, std::uint64_t seed);

struct TrainResult {
  nn::Model model;
  TrainLog log;
};

/// Fresh He-initialized Model S trained on the dataset.
TrainResult train_model_s(const Dataset& ds, const nn::ModelConfig& cfg, const TrainConfig& tc,
                          const TrainHooks& hooks = {});

/// Fills `s_tensors` of every sample with the frozen model's predictions.
void attach_stage_one(Dataset& ds, const nn::Model& model_s);

/// Trains a Model ST on top of a frozen Model S. The dataset's s_tensors are
/// filled first when empty.
TrainResult train_model_st(Dataset& ds, const nn::Model& model_s, const TrainConfig& tc,
                           const TrainHooks& hooks = {});

/// Mean per-patch loss of `model` over the given samples.
double evaluate_loss(const nn::Model& model, const Dataset& ds, const std::vector<std::size_t>& indices);

} // namespace dtf::train
