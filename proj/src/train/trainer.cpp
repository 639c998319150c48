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

#include "dtformer/train/trainer.hpp"

#include "dtformer/errors.hpp"
#include "dtformer/parallel.hpp"
#include "dtformer/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

namespace dtf::train {

using ad::Matrix;

void TrainConfig::validate() const
{
  if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch size must be at least 1");
  if (!(initial_lr > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay < 1.0)) throw Error(ErrorCode::InvalidArgument, "lr decay must lie in (0, 1)");
  if (plateau_patience < 1 || early_stop_patience < 1)
    throw Error(ErrorCode::InvalidArgument, "patience values must be at least 1");
  if (max_epochs < 1) throw Error(ErrorCode::InvalidArgument, "max epochs must be at least 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "validation fraction must lie in (0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0))
    throw Error(ErrorCode::InvalidArgument, "bad optimizer constants");
}

nlohmann::json train_config_to_json(const TrainConfig& c)
{
  return {{"batch_size", c.batch_size},
          {"initial_lr", c.initial_lr},
          {"lr_decay", c.lr_decay},
          {"plateau_patience", c.plateau_patience},
          {"early_stop_patience", c.early_stop_patience},
          {"max_epochs", c.max_epochs},
          {"seed", c.seed},
          {"validation_fraction", c.validation_fraction},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

const char* stop_reason_name(StopReason r) noexcept
{
  return r == StopReason::EarlyStop ? "early_stop" : "max_epochs";
}

std::string TrainLog::to_jsonl() const
{
  std::ostringstream out;
  for (const auto& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"validation_loss", e.validation_loss},
                     {"lr", e.lr},
                     {"improved", e.improved}};
    out << j.dump() << '\n';
  }
  nlohmann::json s{{"stop_reason", stop_reason_name(stop)},
                   {"best_epoch", best_epoch},
                   {"best_validation_loss", best_validation},
                   {"checkpoint", checkpoint}};
  out << s.dump() << '\n';
  return out.str();
}

double loss_mse(const Matrix& pred, const Matrix& ref)
{
  if (pred.rows() != ref.rows() || pred.cols() != ref.cols())
    throw ShapeError("loss_mse", std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) + " vs " +
                                     std::to_string(ref.rows()) + "x" + std::to_string(ref.cols()));
  return (pred - ref).squaredNorm();
}

double loss_mse(const std::vector<Matrix>& pred, const std::vector<Matrix>& ref)
{
  if (pred.size() != ref.size() || pred.empty()) throw ShapeError("loss_mse", "batch sizes differ or are empty");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += loss_mse(pred[i], ref[i]);
  return sum / static_cast<double>(pred.size());
}

Matrix loss_mse_gradient(const Matrix& pred, const Matrix& ref, std::size_t batch)
{
  loss_mse(pred, ref);
  return 2.0 / static_cast<double>(batch) * (pred - ref);
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix)
{
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

void he_initialize(ad::ParameterSet& params, std::uint64_t seed)
{
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = params[i];
    if (!p.trainable) continue;
    if (ends_with(p.name, ".p") || ends_with(p.name, ".b") || ends_with(p.name, ".bo") || ends_with(p.name, ".beta")) {
      p.value.setZero();
    } else if (ends_with(p.name, ".gamma")) {
      p.value.setOnes();
    } else {
      const double sd = std::sqrt(2.0 / static_cast<double>(p.value.rows()));
      RandomStream rng(seed, stream_id(Stream::HeInit, i));
      for (ad::Index k = 0; k < p.value.size(); ++k) p.value.data()[k] = sd * rng.normal();
    }
  }
}

Adam::Adam(ad::ParameterSet& params, double beta1, double beta2, double epsilon)
    : params_(params), b1_(beta1), b2_(beta2), eps_(epsilon)
{
  for (auto& p : params_)
    if (p.trainable) {
      trainable_.push_back(&p);
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
}

void Adam::step(const std::vector<Matrix>& grads, double lr)
{
  if (grads.size() != trainable_.size()) throw ShapeError("adam", "gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    const Matrix& g = grads[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseAbs2();
    trainable_[i]->value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

Split split_dataset(const Dataset& ds, double fraction, std::uint64_t seed)
{
  if (ds.size() < 2) throw Error(ErrorCode::InvalidArgument, "dataset needs at least two patches to split");
  std::vector<std::size_t> groups;
  for (const auto& s : ds.samples) groups.push_back(s.group);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());

  RandomStream rng(seed, stream_id(Stream::DatasetSplit));
  auto shuffle = [&rng](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };

  Split split;
  if (groups.size() >= 2) {
    shuffle(groups);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(groups.size()))), 1, groups.size() - 1);
    const std::set<std::size_t> held(groups.begin(), groups.begin() + static_cast<long>(n_val));
    for (std::size_t i = 0; i < ds.size(); ++i)
      (held.count(ds.samples[i].group) ? split.validation : split.train).push_back(i);
  } else {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle(idx);
    const auto n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))), 1, idx.size() - 1);
    split.validation.assign(idx.begin(), idx.begin() + static_cast<long>(n_val));
    split.train.assign(idx.begin() + static_cast<long>(n_val), idx.end());
    std::sort(split.validation.begin(), split.validation.end());
    std::sort(split.train.begin(), split.train.end());
  }
  return split;
}

namespace {

/// Per-worker parameter replica with its own graph, so gradients of
/// different patches never share buffers.
struct Replica {
  ad::ParameterSet params;
  std::optional<nn::PatchNetwork> net;
};

class Engine {
public:
  Engine(const nn::Model& model, const Dataset& ds) : model_(model), ds_(ds)
  {
    const std::size_t workers = std::max<std::size_t>(1, thread_count());
    for (std::size_t w = 0; w < workers; ++w) {
      auto r = std::make_unique<Replica>();
      r->params = model.params();
      r->net.emplace(model.kind(), model.config(), r->params, "");
      replicas_.push_back(std::move(r));
    }
    for (std::size_t i = 0; i < model.params().size(); ++i)
      if (model.params()[i].trainable) trainable_.push_back(i);
  }

  void sync()
  {
    for (auto& r : replicas_)
      for (std::size_t i : trainable_) r->params[i].value = model_.params()[i].value;
  }

  std::size_t trainable_count() const noexcept { return trainable_.size(); }

  /// Mean loss over `batch` and its gradient, one matrix per trainable
  /// parameter. Per-patch gradients are summed in batch order.
  double batch_gradient(const std::vector<std::size_t>& batch, std::vector<Matrix>& grads)
  {
    const std::size_t B = batch.size();
    if (slots_.size() < B) slots_.resize(B);
    std::vector<double> losses(B);
    parallel_for_workers(B, replicas_.size(), [&](std::size_t w, std::size_t b) {
      Replica& r = *replicas_[w];
      const Sample& s = ds_.samples[batch[b]];
      losses[b] = r.net->loss_and_gradient(s.signals, tensor_input(s), s.target);
      auto& slot = slots_[b];
      slot.resize(trainable_.size());
      for (std::size_t k = 0; k < trainable_.size(); ++k) slot[k] = r.params[trainable_[k]].grad;
    });
    grads.resize(trainable_.size());
    const double inv = 1.0 / static_cast<double>(B);
    for (std::size_t k = 0; k < trainable_.size(); ++k) {
      grads[k] = slots_[0][k];
      for (std::size_t b = 1; b < B; ++b) grads[k] += slots_[b][k];
      grads[k] *= inv;
    }
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum * inv;
  }

  double mean_loss(const std::vector<std::size_t>& indices)
  {
    if (indices.empty()) throw Error(ErrorCode::InvalidArgument, "no samples to evaluate");
    std::vector<double> losses(indices.size());
    parallel_for_workers(indices.size(), replicas_.size(), [&](std::size_t w, std::size_t i) {
      const Sample& s = ds_.samples[indices[i]];
      losses[i] = replicas_[w]->net->loss(s.signals, tensor_input(s), s.target);
    });
    double sum = 0.0;
    for (double l : losses) sum += l;
    return sum / static_cast<double>(indices.size());
  }

private:
  const Matrix* tensor_input(const Sample& s) const
  {
    if (model_.kind() == nn::ModelKind::S) return nullptr;
    if (s.s_tensors.rows() == 0) throw StateError("second-stage sample lacks Model S predictions");
    return &s.s_tensors;
  }

  const nn::Model& model_;
  const Dataset& ds_;
  std::vector<std::unique_ptr<Replica>> replicas_;
  std::vector<std::size_t> trainable_;
  std::vector<std::vector<Matrix>> slots_;
};

void check_dataset(const Dataset& ds, const nn::ModelConfig& cfg)
{
  if (ds.size() == 0) throw Error(ErrorCode::InvalidArgument, "training dataset is empty");
  if (ds.patch != cfg.patch || ds.signal_channels != cfg.signal_channels)
    throw Error(ErrorCode::InvalidArgument, "dataset patch size or channel count does not match the model config");
}

TrainLog run_training(nn::Model& model, const Dataset& ds, const TrainConfig& tc, const TrainHooks& hooks)
{
  const Split split = split_dataset(ds, tc.validation_fraction, tc.seed);
  Engine engine(model, ds);
  Adam adam(model.params(), tc.beta1, tc.beta2, tc.epsilon);
  ad::ParameterSet best = model.params();

  TrainLog log;
  double lr = tc.initial_lr;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stall = 0, step = 0;
  std::vector<Matrix> grads;

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    RandomStream rng(tc.seed, stream_id(Stream::Shuffle, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<long>(b),
                                           order.begin() + static_cast<long>(std::min(order.size(), b + tc.batch_size)));
      engine.sync();
      const double loss = engine.batch_gradient(batch, grads);
      if (!std::isfinite(loss))
        throw Error(ErrorCode::Numeric, "training loss became non-finite at epoch " + std::to_string(epoch) +
                                            ", step " + std::to_string(step + 1) + "; lower the learning rate");
      adam.step(grads, lr);
      sum += loss * static_cast<double>(batch.size());
      ++step;
      if (hooks.on_step) hooks.on_step(step, loss);
    }

    engine.sync();
    double val = engine.mean_loss(split.validation);
    if (hooks.validation_override) val = hooks.validation_override(epoch, val);
    if (!std::isfinite(val))
      throw Error(ErrorCode::Numeric, "validation loss became non-finite at epoch " + std::to_string(epoch));

    EpochRecord rec{epoch, sum / static_cast<double>(order.size()), val, lr, val < best_val};
    log.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (rec.improved) {
      best_val = val;
      log.best_epoch = epoch;
      stall = 0;
      best.copy_values_from(model.params());
    } else {
      ++stall;
      if (stall % tc.plateau_patience == 0) lr *= tc.lr_decay;
      if (stall >= tc.early_stop_patience) {
        log.stop = StopReason::EarlyStop;
        break;
      }
    }
  }
  log.best_validation = best_val;
  model.params().copy_values_from(best);
  return log;
}

} // namespace

TrainResult train_model_s(const Dataset& ds, const nn::ModelConfig& cfg, const TrainConfig& tc, const TrainHooks& hooks)
{
  tc.validate();
  cfg.validate();
  check_dataset(ds, cfg);
  nn::Model model(nn::ModelKind::S, cfg);
  he_initialize(model.params(), tc.seed);
  TrainLog log = run_training(model, ds, tc, hooks);
  return {std::move(model), std::move(log)};
}

void attach_stage_one(Dataset& ds, const nn::Model& model_s)
{
  if (model_s.kind() != nn::ModelKind::S) throw Error(ErrorCode::InvalidArgument, "stage one must be a Model S");
  check_dataset(ds, model_s.config());
  const std::size_t workers = std::max<std::size_t>(1, thread_count());
  std::vector<std::optional<nn::PatchNetwork>> nets(workers);
  parallel_for_workers(ds.size(), workers, [&](std::size_t w, std::size_t i) {
    if (!nets[w]) nets[w].emplace(nn::inference_network(model_s, nn::ModelKind::S, ""));
    ds.samples[i].s_tensors = nets[w]->forward(ds.samples[i].signals);
  });
}

TrainResult train_model_st(Dataset& ds, const nn::Model& model_s, const TrainConfig& tc, const TrainHooks& hooks)
{
  tc.validate();
  check_dataset(ds, model_s.config());
  if (model_s.kind() != nn::ModelKind::S) throw Error(ErrorCode::InvalidArgument, "stage one must be a Model S");
  attach_stage_one(ds, model_s);
  nn::Model model = nn::Model::stage_two(model_s);
  he_initialize(model.params(), tc.seed);
  TrainLog log = run_training(model, ds, tc, hooks);
  return {std::move(model), std::move(log)};
}

double evaluate_loss(const nn::Model& model, const Dataset& ds, const std::vector<std::size_t>& indices)
{
  check_dataset(ds, model.config());
  Engine engine(model, ds);
  return engine.mean_loss(indices);
}

} // namespace dtf::train
