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

#include "dtformer/errors.hpp"
#include "dtformer/parallel.hpp"
#include "dtformer/random.hpp"
#include "dtformer/train/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace dtf;
using namespace dtf::train;
using ad::Matrix;

namespace {

nn::ModelConfig smoke_config()
{
  nn::ModelConfig c;
  c.width = 32;
  c.head_width = 32;
  return c;
}

// 200 patches from four noiseless 16^3 phantoms.
const Dataset& smoke_dataset()
{
  static const Dataset ds = [] {
    SyntheticDatasetSpec spec;
    spec.phantoms = 4;
    spec.dims = {16, 16, 16};
    spec.seed = 42;
    spec.snr_db = {std::numeric_limits<double>::infinity()};
    Dataset d = synthetic_dataset(spec, skare6_scheme(), smoke_config());
    d.samples.resize(200);
    return d;
  }();
  return ds;
}

} // namespace

TEST_CASE("squared-error loss")
{
  const Matrix ref = Matrix::Random(125, 6);
  CHECK(loss_mse(ref, ref) == 0.0);
  CHECK(loss_mse(Matrix(ref.array() + 1.0), ref) == doctest::Approx(750.0).epsilon(1e-12));
  CHECK(loss_mse(std::vector<Matrix>{ref, Matrix(ref.array() + 1.0)}, std::vector<Matrix>{ref, ref}) ==
        doctest::Approx(375.0));
  CHECK_THROWS_AS(loss_mse(Matrix::Zero(125, 6), Matrix::Zero(125, 5)), ShapeError);

  // Gradient of the batch mean against central differences.
  std::vector<Matrix> pred{Matrix::Random(4, 6), Matrix::Random(4, 6)}, tgt{Matrix::Random(4, 6), Matrix::Random(4, 6)};
  const Matrix g = loss_mse_gradient(pred[1], tgt[1], 2);
  const double h = 1e-5;
  for (ad::Index i = 0; i < g.size(); ++i) {
    auto up = pred, down = pred;
    up[1].data()[i] += h;
    down[1].data()[i] -= h;
    const double fd = (loss_mse(up, tgt) - loss_mse(down, tgt)) / (2 * h);
    CHECK(std::abs(fd - g.data()[i]) <= 1e-4 * std::max(1e-8, std::abs(fd)));
  }
}

TEST_CASE("He initialization")
{
  ad::ParameterSet ps;
  ps.add("w", 64, 512);
  ps.add("sig.embed.p", 125, 64);
  ps.add("m0.gamma", 1, 64);
  ps.add("m0.beta", 1, 64);
  ps.add("head.b", 1, 6);
  auto& frozen = ps.add("frozen", 3, 3, false);
  frozen.value.setConstant(7.0);
  for (auto& p : ps)
    if (p.trainable) p.value.setConstant(3.0);
  he_initialize(ps, 5);

  const Matrix& w = ps.at("w").value;
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
  CHECK(std::abs(var / (2.0 / 64.0) - 1.0) < 0.05);
  CHECK(ps.at("sig.embed.p").value.isZero(0.0));
  CHECK(ps.at("m0.beta").value.isZero(0.0));
  CHECK(ps.at("head.b").value.isZero(0.0));
  CHECK(ps.at("m0.gamma").value.isOnes(0.0));
  CHECK(frozen.value.isConstant(7.0, 0.0));

  ad::ParameterSet again = ps;
  he_initialize(again, 5);
  CHECK(ad::parameter_hash(again) == ad::parameter_hash(ps));
  he_initialize(again, 6);
  CHECK(ad::parameter_hash(again) != ad::parameter_hash(ps));
}

TEST_CASE("Adam leaves parameters alone under a zero gradient")
{
  ad::ParameterSet ps;
  ps.add("w", 3, 4).value = Matrix::Random(3, 4);
  ps.add("b", 1, 4, false);
  const auto h = ad::parameter_hash(ps);
  Adam adam(ps);
  adam.step({Matrix::Zero(3, 4)}, 1e-3);
  CHECK(ad::parameter_hash(ps) == h);
  CHECK_THROWS_AS(adam.step({}, 1e-3), ShapeError);
}

TEST_CASE("dataset construction and split")
{
  const Dataset& ds = smoke_dataset();
  CHECK(ds.size() == 200);
  CHECK(ds.samples[0].signals.rows() == 125);
  CHECK(ds.samples[0].target.cols() == 6);
  // Targets are scaled tensors of order one.
  CHECK(ds.samples[0].target.col(0).mean() > 0.1);
  CHECK(ds.samples[0].target.col(0).mean() < 5.0);

  const Split split = split_dataset(ds, 0.2, 1);
  CHECK(split.train.size() + split.validation.size() == ds.size());
  std::set<std::size_t> train_groups, val_groups;
  for (auto i : split.train) train_groups.insert(ds.samples[i].group);
  for (auto i : split.validation) val_groups.insert(ds.samples[i].group);
  for (auto g : val_groups) CHECK(train_groups.count(g) == 0);
  CHECK(val_groups.size() == 1);

  CHECK_THROWS_AS(train_model_s(Dataset{}, smoke_config(), TrainConfig{}), Error);
}

TEST_CASE("loss falls over the first steps on a fixed batch")
{
  const nn::ModelConfig cfg = smoke_config();
  nn::Model m(nn::ModelKind::S, cfg);
  he_initialize(m.params(), 1);
  nn::PatchNetwork net(nn::ModelKind::S, cfg, m.params());
  Adam adam(m.params());
  const Dataset& ds = smoke_dataset();
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 5; ++step) {
    std::vector<Matrix> grads;
    double loss = 0.0;
    for (std::size_t b = 0; b < 10; ++b) {
      loss += net.loss_and_gradient(ds.samples[b].signals, nullptr, ds.samples[b].target) / 10.0;
      std::size_t k = 0;
      for (const auto& p : m.params()) {
        if (grads.size() <= k) grads.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        grads[k++] += p.grad / 10.0;
      }
    }
    CHECK(loss < prev);
    prev = loss;
    adam.step(grads, 1e-4);
  }
}

TEST_CASE("smoke training, schedule and freeze contract")
{
  const nn::ModelConfig cfg = smoke_config();
  TrainConfig tc;
  tc.max_epochs = 50;
  tc.seed = 3;
  tc.initial_lr = 1e-4;
  Dataset ds = smoke_dataset();

  const TrainResult s = train_model_s(ds, cfg, tc);
  const auto& ep = s.log.epochs;
  REQUIRE(ep.size() >= 2);
  CHECK(ep.back().train_loss < 0.1 * ep.front().train_loss);
  for (std::size_t i = 1; i < ep.size(); ++i) {
    CHECK(ep[i].epoch == ep[i - 1].epoch + 1);
    CHECK(ep[i].lr <= ep[i - 1].lr);
    if (ep[i].lr < ep[i - 1].lr) CHECK(ep[i].lr == ep[i - 1].lr * 0.9);
    // Each stall decays the rate used in the following epoch.
    CHECK(ep[i].lr == (ep[i - 1].improved ? ep[i - 1].lr : ep[i - 1].lr * 0.9));
  }
  CHECK(s.log.best_validation == doctest::Approx(evaluate_loss(s.model, ds, split_dataset(ds, 0.2, 3).validation)));

  const auto hash_s = ad::parameter_hash(s.model.params());
  const TrainResult st = train_model_st(ds, s.model, tc);
  CHECK(ad::parameter_hash(s.model.params()) == hash_s);
  CHECK(ad::parameter_hash(st.model.stage_one().params()) == hash_s);
  MESSAGE("smoke S val " << s.log.best_validation << " ST val " << st.log.best_validation);

  // Same seeds and a different worker count reproduce the log exactly.
  TrainConfig short_tc = tc;
  short_tc.max_epochs = 2;
  set_thread_count(1);
  const TrainResult a = train_model_s(ds, cfg, short_tc);
  set_thread_count(3);
  const TrainResult b = train_model_s(ds, cfg, short_tc);
  set_thread_count(0);
  REQUIRE(a.log.epochs.size() == b.log.epochs.size());
  for (std::size_t i = 0; i < a.log.epochs.size(); ++i) {
    CHECK(a.log.epochs[i].train_loss == b.log.epochs[i].train_loss);
    CHECK(a.log.epochs[i].validation_loss == b.log.epochs[i].validation_loss);
  }
  CHECK(ad::parameter_hash(a.model.params()) == ad::parameter_hash(b.model.params()));
}

TEST_CASE("a frozen validation loss triggers early stopping")
{
  TrainConfig tc;
  tc.max_epochs = 10;
  TrainHooks hooks;
  hooks.validation_override = [](std::size_t, double) { return 1.0; };
  Dataset ds = smoke_dataset();
  ds.samples.resize(30);
  nn::ModelConfig cfg = smoke_config();
  cfg.width = cfg.head_width = 8;
  const TrainResult r = train_model_s(ds, cfg, tc, hooks);
  CHECK(r.log.stop == StopReason::EarlyStop);
  REQUIRE(r.log.epochs.size() == 3);
  CHECK(r.log.epochs[1].lr == tc.initial_lr);
  CHECK(r.log.epochs[2].lr == tc.initial_lr * 0.9);
  CHECK(r.log.best_epoch == 1);
  const std::string jsonl = r.log.to_jsonl();
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 4);
  CHECK(jsonl.find("\"stop_reason\":\"early_stop\"") != std::string::npos);

  hooks.validation_override = [](std::size_t, double) { return std::nan(""); };
  CHECK_THROWS_AS(train_model_s(ds, cfg, tc, hooks), Error);
  TrainConfig bad = tc;
  bad.lr_decay = 1.0;
  CHECK_THROWS_AS(train_model_s(ds, cfg, bad), Error);
}
