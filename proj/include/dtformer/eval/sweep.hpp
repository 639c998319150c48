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

#include "dtformer/eval/metrics.hpp"
#include "dtformer/fitters.hpp"
#include "dtformer/nn/model.hpp"
#include "dtformer/phantom.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dtf::eval {

enum class Method { Ols, Cwlls, Cnls, ModelS, ModelST };

Method parse_method(std::string_view name);
const char* method_name(Method m) noexcept;
bool is_learned(Method m) noexcept;

struct Estimators {
  const nn::Model* model_s = nullptr;
  const nn::Model* model_st = nullptr;
  /// Patch stride for learned methods; 0 uses the model's own setting.
  std::size_t inference_stride = 0;
  CnlsConfig cnls{};
};

/// Tensor volume (mm^2/s) estimated from `dwi` with one method. Learned
/// methods throw MissingCheckpoint when their model is absent.
Volume4D estimate_tensors(Method method, const Volume4D& dwi, const GradientScheme& scheme, const Volume4D* mask,
                          const Estimators& est);

struct SweepConfig {
  std::vector<double> snr_db = {50.0, 30.0, 20.0, 15.0};
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  /// Adds a column without added noise.
  bool include_clean = true;
  std::vector<Method> methods = {Method::Cwlls};

  void validate() const;
};

struct SweepEntry {
  /// +inf for the noiseless column.
  double snr_db = 0.0;
  /// Repetition index, or -1 for the mean over repetitions.
  int repetition = -1;
  MetricsReport report;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  std::vector<SweepEntry> means;

  /// Mean entry for (snr, method); throws when absent.
  const MetricsReport& mean(double snr_db, Method m) const;
  nlohmann::json to_json() const;
  /// Header snr_db,repetition,method,region,metric,value; mean rows use
  /// repetition "mean".
  std::string to_csv() const;
};

/// For every SNR level and repetition, corrupts the phantom's signals once
/// and evaluates each method against the ground truth. Repetition r uses the
/// same noise draws at every SNR level, so levels differ only in scale.
SweepResult noise_sweep(const Phantom& phantom, const GradientScheme& scheme, const SweepConfig& cfg,
                        const Estimators& est);

} // namespace dtf::eval
