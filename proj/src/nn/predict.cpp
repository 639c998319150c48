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

#include "dtformer/nn/predict.hpp"

#include "dtformer/errors.hpp"
#include "dtformer/parallel.hpp"

#include <algorithm>
#include <optional>

namespace dtf::nn {

Volume4D normalize_signals(const Volume4D& dwi, const GradientScheme& scheme, const ModelConfig& cfg)
{
  if (dwi.channels() != scheme.size())
    throw ShapeError("normalize_signals", "volume has " + std::to_string(dwi.channels()) + " channels, scheme has " +
                                              std::to_string(scheme.size()) + " entries");
  if (!scheme.b0_index()) throw Error(ErrorCode::InvalidScheme, "normalization needs a b = 0 measurement");
  const auto& w = scheme.weighted_indices();
  const std::size_t b0 = *scheme.b0_index();
  Volume4D out(dwi.dims(), w.size());
  out.voxel_size = dwi.voxel_size;
  for (std::size_t v = 0; v < dwi.voxel_count(); ++v) {
    const double s0 = dwi.at(v, b0);
    if (!(s0 > 0.0)) continue;
    for (std::size_t c = 0; c < w.size(); ++c)
      out.at(v, c) = std::clamp(dwi.at(v, w[c]) / s0, cfg.signal_min, cfg.signal_max);
  }
  return out;
}

Volume4D foreground_mask(const Volume4D& labels)
{
  if (labels.channels() != 1) throw ShapeError("foreground_mask", "label volume must have 1 channel");
  Volume4D m(labels.dims(), 1);
  m.voxel_size = labels.voxel_size;
  for (std::size_t v = 0; v < labels.voxel_count(); ++v) m.at(v, 0) = labels.at(v, 0) != 0.0 ? 1.0 : 0.0;
  return m;
}

void apply_mask(PatchSequence& seq, const Volume4D* mask, std::size_t patch)
{
  if (!mask) return;
  ad::Index r = 0;
  for (std::size_t i = 0; i < patch; ++i)
    for (std::size_t j = 0; j < patch; ++j)
      for (std::size_t k = 0; k < patch; ++k, ++r)
        if (mask->at(mask->voxel_index(seq.origin[0] + i, seq.origin[1] + j, seq.origin[2] + k), 0) == 0.0)
          seq.features.row(r).setZero();
}

Volume4D predict_volume(const Model& model, const Volume4D& normalized, const Volume4D* mask, std::size_t stride)
{
  const ModelConfig& cfg = model.config();
  if (normalized.channels() != cfg.signal_channels)
    throw ShapeError("predict_volume", "expected " + std::to_string(cfg.signal_channels) + " signal channels, got " +
                                           std::to_string(normalized.channels()));
  if (mask && (!mask->same_grid(normalized) || mask->channels() != 1))
    throw ShapeError("predict_volume", "mask grid does not match the signal volume");
  if (stride == 0) stride = cfg.inference_stride;
  const std::size_t L = cfg.patch;
  const auto origins = patch_origins(normalized.dims(), L, stride);

  Volume4D sum(normalized.dims(), 6);
  std::vector<std::uint32_t> count(normalized.voxel_count(), 0);

  const std::size_t workers = std::max<std::size_t>(1, thread_count());
  struct Scratch {
    std::optional<PatchNetwork> s, st;
  };
  std::vector<Scratch> scratch(workers);
  constexpr std::size_t kChunk = 256;
  std::vector<PatchSequence> out(std::min(kChunk, origins.size()));

  for (std::size_t begin = 0; begin < origins.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, origins.size() - begin);
    parallel_for_workers(n, workers, [&](std::size_t w, std::size_t i) {
      Scratch& sc = scratch[w];
      PatchSequence seq = extract_patch(normalized, origins[begin + i], L);
      apply_mask(seq, mask, L);
      if (model.kind() == ModelKind::S) {
        if (!sc.s) sc.s.emplace(inference_network(model, ModelKind::S, ""));
        out[i] = {sc.s->forward(seq.features), seq.origin};
      } else {
        if (!sc.s) sc.s.emplace(inference_network(model, ModelKind::S, "s."));
        if (!sc.st) sc.st.emplace(inference_network(model, ModelKind::ST, ""));
        const ad::Matrix t = sc.s->forward(seq.features);
        out[i] = {sc.st->forward(seq.features, t), seq.origin};
      }
    });
    for (std::size_t i = 0; i < n; ++i) accumulate_patch(sum, count, out[i], L);
  }

  const double inv_scale = 1.0 / cfg.tensor_scale;
  for (std::size_t v = 0; v < sum.voxel_count(); ++v) {
    const bool keep = count[v] > 0 && (!mask || mask->at(v, 0) != 0.0);
    for (std::size_t c = 0; c < 6; ++c)
      sum.at(v, c) = keep ? sum.at(v, c) / static_cast<double>(count[v]) * inv_scale : 0.0;
  }
  sum.voxel_size = normalized.voxel_size;
  return sum;
}

} // namespace dtf::nn
