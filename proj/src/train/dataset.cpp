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

#include "dtformer/train/dataset.hpp"

#include "dtformer/errors.hpp"
#include "dtformer/fitters.hpp"
#include "dtformer/nn/predict.hpp"
#include "dtformer/random.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace dtf::train {

std::size_t Dataset::group_count() const
{
  std::set<std::size_t> g;
  for (const auto& s : samples) g.insert(s.group);
  return g.size();
}

void add_volume(Dataset& ds, const Volume4D& normalized, const Volume4D& tensors, const Volume4D* mask,
                std::size_t group, const nn::ModelConfig& cfg, std::size_t stride)
{
  if (normalized.channels() != cfg.signal_channels)
    throw ShapeError("add_volume", "expected " + std::to_string(cfg.signal_channels) + " signal channels");
  if (tensors.channels() != 6 || !tensors.same_grid(normalized))
    throw ShapeError("add_volume", "reference tensors must be a 6-channel volume on the signal grid");
  if (mask && (!mask->same_grid(normalized) || mask->channels() != 1))
    throw ShapeError("add_volume", "mask grid does not match the signal volume");
  if (ds.size() > 0 && (ds.patch != cfg.patch || ds.signal_channels != cfg.signal_channels))
    throw Error(ErrorCode::InvalidArgument, "dataset was built for a different patch size or channel count");
  ds.patch = cfg.patch;
  ds.signal_channels = cfg.signal_channels;

  const std::size_t L = cfg.patch;
  for (const auto& o : nn::patch_origins(normalized.dims(), L, stride == 0 ? L : stride)) {
    nn::PatchSequence sig = nn::extract_patch(normalized, o, L);
    if (mask) {
      const nn::PatchSequence m = nn::extract_patch(*mask, o, L);
      if (m.features.isZero(0.0)) continue;
      nn::apply_mask(sig, mask, L);
    }
    nn::PatchSequence ref = nn::extract_patch(tensors, o, L);
    ref.features *= cfg.tensor_scale;
    if (mask) nn::apply_mask(ref, mask, L);
    ds.samples.push_back({std::move(sig.features), std::move(ref.features), {}, o, group});
  }
}

LabelMode parse_label_mode(std::string_view name)
{
  if (name == "ground-truth") return LabelMode::GroundTruth;
  if (name == "dense-fit") return LabelMode::DenseFit;
  throw Error(ErrorCode::InvalidArgument, "unknown label mode '" + std::string(name) + "' (ground-truth|dense-fit)");
}

const char* label_mode_name(LabelMode m) noexcept
{
  return m == LabelMode::GroundTruth ? "ground-truth" : "dense-fit";
}

void SyntheticDatasetSpec::validate() const
{
  if (phantoms == 0) throw Error(ErrorCode::InvalidArgument, "dataset needs at least one phantom");
  if (snr_db.empty()) throw Error(ErrorCode::InvalidArgument, "dataset needs at least one SNR level");
  for (double s : snr_db)
    if (std::isnan(s)) throw Error(ErrorCode::InvalidArgument, "SNR must be a number or inf");
  if (dense_directions < 6) throw Error(ErrorCode::InvalidArgument, "dense scheme needs at least 6 directions");
}

std::uint64_t phantom_seed(std::uint64_t seed, std::size_t index)
{
  const auto u = Philox4x32::generate({static_cast<std::uint32_t>(index), 0, 0, 0},
                                      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  return (static_cast<std::uint64_t>(u[0]) << 32) | u[1];
}

Dataset synthetic_dataset(const SyntheticDatasetSpec& spec, const GradientScheme& scheme, const nn::ModelConfig& cfg)
{
  spec.validate();
  Dataset ds;
  for (std::size_t i = 0; i < spec.phantoms; ++i) {
    PhantomSpec ps;
    ps.dims = spec.dims;
    ps.seed = phantom_seed(spec.seed, i);
    ps.model = spec.model;
    ps.length_scale = spec.length_scale;
    const Phantom ph = generate_phantom(ps);

    const double snr = spec.snr_db[i % spec.snr_db.size()];
    const double ref = reference_amplitude(ph.s0);
    const NoiseSpec noise{snr, ref, ps.seed ^ 0x5eedull};
    const Volume4D dwi = add_rician_noise(synthesize_dwi(ph.tensors, ph.s0, scheme), noise);
    const Volume4D mask = nn::foreground_mask(ph.labels);
    const Volume4D normalized = nn::normalize_signals(dwi, scheme, cfg);

    if (spec.labels == LabelMode::GroundTruth) {
      add_volume(ds, normalized, ph.tensors, &mask, i, cfg, spec.stride);
    } else {
      const double b = *std::max_element(scheme.bvalues().begin(), scheme.bvalues().end());
      const GradientScheme dense = uniform_scheme(spec.dense_directions, b);
      const NoiseSpec dense_noise{snr, ref, ps.seed ^ 0xd15eull};
      const Volume4D dense_dwi = add_rician_noise(synthesize_dwi(ph.tensors, ph.s0, dense), dense_noise);
      add_volume(ds, normalized, fit_volume(dense_dwi, dense, FitMethod::Cwlls), &mask, i, cfg, spec.stride);
    }
  }
  return ds;
}

} // namespace dtf::train
