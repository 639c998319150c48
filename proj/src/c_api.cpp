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

#include "dtformer/dtformer.h"

#include "dtformer/ad/checkpoint.hpp"
#include "dtformer/errors.hpp"
#include "dtformer/eval/metrics.hpp"
#include "dtformer/eval/sweep.hpp"
#include "dtformer/nn/predict.hpp"
#include "dtformer/parallel.hpp"
#include "dtformer/phantom.hpp"
#include "dtformer/train/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>

struct dtf_volume {
  dtf::Volume4D v;
};
struct dtf_scheme {
  dtf::GradientScheme s;
};
struct dtf_model {
  dtf::nn::Model m;
};
struct dtf_dataset {
  dtf::nn::ModelConfig cfg;
  dtf::train::Dataset ds;
  std::size_t next_group = 0;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

template <class F>
dtf_status guard(F&& f)
{
  try {
    f();
    g_last_error.clear();
    return DTF_OK;
  } catch (const dtf::Error& e) {
    g_last_error = e.what();
    return static_cast<dtf_status>(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("bad JSON argument: ") + e.what();
    return DTF_ERR_FORMAT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DTF_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DTF_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return DTF_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what)
{
  if (!p) throw dtf::Error(dtf::ErrorCode::InvalidArgument, std::string(what) + " must not be null");
}

json parse_options(const char* text)
{
  if (!text || !*text) return json::object();
  json j = json::parse(text);
  if (!j.is_object()) throw dtf::Error(dtf::ErrorCode::Format, "options must be a JSON object");
  return j;
}

char* dup_string(const std::string& s)
{
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_string(char** out, const std::string& s)
{
  if (out) *out = dup_string(s);
}

/// Reads a number that may be given as the string "inf".
double read_snr(const json& j)
{
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    throw dtf::Error(dtf::ErrorCode::InvalidArgument, "bad SNR value '" + s + "'");
  }
  return j.get<double>();
}

dtf::Dims read_dims(const json& j)
{
  if (!j.is_array() || j.size() != 3) throw dtf::Error(dtf::ErrorCode::InvalidArgument, "dims must be [x, y, z]");
  dtf::Dims d{};
  for (int i = 0; i < 3; ++i) {
    const long long v = j[static_cast<std::size_t>(i)].get<long long>();
    if (v <= 0) throw dtf::Error(dtf::ErrorCode::InvalidArgument, "dims must be positive");
    d[static_cast<std::size_t>(i)] = static_cast<std::size_t>(v);
  }
  return d;
}

void check_keys(const json& j, std::initializer_list<const char*> known, const char* what)
{
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw dtf::Error(dtf::ErrorCode::InvalidArgument, std::string("unknown ") + what + " option '" + k + "'");
  }
}

dtf::nn::ModelConfig model_config(const char* text)
{
  json merged = dtf::nn::config_to_json(dtf::nn::ModelConfig{});
  const json j = parse_options(text);
  check_keys(j,
             {"patch", "width", "head_width", "heads", "modules", "signal_channels", "attention", "stabilizers",
              "inference_stride", "signal_min", "signal_max", "tensor_scale"},
             "model");
  merged.update(j);
  return dtf::nn::config_from_json(merged);
}

dtf::train::TrainConfig train_config(const char* text)
{
  dtf::train::TrainConfig c;
  const json j = parse_options(text);
  check_keys(j,
             {"batch_size", "initial_lr", "lr_decay", "plateau_patience", "early_stop_patience", "max_epochs", "seed",
              "validation_fraction", "beta1", "beta2", "epsilon"},
             "training");
  c.batch_size = j.value("batch_size", c.batch_size);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.validate();
  return c;
}

dtf::Volume4D mask_of(const dtf_volume* labels)
{
  return dtf::nn::foreground_mask(labels->v);
}

void zero_outside(dtf::Volume4D& tensors, const dtf::Volume4D& mask)
{
  if (!mask.same_grid(tensors)) throw dtf::ShapeError("fit", "mask grid does not match the data");
  for (std::size_t v = 0; v < tensors.voxel_count(); ++v)
    if (mask.at(v, 0) == 0.0)
      for (double& x : tensors.voxel(v)) x = 0.0;
}

} // namespace

extern "C" {

const char* dtf_version(void) { return DTF_VERSION_STRING; }

const char* dtf_last_error(void) { return g_last_error.c_str(); }

const char* dtf_status_name(dtf_status status)
{
  if (status == DTF_OK) return "ok";
  if (status < DTF_ERR_INVALID_ARGUMENT || status > DTF_ERR_INTERNAL) return "unknown";
  return dtf::error_code_name(static_cast<dtf::ErrorCode>(status));
}

void dtf_set_threads(size_t threads) { dtf::set_thread_count(threads); }

void dtf_free_string(char* s) { std::free(s); }

dtf_status dtf_scheme_skare6(double bvalue, dtf_scheme** out)
{
  return guard([&] {
    need(out, "out");
    *out = new dtf_scheme{dtf::skare6_scheme(bvalue)};
  });
}

dtf_status dtf_scheme_uniform(size_t directions, double bvalue, dtf_scheme** out)
{
  return guard([&] {
    need(out, "out");
    *out = new dtf_scheme{dtf::uniform_scheme(directions, bvalue)};
  });
}

dtf_status dtf_scheme_load_fsl(const char* bvec_path, const char* bval_path, dtf_scheme** out)
{
  return guard([&] {
    need(bvec_path, "bvec path");
    need(bval_path, "bval path");
    need(out, "out");
    *out = new dtf_scheme{dtf::load_fsl_scheme(bvec_path, bval_path)};
  });
}

dtf_status dtf_scheme_save_fsl(const dtf_scheme* scheme, const char* bvec_path, const char* bval_path)
{
  return guard([&] {
    need(scheme, "scheme");
    need(bvec_path, "bvec path");
    need(bval_path, "bval path");
    dtf::save_fsl_scheme(scheme->s, bvec_path, bval_path);
  });
}

size_t dtf_scheme_size(const dtf_scheme* scheme) { return scheme ? scheme->s.size() : 0; }

void dtf_scheme_free(dtf_scheme* scheme) { delete scheme; }

dtf_status dtf_volume_create(size_t nx, size_t ny, size_t nz, size_t channels, dtf_volume** out)
{
  return guard([&] {
    need(out, "out");
    if (!nx || !ny || !nz || !channels) throw dtf::Error(dtf::ErrorCode::InvalidArgument, "volume sizes must be positive");
    *out = new dtf_volume{dtf::Volume4D({nx, ny, nz}, channels)};
  });
}

dtf_status dtf_volume_load(const char* path, dtf_volume** out)
{
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new dtf_volume{dtf::load_volume(path)};
  });
}

dtf_status dtf_volume_save(const dtf_volume* volume, const char* path, uint64_t seed, const char* description)
{
  return guard([&] {
    need(volume, "volume");
    need(path, "path");
    dtf::save_volume(volume->v, path, {seed, description ? description : ""});
  });
}

void dtf_volume_dims(const dtf_volume* volume, size_t dims[3])
{
  for (int i = 0; i < 3; ++i) dims[i] = volume ? volume->v.dims()[static_cast<std::size_t>(i)] : 0;
}

size_t dtf_volume_channels(const dtf_volume* volume) { return volume ? volume->v.channels() : 0; }

double* dtf_volume_data(dtf_volume* volume) { return volume ? volume->v.data().data() : nullptr; }

void dtf_volume_free(dtf_volume* volume) { delete volume; }

dtf_status dtf_phantom_generate(const char* options_json, dtf_volume** tensors, dtf_volume** labels, dtf_volume** s0)
{
  return guard([&] {
    need(tensors, "tensors");
    need(labels, "labels");
    need(s0, "s0");
    const json j = parse_options(options_json);
    check_keys(j, {"dims", "seed", "model", "length_scale", "s0_amplitude"}, "phantom");
    dtf::PhantomSpec spec;
    if (j.contains("dims")) spec.dims = read_dims(j["dims"]);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("model")) spec.model = dtf::parse_region_model(j["model"].get<std::string>());
    spec.length_scale = j.value("length_scale", spec.length_scale);
    spec.s0_amplitude = j.value("s0_amplitude", spec.s0_amplitude);
    dtf::Phantom ph = dtf::generate_phantom(spec);
    *tensors = new dtf_volume{std::move(ph.tensors)};
    *labels = new dtf_volume{std::move(ph.labels)};
    *s0 = new dtf_volume{std::move(ph.s0)};
  });
}

dtf_status dtf_synthesize(const dtf_volume* tensors, const dtf_volume* s0, const dtf_scheme* scheme, dtf_volume** dwi)
{
  return guard([&] {
    need(tensors, "tensors");
    need(s0, "s0");
    need(scheme, "scheme");
    need(dwi, "out");
    *dwi = new dtf_volume{dtf::synthesize_dwi(tensors->v, s0->v, scheme->s)};
  });
}

dtf_status dtf_add_noise(const dtf_volume* dwi, double snr_db, double reference, size_t reference_channel,
                         uint64_t seed, dtf_volume** out)
{
  return guard([&] {
    need(dwi, "dwi");
    need(out, "out");
    if (std::isnan(snr_db)) throw dtf::Error(dtf::ErrorCode::InvalidArgument, "SNR must be a number");
    const double ref = reference > 0.0 ? reference : dtf::reference_amplitude(dwi->v, reference_channel);
    *out = new dtf_volume{dtf::add_rician_noise(dwi->v, dtf::NoiseSpec{snr_db, ref, seed})};
  });
}

dtf_status dtf_fit(const dtf_volume* dwi, const dtf_scheme* scheme, const char* method, const dtf_model* model,
                   const dtf_volume* mask, size_t stride, dtf_volume** out)
{
  return guard([&] {
    need(dwi, "dwi");
    need(scheme, "scheme");
    need(method, "method");
    need(out, "out");
    const dtf::eval::Method m = dtf::eval::parse_method(method);
    dtf::eval::Estimators est;
    est.inference_stride = stride;
    if (model) (model->m.kind() == dtf::nn::ModelKind::S ? est.model_s : est.model_st) = &model->m;
    std::optional<dtf::Volume4D> fg;
    if (mask) fg = mask_of(mask);
    dtf::Volume4D t = dtf::eval::estimate_tensors(m, dwi->v, scheme->s, fg ? &*fg : nullptr, est);
    if (fg) zero_outside(t, *fg);
    *out = new dtf_volume{std::move(t)};
  });
}

dtf_status dtf_model_load(const char* path, dtf_model** out)
{
  return guard([&] {
    need(path, "path");
    need(out, "out");
    if (!std::filesystem::exists(path))
      throw dtf::Error(dtf::ErrorCode::MissingCheckpoint, std::string("checkpoint not found: ") + path);
    *out = new dtf_model{dtf::nn::Model::load(path)};
  });
}

dtf_status dtf_model_save(const dtf_model* model, const char* path, const char* metadata_json)
{
  return guard([&] {
    need(model, "model");
    need(path, "path");
    model->m.save(path, parse_options(metadata_json));
  });
}

dtf_status dtf_model_info(const dtf_model* model, char** out)
{
  return guard([&] {
    need(model, "model");
    need(out, "out");
    json j{{"kind", dtf::nn::model_kind_name(model->m.kind())},
           {"config", dtf::nn::config_to_json(model->m.config())},
           {"parameters", model->m.params().scalar_count()},
           {"hash", dtf::ad::parameter_hash(model->m.params())},
           {"stage_one_hash", dtf_model_stage_one_hash(model)}};
    put_string(out, j.dump());
  });
}

uint64_t dtf_model_stage_one_hash(const dtf_model* model)
{
  if (!model) return 0;
  if (model->m.kind() == dtf::nn::ModelKind::S) return dtf::ad::parameter_hash(model->m.params());
  return dtf::ad::parameter_hash(model->m.stage_one().params());
}

void dtf_model_free(dtf_model* model) { delete model; }

dtf_status dtf_dataset_create(const char* model_config_json, dtf_dataset** out)
{
  return guard([&] {
    need(out, "out");
    *out = new dtf_dataset{model_config(model_config_json), {}, 0};
  });
}

dtf_status dtf_dataset_add_synthetic(dtf_dataset* ds, const char* spec_json, const dtf_scheme* scheme)
{
  return guard([&] {
    need(ds, "dataset");
    need(scheme, "scheme");
    const json j = parse_options(spec_json);
    check_keys(j, {"phantoms", "dims", "seed", "model", "length_scale", "snr_db", "labels", "dense_directions", "stride"},
               "dataset");
    dtf::train::SyntheticDatasetSpec spec;
    spec.phantoms = j.value("phantoms", spec.phantoms);
    if (j.contains("dims")) spec.dims = read_dims(j["dims"]);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("model")) spec.model = dtf::parse_region_model(j["model"].get<std::string>());
    spec.length_scale = j.value("length_scale", spec.length_scale);
    if (j.contains("snr_db")) {
      spec.snr_db.clear();
      for (const auto& s : j["snr_db"]) spec.snr_db.push_back(read_snr(s));
    }
    if (j.contains("labels")) spec.labels = dtf::train::parse_label_mode(j["labels"].get<std::string>());
    spec.dense_directions = j.value("dense_directions", spec.dense_directions);
    spec.stride = j.value("stride", spec.stride);
    dtf::train::Dataset part = dtf::train::synthetic_dataset(spec, scheme->s, ds->cfg);
    for (auto& s : part.samples) {
      s.group += ds->next_group;
      ds->ds.samples.push_back(std::move(s));
    }
    ds->ds.patch = part.patch;
    ds->ds.signal_channels = part.signal_channels;
    ds->next_group += spec.phantoms;
  });
}

dtf_status dtf_dataset_add_volume(dtf_dataset* ds, const dtf_volume* dwi, const dtf_scheme* scheme,
                                  const dtf_volume* tensors, const dtf_volume* labels)
{
  return guard([&] {
    need(ds, "dataset");
    need(dwi, "dwi");
    need(scheme, "scheme");
    need(tensors, "tensors");
    const dtf::Volume4D normalized = dtf::nn::normalize_signals(dwi->v, scheme->s, ds->cfg);
    std::optional<dtf::Volume4D> fg;
    if (labels) fg = mask_of(labels);
    dtf::train::add_volume(ds->ds, normalized, tensors->v, fg ? &*fg : nullptr, ds->next_group++, ds->cfg);
  });
}

size_t dtf_dataset_size(const dtf_dataset* ds) { return ds ? ds->ds.size() : 0; }

void dtf_dataset_free(dtf_dataset* ds) { delete ds; }

dtf_status dtf_train(dtf_dataset* ds, const char* stage, const dtf_model* frozen_s, const char* train_config_json,
                     dtf_model** out, char** log_jsonl)
{
  return guard([&] {
    need(ds, "dataset");
    need(stage, "stage");
    need(out, "out");
    const dtf::train::TrainConfig tc = train_config(train_config_json);
    const dtf::nn::ModelKind kind = dtf::nn::parse_model_kind(stage);
    std::optional<dtf::train::TrainResult> r;
    if (kind == dtf::nn::ModelKind::S) {
      r.emplace(dtf::train::train_model_s(ds->ds, ds->cfg, tc));
    } else {
      if (!frozen_s) throw dtf::Error(dtf::ErrorCode::MissingCheckpoint, "stage st needs a frozen Model S");
      if (frozen_s->m.kind() != dtf::nn::ModelKind::S)
        throw dtf::Error(dtf::ErrorCode::InvalidArgument, "the frozen checkpoint is not a Model S");
      const auto& a = frozen_s->m.config();
      if (a.patch != ds->cfg.patch || a.signal_channels != ds->cfg.signal_channels)
        throw dtf::Error(dtf::ErrorCode::InvalidArgument,
                         "the frozen Model S was trained with a different patch size or channel count");
      r.emplace(dtf::train::train_model_st(ds->ds, frozen_s->m, tc));
    }
    if (log_jsonl) *log_jsonl = dup_string(r->log.to_jsonl());
    *out = new dtf_model{std::move(r->model)};
  });
}

dtf_status dtf_compare(const dtf_volume* pred, const dtf_volume* ref, const dtf_volume* labels, const char* method,
                       char** out_json, char** out_csv)
{
  return guard([&] {
    need(pred, "prediction");
    need(ref, "reference");
    std::optional<dtf::Volume4D> fg;
    if (labels) fg = mask_of(labels);
    const auto rep = dtf::eval::compare_volumes(pred->v, ref->v, fg ? &*fg : nullptr, labels ? &labels->v : nullptr,
                                                method ? method : "");
    put_string(out_json, rep.to_json().dump(2));
    put_string(out_csv, dtf::eval::reports_to_csv({rep}));
  });
}

dtf_status dtf_sweep(const dtf_volume* tensors, const dtf_volume* labels, const dtf_volume* s0,
                     const dtf_scheme* scheme, const char* config_json, const dtf_model* model_s,
                     const dtf_model* model_st, char** out_json, char** out_csv)
{
  return guard([&] {
    need(tensors, "tensors");
    need(labels, "labels");
    need(s0, "s0");
    need(scheme, "scheme");
    const json j = parse_options(config_json);
    check_keys(j, {"snr_db", "repetitions", "seed", "include_clean", "methods", "inference_stride"}, "sweep");
    dtf::eval::SweepConfig cfg;
    if (j.contains("snr_db")) {
      cfg.snr_db.clear();
      for (const auto& s : j["snr_db"]) cfg.snr_db.push_back(read_snr(s));
    }
    cfg.repetitions = j.value("repetitions", cfg.repetitions);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.include_clean = j.value("include_clean", cfg.include_clean);
    if (j.contains("methods")) {
      cfg.methods.clear();
      for (const auto& m : j["methods"]) cfg.methods.push_back(dtf::eval::parse_method(m.get<std::string>()));
    }
    dtf::eval::Estimators est;
    est.model_s = model_s ? &model_s->m : nullptr;
    est.model_st = model_st ? &model_st->m : nullptr;
    est.inference_stride = j.value("inference_stride", std::size_t{0});
    const dtf::Phantom ph{tensors->v, labels->v, s0->v};
    const auto res = dtf::eval::noise_sweep(ph, scheme->s, cfg, est);
    put_string(out_json, res.to_json().dump(2));
    put_string(out_csv, res.to_csv());
  });
}

dtf_status dtf_bland_altman(const dtf_volume* pred, const dtf_volume* ref, const dtf_volume* labels, const char* map,
                            char** out_csv, char** summary_json)
{
  return guard([&] {
    need(pred, "prediction");
    need(ref, "reference");
    need(map, "map");
    const auto which = dtf::eval::parse_scalar_map(map);
    std::optional<dtf::Volume4D> fg;
    if (labels) fg = mask_of(labels);
    const auto ba = dtf::eval::bland_altman(dtf::eval::scalar_map(pred->v, which), dtf::eval::scalar_map(ref->v, which),
                                            fg ? &*fg : nullptr);
    put_string(out_csv, ba.to_csv());
    json s = ba.summary();
    s["map"] = map;
    put_string(summary_json, s.dump(2));
  });
}

} // extern "C"
