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

/* C interface to the dtformer library. All objects are opaque handles owned
 * by the caller and released with the matching *_free function. Functions
 * return DTF_OK or an error status; dtf_last_error() then holds a message
 * for the calling thread. Strings returned through char** are released with
 * dtf_free_string. JSON arguments may be NULL or "" for defaults. */
#ifndef DTFORMER_H
#define DTFORMER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define DTF_API __declspec(dllexport)
#else
#define DTF_API __attribute__((visibility("default")))
#endif

typedef enum dtf_status {
  DTF_OK = 0,
  DTF_ERR_INVALID_ARGUMENT = 1,
  DTF_ERR_INVALID_SCHEME = 2,
  DTF_ERR_INSUFFICIENT_MEASUREMENTS = 3,
  DTF_ERR_SINGULAR_DESIGN = 4,
  DTF_ERR_LOG_DOMAIN = 5,
  DTF_ERR_SHAPE = 6,
  DTF_ERR_PATCHING = 7,
  DTF_ERR_STATE = 8,
  DTF_ERR_IO = 9,
  DTF_ERR_FORMAT = 10,
  DTF_ERR_NUMERIC = 11,
  DTF_ERR_MISSING_CHECKPOINT = 12,
  DTF_ERR_INTERNAL = 13
} dtf_status;

typedef struct dtf_volume dtf_volume;
typedef struct dtf_scheme dtf_scheme;
typedef struct dtf_model dtf_model;
typedef struct dtf_dataset dtf_dataset;

DTF_API const char* dtf_version(void);
DTF_API const char* dtf_last_error(void);
/* Lower-case identifier such as "shape" or "missing_checkpoint". */
DTF_API const char* dtf_status_name(dtf_status status);
/* 0 selects every core; 1 gives bit-reproducible runs. */
DTF_API void dtf_set_threads(size_t threads);
DTF_API void dtf_free_string(char* s);

/* Gradient schemes */
DTF_API dtf_status dtf_scheme_skare6(double bvalue, dtf_scheme** out);
DTF_API dtf_status dtf_scheme_uniform(size_t directions, double bvalue, dtf_scheme** out);
DTF_API dtf_status dtf_scheme_load_fsl(const char* bvec_path, const char* bval_path, dtf_scheme** out);
DTF_API dtf_status dtf_scheme_save_fsl(const dtf_scheme* scheme, const char* bvec_path, const char* bval_path);
DTF_API size_t dtf_scheme_size(const dtf_scheme* scheme);
DTF_API void dtf_scheme_free(dtf_scheme* scheme);

/* Volumes: row-major (x, y, z, channel), channel fastest. Paths may carry a
 * .raw or .json suffix or none. */
DTF_API dtf_status dtf_volume_create(size_t nx, size_t ny, size_t nz, size_t channels, dtf_volume** out);
DTF_API dtf_status dtf_volume_load(const char* path, dtf_volume** out);
DTF_API dtf_status dtf_volume_save(const dtf_volume* volume, const char* path, uint64_t seed, const char* description);
DTF_API void dtf_volume_dims(const dtf_volume* volume, size_t dims[3]);
DTF_API size_t dtf_volume_channels(const dtf_volume* volume);
DTF_API double* dtf_volume_data(dtf_volume* volume);
DTF_API void dtf_volume_free(dtf_volume* volume);

/* Phantoms and signals. options_json keys: dims [x,y,z], seed, model
 * ("curved-tract" | "layered"), length_scale, s0_amplitude. */
DTF_API dtf_status dtf_phantom_generate(const char* options_json, dtf_volume** tensors, dtf_volume** labels,
                                        dtf_volume** s0);
DTF_API dtf_status dtf_synthesize(const dtf_volume* tensors, const dtf_volume* s0, const dtf_scheme* scheme,
                                  dtf_volume** dwi);
/* Rician noise at snr_db relative to `reference`; reference <= 0 uses the
 * mean positive value of `reference_channel`. snr_db = +inf copies. */
DTF_API dtf_status dtf_add_noise(const dtf_volume* dwi, double snr_db, double reference, size_t reference_channel,
                                 uint64_t seed, dtf_volume** out);

/* Tensor estimation. method: ols | cwlls | cnls | model-s | model-st.
 * Learned methods need `model`; mask (labels) may be NULL; stride 0 uses
 * the model's inference stride. */
DTF_API dtf_status dtf_fit(const dtf_volume* dwi, const dtf_scheme* scheme, const char* method,
                           const dtf_model* model, const dtf_volume* mask, size_t stride, dtf_volume** out);

/* Models */
DTF_API dtf_status dtf_model_load(const char* path, dtf_model** out);
DTF_API dtf_status dtf_model_save(const dtf_model* model, const char* path, const char* metadata_json);
/* JSON with kind, config, parameter count and hashes. */
DTF_API dtf_status dtf_model_info(const dtf_model* model, char** json);
/* Parameter hash of a Model S, or of the frozen stage inside a Model ST. */
DTF_API uint64_t dtf_model_stage_one_hash(const dtf_model* model);
DTF_API void dtf_model_free(dtf_model* model);

/* Training data. model_config_json keys: patch, width, head_width, heads,
 * modules, attention, stabilizers, inference_stride. */
DTF_API dtf_status dtf_dataset_create(const char* model_config_json, dtf_dataset** out);
/* spec_json keys: phantoms, dims, seed, model, length_scale, snr_db [..],
 * labels ("ground-truth" | "dense-fit"), dense_directions, stride. */
DTF_API dtf_status dtf_dataset_add_synthetic(dtf_dataset* ds, const char* spec_json, const dtf_scheme* scheme);
/* Adds one subject: dwi with scheme, reference tensors (mm^2/s), optional
 * label mask. */
DTF_API dtf_status dtf_dataset_add_volume(dtf_dataset* ds, const dtf_volume* dwi, const dtf_scheme* scheme,
                                          const dtf_volume* tensors, const dtf_volume* labels);
DTF_API size_t dtf_dataset_size(const dtf_dataset* ds);
DTF_API void dtf_dataset_free(dtf_dataset* ds);

/* stage "s" trains a fresh Model S; stage "st" trains a Model ST on top of
 * `frozen_s`, which is never modified. train_config_json keys: batch_size,
 * initial_lr, lr_decay, plateau_patience, early_stop_patience, max_epochs,
 * seed, validation_fraction. log_jsonl may be NULL. */
DTF_API dtf_status dtf_train(dtf_dataset* ds, const char* stage, const dtf_model* frozen_s,
                             const char* train_config_json, dtf_model** out, char** log_jsonl);

/* Evaluation. Outputs are JSON and flat CSV; errors in mm^2/s. */
DTF_API dtf_status dtf_compare(const dtf_volume* pred, const dtf_volume* ref, const dtf_volume* labels,
                               const char* method, char** json, char** csv);
/* config_json keys: snr_db [..], repetitions, seed, include_clean, methods
 * [..], inference_stride. */
DTF_API dtf_status dtf_sweep(const dtf_volume* tensors, const dtf_volume* labels, const dtf_volume* s0,
                             const dtf_scheme* scheme, const char* config_json, const dtf_model* model_s,
                             const dtf_model* model_st, char** json, char** csv);
/* map: "fa" | "md". Inputs are tensor volumes. */
DTF_API dtf_status dtf_bland_altman(const dtf_volume* pred, const dtf_volume* ref, const dtf_volume* labels,
                                    const char* map, char** csv, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif
