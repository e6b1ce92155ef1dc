/* Copyright 2026 The QMLA Authors
 * SPDX-License-Identifier: Apache-2.0 */

#ifndef QMLA_H
#define QMLA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum QmlaStatus {
  QMLA_STATUS_OK = 0,
  QMLA_STATUS_NULL_POINTER = 1,
  QMLA_STATUS_INVALID_UTF8 = 2,
  QMLA_STATUS_PARSE = 3,
  QMLA_STATUS_CONFIG = 4,
  QMLA_STATUS_DIMENSION = 5,
  QMLA_STATUS_NUMERIC = 6,
  QMLA_STATUS_IO = 7,
  /**
   * Any other engine error, or a caught panic.
   */
  QMLA_STATUS_INTERNAL = 8,
} QmlaStatus;

/**
 * A validated run configuration.
 */
typedef struct QmlaConfig QmlaConfig;

/**
 * A parsed model expression.
 */
typedef struct QmlaModel QmlaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * success. Valid until the next call on the same thread.
 */
const char *qmla_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void qmla_string_free(char *s);

/**
 * Library version as a static string.
 */
const char *qmla_version(void);

/**
 * Parses a model name such as `"SxyzAz"`.
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a valid pointer.
 */
enum QmlaStatus qmla_model_parse(const char *text, struct QmlaModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`qmla_model_parse`] and not have been freed.
 */
void qmla_model_free(struct QmlaModel *model);

/**
 * Number of parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t qmla_model_num_params(const struct QmlaModel *model);

/**
 * Number of qubits, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t qmla_model_num_qubits(const struct QmlaModel *model);

/**
 * Canonical name of the model, released with [`qmla_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum QmlaStatus qmla_model_name(const struct QmlaModel *model, char **out);

/**
 * Probability that the probe returns after time `t`:
 * `|+⟩` for one-qubit models, `|+⟩ ⊗ (|0⟩ + e^{iφ}|1⟩)/√2` otherwise.
 *
 * # Safety
 * `model` must be a live handle, `params` must point to `num_params`
 * doubles and `out` must be a valid pointer.
 */
enum QmlaStatus qmla_model_return_probability(const struct QmlaModel *model,
                                              const double *params,
                                              size_t num_params,
                                              double t,
                                              double phi,
                                              double *out);

/**
 * Parses and validates a JSON run configuration.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum QmlaStatus qmla_config_from_json(const char *json, struct QmlaConfig **out);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `config` must come from [`qmla_config_from_json`] and not have been freed.
 */
void qmla_config_free(struct QmlaConfig *config);

/**
 * Expected seconds for one instance given `t_h` seconds per
 * exponentiation.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum QmlaStatus qmla_estimate_runtime(const struct QmlaConfig *config, double t_h, double *out);

/**
 * Runs one search instance with `seed` and returns its result as JSON,
 * released with [`qmla_string_free`].
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum QmlaStatus qmla_run_instance_json(const struct QmlaConfig *config, uint64_t seed, char **out);

/**
 * Minimum particle count from the Bayes-factor stability bound.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum QmlaStatus qmla_min_particle_bound(double kappa,
                                        double b,
                                        double k,
                                        uint32_t d,
                                        double l,
                                        double gamma,
                                        uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QMLA_H */
