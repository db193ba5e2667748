/*
 * SPDX-FileCopyrightText: (c) 2026 dualpeft authors
 *
 * SPDX-License-Identifier: Apache-2.0
 */

/*
 * C interface to the dualpeft pipeline.
 *
 * Objects are opaque handles released with the matching *_free function.
 * Every fallible call returns a dpeft_status; on failure the message is
 * available from dpeft_last_error() on the calling thread until the next
 * call on that thread.
 */

#ifndef DUALPEFT_C_API_H
#define DUALPEFT_C_API_H

#include <stddef.h>

#if defined(_WIN32)
#define DPEFT_API __declspec(dllexport)
#else
#define DPEFT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dpeft_status {
    DPEFT_OK = 0,
    DPEFT_E_INVALID_ARGUMENT = 1, /* bad key, value, pointer or range */
    DPEFT_E_IO = 2,               /* file missing or unwritable */
    DPEFT_E_FORMAT = 3,           /* malformed binary or text artifact */
    DPEFT_E_STAGE = 4,            /* a pipeline stage failed; message names it */
    DPEFT_E_BUFFER_TOO_SMALL = 5,
    DPEFT_E_INTERNAL = 6
} dpeft_status;

typedef struct dpeft_config dpeft_config;
typedef struct dpeft_result dpeft_result;

DPEFT_API const char* dpeft_version(void);
DPEFT_API const char* dpeft_status_name(dpeft_status status);
/* Message of the last failed call on this thread ("" if none). */
DPEFT_API const char* dpeft_last_error(void);

/* Progress messages from long-running calls; NULL disables. */
typedef void (*dpeft_log_fn)(const char* message, void* user);
DPEFT_API void dpeft_set_log(dpeft_log_fn fn, void* user);

/* --- Run configuration ---------------------------------------------------- */

DPEFT_API dpeft_status dpeft_config_new(dpeft_config** out);
DPEFT_API dpeft_status dpeft_config_load(const char* path, dpeft_config** out);
DPEFT_API dpeft_status dpeft_config_save(const dpeft_config* cfg, const char* path);
DPEFT_API dpeft_status dpeft_config_set(dpeft_config* cfg, const char* key, const char* value);
/* Copies the value with its terminator into buf when it fits; *len (optional)
 * receives the value length excluding the terminator. */
DPEFT_API dpeft_status dpeft_config_get(const dpeft_config* cfg, const char* key, char* buf, size_t cap, size_t* len);
DPEFT_API dpeft_status dpeft_config_validate(const dpeft_config* cfg);
DPEFT_API size_t dpeft_config_key_count(void);
/* NULL when i is out of range. */
DPEFT_API const char* dpeft_config_key(size_t i);
DPEFT_API void dpeft_config_free(dpeft_config* cfg);

/* --- Pipeline --------------------------------------------------------------- */

/* stage: "split", "pretrain", "score", "partition", "train", "eval" or
 * "pipeline" (all stages in order). `out` may be NULL. */
DPEFT_API dpeft_status dpeft_run_stage(const dpeft_config* cfg, const char* stage, dpeft_result** out);
DPEFT_API dpeft_status dpeft_export_scatter(const dpeft_config* cfg, const char* path);

DPEFT_API dpeft_status dpeft_sweep_theta(const dpeft_config* cfg, const double* thetas, size_t n_thetas,
                                         const char* const* sites, size_t n_sites, size_t trials, dpeft_result** out);
DPEFT_API dpeft_status dpeft_grid_ab(const dpeft_config* cfg, const double* values, size_t n_values, size_t trials,
                                     dpeft_result** out);
DPEFT_API dpeft_status dpeft_ablate_splitter(const dpeft_config* cfg, const char* const* strategies,
                                             size_t n_strategies, size_t trials, dpeft_result** out);

/* --- Results ---------------------------------------------------------------- */

/* JSON document; valid until dpeft_result_free. */
DPEFT_API const char* dpeft_result_json(const dpeft_result* result);
/* Numeric field addressed by a JSON pointer such as "/eval/rl/overall". */
DPEFT_API dpeft_status dpeft_result_number(const dpeft_result* result, const char* pointer, double* out);
DPEFT_API void dpeft_result_free(dpeft_result* result);

#ifdef __cplusplus
}
#endif

#endif /* DUALPEFT_C_API_H */
