#ifndef TLM_H
#define TLM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TLM_OK 0

#define TLM_ERR_NULL -1

#define TLM_ERR_INVALID_ARGUMENT -2

#define TLM_ERR_IO -3

#define TLM_ERR_PARSE -4

#define TLM_ERR_DIMENSION -5

#define TLM_ERR_NUMERIC -6

#define TLM_ERR_PANIC -7

#define TLM_ROUTING_HARD 0

#define TLM_ROUTING_SOFT 1

#define TLM_ROUTING_SOFT_FULL 2

#define TLM_ROUTING_ORACLE 3

// Opaque trained model.
typedef struct TlmModel TlmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *tlm_last_error_message(void);

// Loads a model file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
int32_t tlm_model_load(const char *path, struct TlmModel **out);

// Parses a model from its JSON text.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
int32_t tlm_model_from_json(const char *json, struct TlmModel **out);

// Writes the model file.
//
// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
int32_t tlm_model_save(const struct TlmModel *model, const char *path);

// Serializes the model; free the result with `tlm_string_free`.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
int32_t tlm_model_to_json(const struct TlmModel *model, char **out);

// Feature dimension the model expects.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
int32_t tlm_model_dim(const struct TlmModel *model, size_t *out);

// Predicts one input of `len` features. `y_true` is read only for
// `TLM_ROUTING_ORACLE`. `out_leaf` may be null.
//
// # Safety
// `features` must hold `len` doubles; `model` must be a live handle;
// `out_value` must be writable.
int32_t tlm_model_predict(const struct TlmModel *model,
                          const double *features,
                          size_t len,
                          int32_t mode,
                          double y_true,
                          double *out_value,
                          uint64_t *out_leaf);

// Predicts `rows` row-major inputs of `dim` features into `out_values`
// (and `out_leaves` when non-null). `targets` may be null except for
// oracle routing.
//
// # Safety
// `features` must hold `rows * dim` doubles, `targets` (if non-null) and
// the output buffers `rows` entries each.
int32_t tlm_model_predict_batch(const struct TlmModel *model,
                                const double *features,
                                size_t rows,
                                size_t dim,
                                int32_t mode,
                                const double *targets,
                                double *out_values,
                                uint64_t *out_leaves);

// Trains a model on `rows` row-major inputs of `dim` features. `config_toml`
// uses the run-configuration format (its `tree`, `train`, `feature_opt` and
// `iterate` keys apply); null means defaults.
//
// # Safety
// `features` must hold `rows * dim` doubles and `targets` `rows`;
// `config_toml` must be null or NUL-terminated; `out` must be writable.
int32_t tlm_train(const double *features,
                  const double *targets,
                  size_t rows,
                  size_t dim,
                  const char *config_toml,
                  struct TlmModel **out);

// Releases a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void tlm_model_free(struct TlmModel *model);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `text` must be null or a string from this library not yet freed.
void tlm_string_free(char *text);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TLM_H */
