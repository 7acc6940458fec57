#ifndef TREELSTM_H
#define TREELSTM_H

/* Generated by cbindgen from treelstm-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes: 0 success; 1 configuration/usage; 2 data or I/O;
// 3 numeric failure; 4 invalid argument (null pointer, bad UTF-8,
// model/task mismatch).
#define TLSTM_OK 0

#define TLSTM_ERR_CONFIG 1

#define TLSTM_ERR_DATA 2

#define TLSTM_ERR_NUMERIC 3

#define TLSTM_ERR_ARG 4

// Opaque trained-model handle (checkpoint plus its vocabulary).
typedef struct TlstmModel TlstmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty string when
// no call has failed yet.
const char *tlstm_last_error(void);

// Crate version as a static NUL-terminated string.
const char *tlstm_version(void);

// Load a checkpoint (with its `<path>.vocab` sidecar) into a new handle.
// On success writes the handle to `out`; free it with
// [`tlstm_model_free`].
//
// # Safety
// `path` must be a valid NUL-terminated string; `out` a valid pointer.
int32_t tlstm_model_load(const char *path, struct TlstmModel **out);

// Release a handle returned by [`tlstm_model_load`]. Null is a no-op.
//
// # Safety
// `model` must be null or a pointer previously returned by
// [`tlstm_model_load`] that has not been freed.
void tlstm_model_free(struct TlstmModel *model);

// Classify one labeled-or-unlabeled s-expression sentence with a
// sentiment model; writes the argmax class index to `class_out`.
//
// # Safety
// `model` must be a live handle; `sexpr` a valid NUL-terminated string;
// `class_out` a valid pointer.
int32_t tlstm_classify_sexpr(const struct TlstmModel *model, const char *sexpr, int32_t *class_out);

// Score the relatedness of two sentences given as CoNLL dependency
// blocks (`index TAB token TAB head` rows); writes a score in (1, K).
//
// # Safety
// `model` must be a live handle; `conll_a`/`conll_b` valid NUL-terminated
// strings; `score_out` a valid pointer.
int32_t tlstm_relatedness_conll(const struct TlstmModel *model,
                                const char *conll_a,
                                const char *conll_b,
                                double *score_out);

// Composition-function parameter count for a variant name at the given
// dimensions; 0 for an unknown variant name.
//
// # Safety
// `variant` must be null or a valid NUL-terminated string.
uint64_t tlstm_count_params(const char *variant, uint64_t d, uint64_t e);

// Sparse target distribution over ranks 1..=k for a gold score y in
// [1, k]; writes k probabilities to `out`.
//
// # Safety
// `out` must point to at least `k` writable doubles.
int32_t tlstm_sparse_target(double y, uint32_t k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREELSTM_H */
