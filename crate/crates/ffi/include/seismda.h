#ifndef SEISMDA_H
#define SEISMDA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum SeismdaStatus {
  SEISMDA_STATUS_OK = 0,
  SEISMDA_STATUS_NULL_POINTER = 1,
  SEISMDA_STATUS_INVALID_ARGUMENT = 2,
  SEISMDA_STATUS_DIMENSION = 3,
  SEISMDA_STATUS_IO = 4,
  SEISMDA_STATUS_FORMAT = 5,
  SEISMDA_STATUS_INTERNAL = 6,
  SEISMDA_STATUS_PANIC = 7,
} SeismdaStatus;

// Damage-diagnosis task.
typedef enum SeismdaTask {
  SEISMDA_TASK_DETECTION = 0,
  SEISMDA_TASK_QUANTIFICATION = 1,
} SeismdaTask;

// Trained classifier.
typedef struct SeismdaModel SeismdaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until
// the next call into this library on the same thread.
const char *seismda_last_error(void);

// Library version as a static NUL-terminated string.
const char *seismda_version(void);

// Loads a checkpoint written by the `seismda` tool.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum SeismdaStatus seismda_model_load(const char *path, struct SeismdaModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`seismda_model_load`] and not be used again.
void seismda_model_free(struct SeismdaModel *model);

// Number of damage classes, or 0 for a null model.
//
// # Safety
// `model` must be null or a live handle.
uintptr_t seismda_model_num_classes(const struct SeismdaModel *model);

// Spectrum length `l` per channel, or 0 for a null model.
//
// # Safety
// `model` must be null or a live handle.
uintptr_t seismda_model_input_len(const struct SeismdaModel *model);

// Classifies `n` inputs stored row-major in `inputs` (`n * 3 * l`
// values). Writes `n` classes; when `probs` is non-null also writes
// `n * K` class probabilities.
//
// # Safety
// Buffers must hold the stated number of elements.
enum SeismdaStatus seismda_model_predict(const struct SeismdaModel *model,
                                         const double *inputs,
                                         uintptr_t n,
                                         uintptr_t *classes,
                                         double *probs);

// Builds one model input from `len` samples of ground, floor and ceiling
// acceleration at `fs` Hz, using `l` spectrum points up to `f_max` Hz and
// the default smoothing. Writes `3 * l` values to `out`.
//
// # Safety
// Input buffers must hold `len` values and `out` `3 * l`.
enum SeismdaStatus seismda_prepare_window(const double *ground,
                                          const double *floor,
                                          const double *ceiling,
                                          uintptr_t len,
                                          double fs,
                                          uintptr_t l,
                                          double f_max,
                                          double *out);

// Damage class of a peak story drift ratio; `task` is a [`SeismdaTask`]
// value.
//
// # Safety
// `out` must be writable.
enum SeismdaStatus seismda_label_damage(double peak_sdr, int32_t task, uintptr_t *out);

// Physics weights of `n` sources from one property. Writes `n` weights
// summing to one.
//
// # Safety
// `sources` and `out` must hold `n` values.
enum SeismdaStatus seismda_physics_weights(const double *sources,
                                           uintptr_t n,
                                           double target,
                                           double eps,
                                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEISMDA_H */
