#ifndef BSDCNN_H
#define BSDCNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum BsdcnnStatus {
  BSDCNN_STATUS_OK = 0,
  BSDCNN_STATUS_NULL_POINTER = 1,
  BSDCNN_STATUS_INVALID_ARGUMENT = 2,
  BSDCNN_STATUS_SHAPE_MISMATCH = 3,
  BSDCNN_STATUS_INVALID_CONFIG = 4,
  BSDCNN_STATUS_CORRUPT_MODEL = 5,
  BSDCNN_STATUS_CORRUPT_INPUT = 6,
  BSDCNN_STATUS_INVALID_DATASET = 7,
  BSDCNN_STATUS_TRAINING_DIVERGED = 8,
  BSDCNN_STATUS_IO = 9,
  BSDCNN_STATUS_PANIC = 10,
} BsdcnnStatus;

typedef enum BsdcnnBackend {
  BSDCNN_BACKEND_PACKED = 0,
  BSDCNN_BACKEND_ARITHMETIC = 1,
  BSDCNN_BACKEND_NAIVE = 2,
} BsdcnnBackend;

typedef enum BsdcnnConvMode {
  BSDCNN_CONV_MODE_ONE_D_ONE_D = 0,
  BSDCNN_CONV_MODE_ONE_D_TWO_D = 1,
  BSDCNN_CONV_MODE_TWO_D_ONE_D = 2,
  BSDCNN_CONV_MODE_TWO_D_TWO_D = 3,
} BsdcnnConvMode;

// Opaque model handle.
typedef struct BsdcnnModel BsdcnnModel;

// Parameter memory and operation counts of a model.
typedef struct BsdcnnResources {
  uint64_t parameter_count;
  uint64_t parameter_bits;
  uint64_t mac_count;
  uint64_t binary_op_count;
  double memory_reduction_factor;
  double compute_reduction_factor;
} BsdcnnResources;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bsdcnn_version(void);

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on this thread.
const char *bsdcnn_last_error_message(void);

// Builds a freshly initialized model for `electrodes × samples` windows.
// `conv_mode` is a [`BsdcnnConvMode`] value.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum BsdcnnStatus bsdcnn_model_build(uintptr_t electrodes,
                                     uintptr_t samples,
                                     uint32_t conv_mode,
                                     uint64_t seed,
                                     struct BsdcnnModel **out);

// Loads a model file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum BsdcnnStatus bsdcnn_model_load(const char *path, struct BsdcnnModel **out);

// Writes a model file.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum BsdcnnStatus bsdcnn_model_save(const struct BsdcnnModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void bsdcnn_model_free(struct BsdcnnModel *model);

// Expected window geometry.
//
// # Safety
// All pointers must be valid.
enum BsdcnnStatus bsdcnn_model_input_shape(const struct BsdcnnModel *model,
                                           uintptr_t *electrodes,
                                           uintptr_t *samples);

// Preictal probabilities of `count` consecutive windows. `backend_kind` is
// a [`BsdcnnBackend`] value.
//
// # Safety
// `windows` must hold `count × electrodes × samples` floats and `scores`
// room for `count` floats.
enum BsdcnnStatus bsdcnn_model_predict(const struct BsdcnnModel *model,
                                       const float *windows,
                                       uintptr_t count,
                                       uint32_t backend_kind,
                                       float *scores);

// Totals and reduction factors of the model's resource report.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum BsdcnnStatus bsdcnn_model_resources(const struct BsdcnnModel *model,
                                         struct BsdcnnResources *out);

// ROC AUC of `scores` against 0/1 `labels` (1 = preictal).
//
// # Safety
// `scores` and `labels` must hold `count` elements; `auc` must be writable.
enum BsdcnnStatus bsdcnn_roc_auc(const double *scores,
                                 const uint8_t *labels,
                                 uintptr_t count,
                                 double *auc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BSDCNN_H */
