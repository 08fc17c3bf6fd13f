#ifndef AMDNLOC_H
#define AMDNLOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define AMDNLOC_OK 0

#define AMDNLOC_ERR_NULL_ARGUMENT 1

#define AMDNLOC_ERR_INVALID_UTF8 2

#define AMDNLOC_ERR_PANIC 3

#define AMDNLOC_ERR_BUFFER_TOO_SMALL 4

#define AMDNLOC_ERR_INDEX_OUT_OF_RANGE 5

#define AMDNLOC_ERR_DOMAIN 10

#define AMDNLOC_ERR_DIMENSION_MISMATCH 11

#define AMDNLOC_ERR_MISSING_MANIFEST 12

#define AMDNLOC_ERR_MALFORMED_MANIFEST 13

#define AMDNLOC_ERR_TRUNCATED_BINARY 14

#define AMDNLOC_ERR_MISSING_ARTIFACT 15

#define AMDNLOC_ERR_INVALID_CONFIG 16

#define AMDNLOC_ERR_DEGENERATE_TEMPLATE 17

#define AMDNLOC_ERR_NO_USABLE_REGIONS 18

#define AMDNLOC_ERR_RETRY_BUDGET_EXHAUSTED 19

#define AMDNLOC_ERR_FULLY_SHADOWED 20

#define AMDNLOC_ERR_REGION_MISSING_FROM_TRAIN 21

#define AMDNLOC_ERR_NON_FINITE_LOSS 22

#define AMDNLOC_ERR_UNKNOWN_BASELINE 23

#define AMDNLOC_ERR_IO 30

#define AMDNLOC_ERR_JSON 31

// A dataset directory converted to network-ready images.
typedef struct AmdnlocDataset AmdnlocDataset;

// A trained localizer loaded from a model file.
typedef struct AmdnlocModel AmdnlocModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf`, NUL-terminated
// and truncated to `len - 1` bytes. Returns the full message length, so a
// caller can size a buffer with a first call using `len = 0`.
//
// # Safety
// `buf` must be valid for `len` bytes or null when `len` is 0.
size_t amdnloc_last_error_message(char *buf, size_t len);

// Loads a dataset directory written by the `synth` stage.
//
// # Safety
// `dir` must be a NUL-terminated string; `out` must be writable.
int32_t amdnloc_dataset_open(const char *dir, struct AmdnlocDataset **out);

// # Safety
// `ds` must come from [`amdnloc_dataset_open`] and not be used afterwards.
void amdnloc_dataset_free(struct AmdnlocDataset *ds);

// Number of samples; 0 for a null handle.
//
// # Safety
// `ds` must be null or a live handle.
size_t amdnloc_dataset_len(const struct AmdnlocDataset *ds);

// Ground-truth position of sample `index`, in metres.
//
// # Safety
// `ds` must be a live handle; `out_xy` must hold 2 doubles.
int32_t amdnloc_dataset_position(const struct AmdnlocDataset *ds, size_t index, double *out_xy);

// Pixel count of a CFR image (2 channels: magnitude then phase).
//
// # Safety
// `ds` must be null or a live handle.
size_t amdnloc_dataset_cfr_image_len(const struct AmdnlocDataset *ds);

// Pixel count of an ADCAM image.
//
// # Safety
// `ds` must be null or a live handle.
size_t amdnloc_dataset_adcam_image_len(const struct AmdnlocDataset *ds);

// Copies the channel-major CFR image of sample `index` into `out`.
//
// # Safety
// `ds` must be a live handle; `out` must be valid for `len` doubles.
int32_t amdnloc_dataset_cfr_image(const struct AmdnlocDataset *ds,
                                  size_t index,
                                  double *out,
                                  size_t len);

// Copies the ADCAM image of sample `index` into `out`.
//
// # Safety
// `ds` must be a live handle; `out` must be valid for `len` doubles.
int32_t amdnloc_dataset_adcam_image(const struct AmdnlocDataset *ds,
                                    size_t index,
                                    double *out,
                                    size_t len);

// Loads a model file written by the `train` stage.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
int32_t amdnloc_model_load(const char *path, struct AmdnlocModel **out);

// # Safety
// `model` must come from [`amdnloc_model_load`] and not be used afterwards.
void amdnloc_model_free(struct AmdnlocModel *model);

// Number of regression heads; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t amdnloc_model_num_heads(const struct AmdnlocModel *model);

// Number of input branches; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t amdnloc_model_num_inputs(const struct AmdnlocModel *model);

// Expected length of input `branch`; 0 when out of range.
//
// # Safety
// `model` must be null or a live handle.
size_t amdnloc_model_input_len(const struct AmdnlocModel *model, size_t branch);

// Predicts a position with head `head`. `inputs` holds one pointer per
// branch, each to exactly [`amdnloc_model_input_len`] doubles.
//
// # Safety
// `model` must be a live handle, `inputs` valid for `num_inputs`
// pointers, and `out_xy` must hold 2 doubles.
int32_t amdnloc_model_predict(const struct AmdnlocModel *model,
                              const double *const *inputs,
                              size_t num_inputs,
                              size_t head,
                              double *out_xy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMDNLOC_H */
