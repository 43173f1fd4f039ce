#ifndef VTADA_H
#define VTADA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VtadaDomain {
  VTADA_DOMAIN_SOURCE = 0,
  VTADA_DOMAIN_TARGET = 1,
} VtadaDomain;

typedef enum VtadaStatus {
  VTADA_STATUS_OK = 0,
  VTADA_STATUS_NULL_POINTER = 1,
  VTADA_STATUS_INVALID_UTF8 = 2,
  VTADA_STATUS_CONFIG = 3,
  VTADA_STATUS_DATA = 4,
  VTADA_STATUS_FORMAT = 5,
  VTADA_STATUS_CHECKPOINT = 6,
  VTADA_STATUS_NUMERIC = 7,
  VTADA_STATUS_CONTRACT = 8,
  VTADA_STATUS_BUFFER_TOO_SMALL = 9,
  VTADA_STATUS_PANIC = 10,
} VtadaStatus;

typedef struct VtadaDataset VtadaDataset;

/**
 * Trained model plus the config text it was trained with.
 */
typedef struct VtadaModel VtadaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vtada_last_error_message(void);

/**
 * Crate version as a static NUL-terminated string.
 */
const char *vtada_version(void);

/**
 * Annealed learning rate of the default schedule at progress `p ∈ [0, 1]`.
 *
 * # Safety
 * `out` must be valid for one `double` write.
 */
enum VtadaStatus vtada_lr_at(double p, double *out);

/**
 * Domain-loss weight of the default schedule at progress `p ∈ [0, 1]`.
 *
 * # Safety
 * `out` must be valid for one `double` write.
 */
enum VtadaStatus vtada_lambda_at(double p, double *out);

/**
 * Loads a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VtadaStatus vtada_checkpoint_load(const char *path, struct VtadaModel **out);

/**
 * Trains from a config file, writing run artifacts to `out_dir`, and
 * returns the trained model.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `out` must be writable.
 */
enum VtadaStatus vtada_train(const char *config_path, const char *out_dir, struct VtadaModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. NULL is a no-op.
 */
void vtada_model_free(struct VtadaModel *model);

/**
 * Length of one feature vector, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t vtada_model_feature_dim(const struct VtadaModel *model);

/**
 * Number of classes, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t vtada_model_num_classes(const struct VtadaModel *model);

/**
 * Loads images from a class-per-directory tree or a manifest file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VtadaStatus vtada_dataset_load(const char *path,
                                    enum VtadaDomain domain,
                                    struct VtadaDataset **out);

/**
 * Regenerates the source or target set the model was trained on.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum VtadaStatus vtada_dataset_builtin(const struct VtadaModel *model,
                                       enum VtadaDomain domain,
                                       struct VtadaDataset **out);

/**
 * Number of images, or 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t vtada_dataset_len(const struct VtadaDataset *dataset);

/**
 * # Safety
 * `dataset` must come from this library and not be used afterwards. NULL is a no-op.
 */
void vtada_dataset_free(struct VtadaDataset *dataset);

/**
 * Classification accuracy (a fraction) on a labeled dataset.
 *
 * # Safety
 * Handles must be live; `out` must be valid for one `double` write.
 */
enum VtadaStatus vtada_evaluate(const struct VtadaModel *model,
                                const struct VtadaDataset *dataset,
                                double *out);

/**
 * Writes the `len × feature_dim` row-major features into `buf`. `written`
 * receives the number of doubles required, also when `capacity` is too
 * small (`VTADA_STATUS_BUFFER_TOO_SMALL`), so callers can size the buffer.
 *
 * # Safety
 * Handles must be live; `buf` must be valid for `capacity` doubles;
 * `written` must be writable.
 */
enum VtadaStatus vtada_features(const struct VtadaModel *model,
                                const struct VtadaDataset *dataset,
                                double *buf,
                                size_t capacity,
                                size_t *written);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* VTADA_H */
