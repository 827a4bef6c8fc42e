#ifndef THERMOSCAN_H
#define THERMOSCAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible binding.
 */
typedef enum TsStatus {
  TsOk = 0,
  TsNullPointer = 1,
  TsInvalidUtf8 = 2,
  TsError = 3,
} TsStatus;

/**
 * Opaque tabular dataset handle.
 */
typedef struct TsDataset TsDataset;

/**
 * Opaque evaluation-result handle.
 */
typedef struct TsMetrics TsMetrics;

/**
 * Opaque trained-model handle.
 */
typedef struct TsModel TsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ts_last_error(void);

/**
 * Load a CSV with a header row; `label_column` names the class column.
 *
 * # Safety
 * `path` and `label_column` must be NUL-terminated strings; `out` must be
 * a valid pointer.
 */
enum TsStatus ts_dataset_load_csv(const char *path,
                                  const char *label_column,
                                  struct TsDataset **out);

/**
 * Number of rows.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
uintptr_t ts_dataset_rows(const struct TsDataset *ds);

/**
 * Number of feature columns.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
uintptr_t ts_dataset_features(const struct TsDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not freed before.
 */
void ts_dataset_free(struct TsDataset *ds);

/**
 * Train a learner family (for example "logistic", "gbt_x", "forest") on
 * the whole dataset with library-default parameters.
 *
 * # Safety
 * `ds` must be a live dataset handle, `family` a NUL-terminated string,
 * `out` a valid pointer.
 */
enum TsStatus ts_model_train(const struct TsDataset *ds,
                             const char *family,
                             uint64_t seed,
                             struct TsModel **out);

/**
 * Score one feature row; writes a probability-like value in [0, 1].
 *
 * # Safety
 * `features` must point to `len` doubles; `model` and `out_score` must be
 * valid.
 */
enum TsStatus ts_model_predict(const struct TsModel *model,
                               const double *features,
                               uintptr_t len,
                               double *out_score);

/**
 * Serialize the model to a JSON file.
 *
 * # Safety
 * `model` must be live; `path` a NUL-terminated string.
 */
enum TsStatus ts_model_save_json(const struct TsModel *model, const char *path);

/**
 * Load a model serialized by `ts_model_save_json`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid pointer.
 */
enum TsStatus ts_model_load_json(const char *path, struct TsModel **out);

/**
 * # Safety
 * `model` must be null or a handle not freed before.
 */
void ts_model_free(struct TsModel *model);

/**
 * Score the model on a stratified test fraction of `ds` with an
 * F1-selected threshold. The model is used as-is; no retraining happens.
 *
 * # Safety
 * `model` and `ds` must be live handles; `out` a valid pointer.
 */
enum TsStatus ts_metrics_evaluate(const struct TsModel *model,
                                  const struct TsDataset *ds,
                                  double test_fraction,
                                  uint64_t seed,
                                  struct TsMetrics **out);

/**
 * Fetch a metric by name: accuracy | precision | recall | f1 | roc_auc |
 * threshold. Undefined metrics read as NaN.
 *
 * # Safety
 * `metrics` must be live; `name` NUL-terminated; `out_value` valid.
 */
enum TsStatus ts_metrics_get(const struct TsMetrics *metrics, const char *name, double *out_value);

/**
 * # Safety
 * `metrics` must be null or a handle not freed before.
 */
void ts_metrics_free(struct TsMetrics *metrics);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THERMOSCAN_H */
