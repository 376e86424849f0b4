#ifndef IFSSL_H
#define IFSSL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call. Values match the CLI exit codes.
typedef enum IfsslStatus {
  IFSSL_STATUS_OK = 0,
  IFSSL_STATUS_CONFIG = 2,
  IFSSL_STATUS_INPUT = 3,
  IFSSL_STATUS_FORMAT = 4,
  IFSSL_STATUS_DIVERGED = 5,
  IFSSL_STATUS_IO = 6,
  IFSSL_STATUS_NULL_ARGUMENT = 64,
  IFSSL_STATUS_INVALID_UTF8 = 65,
  IFSSL_STATUS_INTERNAL = 70,
  IFSSL_STATUS_PANIC = 71,
} IfsslStatus;

// Experiment configuration, starting from the defaults.
typedef struct IfsslConfig IfsslConfig;

typedef struct IfsslDataset IfsslDataset;

// A finished run: summary, returned model and input statistics.
typedef struct IfsslRun IfsslRun;

// Plain-data view of a run summary. Undefined metrics are NaN.
typedef struct IfsslRunSummary {
  uint64_t seed;
  double test_acc;
  double best_valid_acc;
  double noise_ratio_retained;
  double clean_label_recall;
  double noisy_label_removal_recall;
  size_t iterations_used;
  size_t accepted_iteration;
  size_t epochs_total;
  bool diverged;
} IfsslRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ifssl_version(void);

// Message of the last failure on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *ifssl_last_error(void);

// Creates a configuration holding the defaults.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum IfsslStatus ifssl_config_new(struct IfsslConfig **out);

// Reads a `key = value` configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum IfsslStatus ifssl_config_load(const char *path, struct IfsslConfig **out);

// Sets one key. The whole configuration is re-validated; on failure the
// handle keeps its previous value.
//
// # Safety
// `config` must be a live handle; `key` and `value` NUL-terminated strings.
enum IfsslStatus ifssl_config_set(struct IfsslConfig *config, const char *key, const char *value);

// # Safety
// `config` must be NULL or a live handle, which is invalid afterwards.
void ifssl_config_free(struct IfsslConfig *config);

// Generates (or, for CSV datasets, loads) the configured dataset for `seed`.
//
// # Safety
// `config` must be a live handle; `out` must be valid for writes.
enum IfsslStatus ifssl_dataset_generate(const struct IfsslConfig *config,
                                        uint64_t seed,
                                        struct IfsslDataset **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum IfsslStatus ifssl_dataset_load_csv(const char *path, struct IfsslDataset **out);

// # Safety
// `dataset` must be a live handle; `path` a NUL-terminated string.
enum IfsslStatus ifssl_dataset_save_csv(const struct IfsslDataset *dataset, const char *path);

// Writes sample count, class count and feature width; any of the outputs
// may be NULL.
//
// # Safety
// `dataset` must be a live handle; non-null outputs must be valid for writes.
enum IfsslStatus ifssl_dataset_shape(const struct IfsslDataset *dataset,
                                     size_t *samples,
                                     size_t *classes,
                                     size_t *dim);

// # Safety
// `dataset` must be NULL or a live handle, which is invalid afterwards.
void ifssl_dataset_free(struct IfsslDataset *dataset);

// Runs the configured mode for one seed. When `out_dir` is not NULL the run
// files are written there as well. A diverged run still yields a handle; its
// summary has `diverged` set and prediction fails with `Diverged`.
//
// # Safety
// `config` must be a live handle; `out_dir` NULL or a NUL-terminated string;
// `out` valid for writes.
enum IfsslStatus ifssl_run(const struct IfsslConfig *config,
                           uint64_t seed,
                           const char *out_dir,
                           struct IfsslRun **out);

// # Safety
// `run` must be a live handle; `out` valid for writes.
enum IfsslStatus ifssl_run_summary(const struct IfsslRun *run, struct IfsslRunSummary *out);

// Predicts class labels with the returned teacher. `features` holds `rows`
// raw (unstandardized) samples of width `dim`, row-major; `labels` receives
// `rows` entries.
//
// # Safety
// `features` must point to `rows * dim` doubles and `labels` to `rows`
// writable `size_t` values.
enum IfsslStatus ifssl_run_predict(const struct IfsslRun *run,
                                   const double *features,
                                   size_t rows,
                                   size_t dim,
                                   size_t *labels);

// Writes the returned teacher/student pair in the binary snapshot format.
//
// # Safety
// `run` must be a live handle; `path` a NUL-terminated string.
enum IfsslStatus ifssl_run_save_model(const struct IfsslRun *run, const char *path);

// # Safety
// `run` must be NULL or a live handle, which is invalid afterwards.
void ifssl_run_free(struct IfsslRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IFSSL_H */
