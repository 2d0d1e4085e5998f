#ifndef NASREC_H
#define NASREC_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NasrecStatus {
  NASREC_STATUS_OK = 0,
  NASREC_STATUS_NULL_POINTER = 1,
  NASREC_STATUS_INVALID_ARGUMENT = 2,
  NASREC_STATUS_INVALID_GENOTYPE = 3,
  NASREC_STATUS_INVALID_CONFIG = 4,
  NASREC_STATUS_IO = 5,
  NASREC_STATUS_FORMAT = 6,
  NASREC_STATUS_NUMERIC = 7,
  NASREC_STATUS_PANIC = 8,
} NasrecStatus;

// A loaded or generated click dataset.
typedef struct NasrecDataset NasrecDataset;

// Trained supernet weights with the configuration they were built from.
typedef struct NasrecSupernet NasrecSupernet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call on this thread.
const char *nasrec_last_error(void);

// Library version as a static NUL-terminated string.
const char *nasrec_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be null or a pointer returned by this library and not yet freed.
void nasrec_string_free(char *s);

// Generates a synthetic dataset with planted pairwise interactions.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
enum NasrecStatus nasrec_dataset_synth(size_t rows,
                                       size_t num_dense,
                                       size_t num_cat,
                                       size_t vocab,
                                       uint64_t seed,
                                       struct NasrecDataset **out);

// Loads a TSV file or dataset cache using the schema in `config_json`
// (null for defaults).
//
// # Safety
// `path` must be a NUL-terminated string, `config_json` null or a
// NUL-terminated string, and `out` writable.
enum NasrecStatus nasrec_dataset_load(const char *path,
                                      const char *config_json,
                                      struct NasrecDataset **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t nasrec_dataset_len(const struct NasrecDataset *ds);

// # Safety
// `ds` must be null or a dataset handle not yet freed.
void nasrec_dataset_free(struct NasrecDataset *ds);

// Trains a supernet on the training split of `ds`. `config_json` holds a run
// configuration (null for defaults).
//
// # Safety
// `ds` must be a live dataset handle, `config_json` null or a NUL-terminated
// string, and `out` writable.
enum NasrecStatus nasrec_supernet_train(const char *config_json,
                                        const struct NasrecDataset *ds,
                                        struct NasrecSupernet **out);

// Writes the supernet weights and optimizer state to `path`.
//
// # Safety
// `net` must be a live supernet handle and `path` a NUL-terminated string.
enum NasrecStatus nasrec_supernet_save(const struct NasrecSupernet *net, const char *path);

// Reads a checkpoint written by [`nasrec_supernet_save`]. `ds` supplies the
// raw-feature shapes.
//
// # Safety
// Pointers must be valid as for [`nasrec_supernet_train`]; `path` must be a
// NUL-terminated string.
enum NasrecStatus nasrec_supernet_load(const char *path,
                                       const char *config_json,
                                       const struct NasrecDataset *ds,
                                       struct NasrecSupernet **out);

// Log loss and AUC of the subnet `genotype` (JSON or `"full"`) on all rows of
// `ds` with shared weights. With `finetune_steps > 0` the head is first
// fine-tuned on `train`, which must then be non-null.
//
// # Safety
// Handles must be live or null as described; `genotype` must be a
// NUL-terminated string; `logloss` and `auc` must be writable.
enum NasrecStatus nasrec_supernet_eval(const struct NasrecSupernet *net,
                                       const char *genotype,
                                       const struct NasrecDataset *ds,
                                       const struct NasrecDataset *train,
                                       size_t finetune_steps,
                                       double *logloss,
                                       double *auc);

// Optimizer steps taken so far, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live supernet handle.
uint64_t nasrec_supernet_steps(const struct NasrecSupernet *net);

// # Safety
// `net` must be null or a supernet handle not yet freed.
void nasrec_supernet_free(struct NasrecSupernet *net);

// Samples a genotype under `strategy` (`sosc`, `aoac` or `soac`) and returns
// its JSON, to be released with [`nasrec_string_free`].
//
// # Safety
// `config_json` must be null or a NUL-terminated string, `strategy` a
// NUL-terminated string and `out` writable.
enum NasrecStatus nasrec_sample_genotype(const char *config_json,
                                         const char *strategy,
                                         uint64_t seed,
                                         char **out);

// FLOPs at batch size `batch` and total parameters of a subnet.
//
// # Safety
// `config_json` must be null or a NUL-terminated string, `genotype` a
// NUL-terminated string, and the outputs writable.
enum NasrecStatus nasrec_genotype_cost(const char *config_json,
                                       const char *genotype,
                                       size_t batch,
                                       uint64_t *flops,
                                       uint64_t *params);

// Kendall tau-b of two length-`n` arrays.
//
// # Safety
// `x` and `y` must point to `n` readable doubles; `out` must be writable.
enum NasrecStatus nasrec_kendall_tau(const double *x, const double *y, size_t n, double *out);

// Pearson correlation of two length-`n` arrays.
//
// # Safety
// `x` and `y` must point to `n` readable doubles; `out` must be writable.
enum NasrecStatus nasrec_pearson_rho(const double *x, const double *y, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NASREC_H */
