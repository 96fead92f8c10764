#ifndef SPMAGIC_H
#define SPMAGIC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum SpmStatus {
  SPM_STATUS_OK = 0,
  SPM_STATUS_NULL_POINTER = 1,
  SPM_STATUS_INVALID_ARGUMENT = 2,
  SPM_STATUS_IO = 3,
  SPM_STATUS_PARSE = 4,
  SPM_STATUS_SHAPE = 5,
  SPM_STATUS_ALIGNMENT = 6,
  SPM_STATUS_NUMERICAL = 7,
  SPM_STATUS_GENE_MISMATCH = 8,
  SPM_STATUS_CHECKPOINT = 9,
  SPM_STATUS_RESOURCE = 10,
  SPM_STATUS_MISSING_LABELS = 11,
  SPM_STATUS_PANIC = 12,
} SpmStatus;

/**
 * Run configuration. Keys and defaults match the command line.
 */
typedef struct SpmConfig SpmConfig;

/**
 * Expression matrix, coordinates, and optional integer labels.
 */
typedef struct SpmDataset SpmDataset;

/**
 * Imputed matrix with the checkpoint and loss history that produced it.
 */
typedef struct SpmResult SpmResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next spm_* call on the same thread.
 */
const char *spm_last_error(void);

/**
 * Default configuration. Never null.
 */
struct SpmConfig *spm_config_new(void);

/**
 * Reads a `key = value` config file over the defaults.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SpmStatus spm_config_load(const char *path, struct SpmConfig **out);

/**
 * Sets one key from its textual value, e.g. `("epochs", "20")`. The value
 * uses config file syntax. Cross-key constraints are checked by
 * [`spm_config_validate`] and before a run.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be
 * NUL-terminated strings.
 */
enum SpmStatus spm_config_set(struct SpmConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must come from this library.
 */
enum SpmStatus spm_config_validate(const struct SpmConfig *cfg);

/**
 * # Safety
 * `cfg` must come from this library or be null; it must not be used after.
 */
void spm_config_free(struct SpmConfig *cfg);

/**
 * Builds a dataset from row-major buffers: `expression` is
 * `n_spots * n_genes`, `coords` is `n_spots * 2`, and `labels` is
 * `n_spots` or null. Spots and genes get generated ids.
 *
 * # Safety
 * Buffers must hold the stated number of elements; `out` must be writable.
 */
enum SpmStatus spm_dataset_new(uintptr_t n_spots,
                               uintptr_t n_genes,
                               const double *expression,
                               const double *coords,
                               const int64_t *labels,
                               struct SpmDataset **out);

/**
 * Loads a dataset from files. `labels_path` may be null. MatrixMarket is
 * selected by a `.mtx` extension, CSV otherwise.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum SpmStatus spm_dataset_load(const char *expr_path,
                                const char *coords_path,
                                const char *labels_path,
                                struct SpmDataset **out);

/**
 * Synthetic labeled dataset. `layout` is 0 for blocks, 1 for stripes.
 *
 * # Safety
 * `out` must be writable.
 */
enum SpmStatus spm_dataset_simulate(uintptr_t n_spots,
                                    uintptr_t n_genes,
                                    uintptr_t n_clusters,
                                    double separation,
                                    double dropout,
                                    uint32_t layout,
                                    uint64_t seed,
                                    struct SpmDataset **out);

/**
 * # Safety
 * `data` must come from this library; the out pointers must be writable.
 */
enum SpmStatus spm_dataset_shape(const struct SpmDataset *data,
                                 uintptr_t *n_spots,
                                 uintptr_t *n_genes);

/**
 * Copies the labels into `buf` (length `n_spots`).
 *
 * # Safety
 * `data` must come from this library; `buf` must hold `len` elements.
 */
enum SpmStatus spm_dataset_labels(const struct SpmDataset *data, int64_t *buf, uintptr_t len);

/**
 * # Safety
 * `data` must come from this library or be null; it must not be used after.
 */
void spm_dataset_free(struct SpmDataset *data);

/**
 * Runs the full pipeline. `cfg` may be null for defaults.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum SpmStatus spm_impute(const struct SpmDataset *data,
                          const struct SpmConfig *cfg,
                          struct SpmResult **out);

/**
 * Rows are the dataset spots; columns are the selected genes.
 *
 * # Safety
 * `res` must come from this library; the out pointers must be writable.
 */
enum SpmStatus spm_result_shape(const struct SpmResult *res,
                                uintptr_t *n_spots,
                                uintptr_t *n_genes);

/**
 * Copies the imputed matrix row-major into `buf` of exactly
 * `n_spots * n_genes` elements.
 *
 * # Safety
 * `res` must come from this library; `buf` must hold `len` elements.
 */
enum SpmStatus spm_result_values(const struct SpmResult *res, double *buf, uintptr_t len);

/**
 * Gene id of column `index`, or null when out of range. The string is
 * owned by `res`.
 *
 * # Safety
 * `res` must come from this library or be null.
 */
const char *spm_result_gene_id(const struct SpmResult *res, uintptr_t index);

/**
 * Number of training epochs recorded.
 *
 * # Safety
 * `res` must come from this library or be null.
 */
uintptr_t spm_result_epochs(const struct SpmResult *res);

/**
 * Copies the per-epoch mean training loss into `buf`.
 *
 * # Safety
 * `res` must come from this library; `buf` must hold `len` elements.
 */
enum SpmStatus spm_result_loss_history(const struct SpmResult *res, double *buf, uintptr_t len);

/**
 * Writes the trained model checkpoint to `path`.
 *
 * # Safety
 * `res` must come from this library; `path` must be NUL-terminated.
 */
enum SpmStatus spm_result_save_checkpoint(const struct SpmResult *res, const char *path);

/**
 * # Safety
 * `res` must come from this library or be null; it must not be used after.
 */
void spm_result_free(struct SpmResult *res);

/**
 * Adjusted Rand index between two labelings of `n` items.
 *
 * # Safety
 * `a` and `b` must hold `n` elements; `out` must be writable.
 */
enum SpmStatus spm_ari(const int64_t *a, const int64_t *b, uintptr_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPMAGIC_H */
