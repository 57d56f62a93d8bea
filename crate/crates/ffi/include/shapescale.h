#ifndef SHAPESCALE_H
#define SHAPESCALE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Objective minimized by [`ss_run_trials`].
 */
#define SS_VARIANT_PAIR_ONE_TWO 0

#define SS_VARIANT_ALL_PAIRS 1

#define SS_VARIANT_MAXIMIZE_SC 2

/*
 Result of every fallible call. The numeric values of the first four
 match the command-line exit codes.
 */
typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_USAGE = 1,
  SS_STATUS_DATA = 2,
  SS_STATUS_NUMERICAL = 3,
  SS_STATUS_NULL_POINTER = 4,
  SS_STATUS_PANIC = 5,
} SsStatus;

/*
 A numeric table with optional reference labels.
 */
typedef struct SsDataset SsDataset;

/*
 Precomputed pair differences of a dataset's rows.
 */
typedef struct SsPairTable SsPairTable;

/*
 Results of a batch of scale-factor searches.
 */
typedef struct SsTrialSet SsTrialSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or null. The string
 stays valid until the next call into this library on the same thread.
 */
const char *ss_last_error(void);

/*
 Loads a comma-separated file with a header row. When `label_last` is
 nonzero the last column holds reference labels. Absent cells (empty or
 `?`) are filled with column means.

 # Safety
 `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum SsStatus ss_dataset_load_csv(const char *path, int32_t label_last, struct SsDataset **out);

/*
 Builds a dataset from `n_rows * n_cols` row-major values.

 # Safety
 `values` must point to `n_rows * n_cols` doubles and `out` be valid.
 */
enum SsStatus ss_dataset_from_values(const double *values,
                                     size_t n_rows,
                                     size_t n_cols,
                                     struct SsDataset **out);

/*
 # Safety
 `ds` must be null or a handle from this library not yet freed.
 */
void ss_dataset_free(struct SsDataset *ds);

/*
 # Safety
 `ds` must be a live handle.
 */
size_t ss_dataset_n_rows(const struct SsDataset *ds);

/*
 # Safety
 `ds` must be a live handle.
 */
size_t ss_dataset_n_cols(const struct SsDataset *ds);

/*
 Copies the dataset's values, row-major, into `out` (`len` doubles).

 # Safety
 `ds` must be a live handle and `out` point to `len` writable doubles.
 */
enum SsStatus ss_dataset_values(const struct SsDataset *ds, double *out, size_t len);

/*
 Writes the reference label of each row, renumbered from 0 in order of
 first appearance, into `out` (`len` = number of rows).

 # Safety
 `ds` must be a live handle and `out` point to `len` writable entries.
 */
enum SsStatus ss_dataset_labels(const struct SsDataset *ds, size_t *out, size_t len);

/*
 Per-column sample standard deviations into `out` (`len` = columns).

 # Safety
 `ds` must be a live handle and `out` point to `len` writable doubles.
 */
enum SsStatus ss_column_sigmas(const struct SsDataset *ds, double *out, size_t len);

/*
 Pair table over the dataset's distinct rows (or all rows when `dedup` is
 zero), normalized by the columns' standard deviations.

 # Safety
 `ds` must be a live handle and `out` a valid pointer.
 */
enum SsStatus ss_pair_table_new(const struct SsDataset *ds,
                                int32_t dedup,
                                struct SsPairTable **out);

/*
 # Safety
 `table` must be null or a handle from this library not yet freed.
 */
void ss_pair_table_free(struct SsPairTable *table);

/*
 # Safety
 `table` must be a live handle.
 */
size_t ss_pair_table_n_pairs(const struct SsPairTable *table);

/*
 # Safety
 `table` must be a live handle.
 */
size_t ss_pair_table_dims(const struct SsPairTable *table);

/*
 Shape complexity at `alpha` (`d` entries).

 # Safety
 `table` must be a live handle, `alpha` point to `d` doubles and `sc` be
 valid.
 */
enum SsStatus ss_sc_value(const struct SsPairTable *table,
                          const double *alpha,
                          size_t d,
                          double *sc);

/*
 Shape complexity and its gradient (`d` entries written to `gradient`).

 # Safety
 `table` must be a live handle; `alpha` and `gradient` must point to `d`
 doubles and `sc` be valid.
 */
enum SsStatus ss_sc_gradient(const struct SsPairTable *table,
                             const double *alpha,
                             size_t d,
                             double *sc,
                             double *gradient);

/*
 Orthogonality residual between dimensions `k` and `l` (zero-based).

 # Safety
 `table` must be a live handle, `alpha` point to `d` doubles and `out` be
 valid.
 */
enum SsStatus ss_residual(const struct SsPairTable *table,
                          const double *alpha,
                          size_t d,
                          size_t k,
                          size_t l,
                          double *out);

/*
 Runs `count` searches from seeded random starts with default settings
 for `variant` (one of the `SS_VARIANT_*` constants).

 # Safety
 `table` must be a live handle and `out` a valid pointer.
 */
enum SsStatus ss_run_trials(const struct SsPairTable *table,
                            size_t count,
                            uint64_t seed,
                            uint32_t variant,
                            struct SsTrialSet **out);

/*
 # Safety
 `set` must be null or a handle from this library not yet freed.
 */
void ss_trial_set_free(struct SsTrialSet *set);

/*
 # Safety
 `set` must be a live handle.
 */
size_t ss_trial_set_len(const struct SsTrialSet *set);

/*
 Final factors (`d` entries), objective, SC and convergence flag of trial
 `index`.

 # Safety
 `set` must be a live handle, `alpha` point to `d` writable doubles and
 the remaining pointers be valid.
 */
enum SsStatus ss_trial_get(const struct SsTrialSet *set,
                           size_t index,
                           double *alpha,
                           size_t d,
                           double *objective,
                           double *sc,
                           int32_t *converged);

/*
 k-means on `n * d` row-major values with `restarts` seeded restarts.
 Writes `n` labels and the within-cluster sum of squares.

 # Safety
 `values` must point to `n * d` doubles, `labels` to `n` writable
 entries and `within_ss` be valid.
 */
enum SsStatus ss_kmeans(const double *values,
                        size_t n,
                        size_t d,
                        size_t clusters,
                        size_t restarts,
                        uint64_t seed,
                        size_t *labels,
                        double *within_ss);

/*
 Fixed-cluster-count adjusted Rand index of `obtained` against
 `reference` (both `n` labels).

 # Safety
 `reference` and `obtained` must point to `n` entries and `out` be valid.
 */
enum SsStatus ss_ari_fnc(const size_t *reference, const size_t *obtained, size_t n, double *out);

/*
 `S(n-1, c) / S(n, c)` for Stirling numbers of the second kind.

 # Safety
 `out` must be valid.
 */
enum SsStatus ss_stirling_ratio(size_t n, size_t c, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAPESCALE_H */
