#ifndef HALFJOIN_H
#define HALFJOIN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HjStatus {
  HJ_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HJ_STATUS_NULL_POINTER = 1,
  /**
   * Invalid argument or tile configuration.
   */
  HJ_STATUS_ARGUMENT = 2,
  /**
   * Malformed input file or value outside the FP16 range.
   */
  HJ_STATUS_FORMAT = 3,
  /**
   * Overflow, failed calibration or undefined statistics.
   */
  HJ_STATUS_COMPUTE = 4,
  HJ_STATUS_IO = 5,
  /**
   * Index past the end of a result set.
   */
  HJ_STATUS_OUT_OF_RANGE = 6,
  /**
   * Internal panic caught at the boundary.
   */
  HJ_STATUS_PANIC = 7,
} HjStatus;

/**
 * Opaque point dataset.
 */
typedef struct HjDataset HjDataset;

/**
 * Opaque result set from either the mixed-precision or the FP64 join.
 */
typedef struct HjResultSet HjResultSet;

/**
 * Tiled engine parameters. `workers = 0` means available parallelism.
 */
typedef struct HjTileConfig {
  size_t block_side;
  size_t block_kslice;
  size_t warp_side;
  size_t warp_kslice;
  size_t dispatch_square;
  size_t prefetch_depth;
  size_t workers;
} HjTileConfig;

/**
 * Hardware figures in TFLOPS, bytes per element and TB/s.
 */
typedef struct HjHardwareModel {
  double peak_tflops;
  double element_bytes;
  double dram_bw;
  double l2_bw;
  double smem_bw;
} HjHardwareModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if it
 * succeeded. Valid until the next call into this library on the thread.
 */
const char *hj_last_error(void);

/**
 * Copies `n * d` row-major FP32 values into a new dataset.
 *
 * # Safety
 * `values` must point to `n * d` readable floats; `out` must be writable.
 */
enum HjStatus hj_dataset_from_buffer(const float *values,
                                     size_t n,
                                     size_t d,
                                     struct HjDataset **out);

/**
 * Uniform synthetic dataset in `[lo, hi)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum HjStatus hj_dataset_synthetic(size_t n,
                                   size_t d,
                                   uint64_t seed,
                                   float lo,
                                   float hi,
                                   struct HjDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HjStatus hj_dataset_load_fvecs(const char *path, struct HjDataset **out);

/**
 * Number of points, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t hj_dataset_n(const struct HjDataset *ds);

/**
 * Dimensionality, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live dataset handle.
 */
size_t hj_dataset_d(const struct HjDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void hj_dataset_free(struct HjDataset *ds);

/**
 * # Safety
 * `out` must be writable.
 */
enum HjStatus hj_tile_config_default(struct HjTileConfig *out);

/**
 * Mixed-precision tiled self-join. A null `cfg` uses the defaults.
 *
 * # Safety
 * `ds` must be a live dataset handle, `cfg` null or readable, `out`
 * writable.
 */
enum HjStatus hj_self_join(const struct HjDataset *ds,
                           float epsilon,
                           const struct HjTileConfig *cfg,
                           struct HjResultSet **out);

/**
 * Brute-force FP64 self-join.
 *
 * # Safety
 * `ds` must be a live dataset handle; `out` writable.
 */
enum HjStatus hj_fp64_join(const struct HjDataset *ds, double epsilon, struct HjResultSet **out);

/**
 * Number of pairs, 0 for a null handle.
 *
 * # Safety
 * `rs` must be null or a live result-set handle.
 */
size_t hj_result_len(const struct HjResultSet *rs);

/**
 * Pair `index` in (i, j) order; indices are 0-based.
 *
 * # Safety
 * `rs` must be a live handle; output pointers writable.
 */
enum HjStatus hj_result_get(const struct HjResultSet *rs,
                            size_t index,
                            uint32_t *i,
                            uint32_t *j,
                            double *dist_sq);

/**
 * `(|R| - n) / n`.
 *
 * # Safety
 * `rs` must be a live handle; `out` writable.
 */
enum HjStatus hj_result_selectivity(const struct HjResultSet *rs, double *out);

/**
 * Writes the pairs in the binary pairs format (FP64 distances are
 * narrowed to FP32).
 *
 * # Safety
 * `rs` must be a live handle; `path` NUL-terminated.
 */
enum HjStatus hj_result_write_pairs(const struct HjResultSet *rs, const char *path);

/**
 * # Safety
 * `rs` must be null or a handle not yet freed.
 */
void hj_result_free(struct HjResultSet *rs);

/**
 * Mean per-point intersection-over-union of neighbour sets.
 *
 * # Safety
 * `test` and `truth` must be live handles; `out` writable.
 */
enum HjStatus hj_overlap_accuracy(const struct HjResultSet *test,
                                  const struct HjResultSet *truth,
                                  double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum HjStatus hj_hardware_model_a100(struct HjHardwareModel *out);

/**
 * # Safety
 * `hw` must be readable; `global` and `shared` writable.
 */
enum HjStatus hj_required_reuse(const struct HjHardwareModel *hw,
                                uint64_t *global,
                                uint64_t *shared);

/**
 * Shared-memory position of slice `slice` (0..8) of point `point`
 * (1-based) under the XOR swizzle.
 *
 * # Safety
 * `row` and `slot` must be writable.
 */
enum HjStatus hj_swizzle_address(size_t point, size_t slice, size_t *row, size_t *slot);

/**
 * Radius whose estimated selectivity is within `tol * target` of `target`.
 *
 * # Safety
 * `ds` must be a live handle; `epsilon` writable.
 */
enum HjStatus hj_calibrate_epsilon(const struct HjDataset *ds,
                                   double target_selectivity,
                                   double tol,
                                   size_t sample,
                                   uint64_t seed,
                                   double *epsilon);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HALFJOIN_H */
