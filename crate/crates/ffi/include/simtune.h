#ifndef SIMTUNE_H
#define SIMTUNE_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SimtuneStatus {
  SIMTUNE_STATUS_OK = 0,
  SIMTUNE_STATUS_NULL_ARGUMENT = 1,
  SIMTUNE_STATUS_INVALID_INPUT = 2,
  SIMTUNE_STATUS_NUMERIC = 3,
  SIMTUNE_STATUS_GEOMETRY = 4,
  SIMTUNE_STATUS_CONFIG = 5,
  SIMTUNE_STATUS_CORRUPTION = 6,
  SIMTUNE_STATUS_VERSION = 7,
  SIMTUNE_STATUS_IO = 8,
  SIMTUNE_STATUS_BUFFER_TOO_SMALL = 9,
  SIMTUNE_STATUS_PANIC = 10,
} SimtuneStatus;

/**
 * A model with its optional adapter, as loaded from a checkpoint file.
 */
typedef struct SimtuneCheckpoint SimtuneCheckpoint;

/**
 * A simple polygon with uniform density.
 */
typedef struct SimtunePolygon SimtunePolygon;

/**
 * Result of settling a polygon on flat ground.
 */
typedef struct SimtuneSettleResult {
  double tilt_deg;
  bool stable;
  bool settled;
  size_t topple_count;
} SimtuneSettleResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next simtune call on the same thread.
 */
const char *simtune_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *simtune_version(void);

/**
 * Stage seed derived from a master seed and a NUL-terminated label.
 *
 * # Safety
 * `label` must be a valid NUL-terminated string.
 */
enum SimtuneStatus simtune_derive_seed(uint64_t master, const char *label, uint64_t *out_seed);

/**
 * Polygon from `n` interleaved `x, y` pairs.
 *
 * # Safety
 * `xy` must point to `2 * n` doubles; `out_polygon` must be writable.
 */
enum SimtuneStatus simtune_polygon_new(const double *xy,
                                       size_t n,
                                       struct SimtunePolygon **out_polygon);

/**
 * Star-shaped polygon decoded from a latent of `k` raw radii.
 *
 * # Safety
 * `latent` must point to `k` doubles; `out_polygon` must be writable.
 */
enum SimtuneStatus simtune_polygon_decode(const double *latent,
                                          size_t k,
                                          double r_min,
                                          struct SimtunePolygon **out_polygon);

/**
 * Releases a polygon; NULL is ignored.
 *
 * # Safety
 * `polygon` must come from this library and not be used afterwards.
 */
void simtune_polygon_free(struct SimtunePolygon *polygon);

/**
 * Number of vertices.
 *
 * # Safety
 * `polygon` must be a live handle.
 */
enum SimtuneStatus simtune_polygon_len(const struct SimtunePolygon *polygon, size_t *out_len);

/**
 * Copies the vertices as interleaved `x, y` into `xy`, which holds
 * `capacity` doubles.
 *
 * # Safety
 * `polygon` must be a live handle and `xy` must hold `capacity` doubles.
 */
enum SimtuneStatus simtune_polygon_vertices(const struct SimtunePolygon *polygon,
                                            double *xy,
                                            size_t capacity);

/**
 * Area and centre of mass.
 *
 * # Safety
 * `polygon` must be a live handle; outputs must be writable.
 */
enum SimtuneStatus simtune_polygon_mass_properties(const struct SimtunePolygon *polygon,
                                                   double *out_area,
                                                   double *out_cx,
                                                   double *out_cy);

/**
 * Settles the polygon on flat ground from an initial rotation (radians),
 * using the default simulator settings with the given tilt cutoff.
 *
 * # Safety
 * `polygon` must be a live handle; `out_result` must be writable.
 */
enum SimtuneStatus simtune_settle(const struct SimtunePolygon *polygon,
                                  double initial_rotation,
                                  double cutoff_deg,
                                  struct SimtuneSettleResult *out_result);

/**
 * New polygon with everything below `min_y + z` removed.
 *
 * # Safety
 * `polygon` must be a live handle; `out_polygon` must be writable.
 */
enum SimtuneStatus simtune_flat_cut(const struct SimtunePolygon *polygon,
                                    double z,
                                    struct SimtunePolygon **out_polygon);

/**
 * Chamfer distance and F-score (0 to 100) of `sample` against `reference`
 * after unit-box normalization and ICP.
 *
 * # Safety
 * Both polygons must be live handles; outputs must be writable.
 */
enum SimtuneStatus simtune_shape_fidelity(const struct SimtunePolygon *sample,
                                          const struct SimtunePolygon *reference,
                                          size_t n_points,
                                          double tau,
                                          uint64_t seed,
                                          double *out_cd,
                                          double *out_fscore);

/**
 * Loads and verifies a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_checkpoint` must be writable.
 */
enum SimtuneStatus simtune_checkpoint_load(const char *path,
                                           struct SimtuneCheckpoint **out_checkpoint);

/**
 * Releases a checkpoint; NULL is ignored.
 *
 * # Safety
 * `checkpoint` must come from this library and not be used afterwards.
 */
void simtune_checkpoint_free(struct SimtuneCheckpoint *checkpoint);

/**
 * Content hash and latent / condition widths.
 *
 * # Safety
 * `checkpoint` must be a live handle; outputs must be writable.
 */
enum SimtuneStatus simtune_checkpoint_info(const struct SimtuneCheckpoint *checkpoint,
                                           uint64_t *out_hash,
                                           size_t *out_latent_dim,
                                           size_t *out_cond_dim);

/**
 * Draws one latent for a condition by Euler integration over `steps`
 * steps, guidance scale 1. `out_valid` is false when the sample is not
 * finite.
 *
 * # Safety
 * `checkpoint` must be a live handle, `cond` must hold `cond_len` doubles,
 * `out_latent` must hold `latent_capacity` doubles.
 */
enum SimtuneStatus simtune_checkpoint_sample(const struct SimtuneCheckpoint *checkpoint,
                                             const double *cond,
                                             size_t cond_len,
                                             size_t steps,
                                             uint64_t seed,
                                             double *out_latent,
                                             size_t latent_capacity,
                                             bool *out_valid);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMTUNE_H */
