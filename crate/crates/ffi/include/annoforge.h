#ifndef ANNOFORGE_H
#define ANNOFORGE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum AfStatus {
  AF_STATUS_OK = 0,
  AF_STATUS_NULL_POINTER = 1,
  AF_STATUS_INVALID_ARGUMENT = 2,
  AF_STATUS_DEGENERATE_POLYGON = 3,
  AF_STATUS_OUT_OF_RANGE = 4,
  AF_STATUS_NONE_AVAILABLE = 5,
  AF_STATUS_UNKNOWN_TOKEN = 6,
  AF_STATUS_LEASE_EXPIRED = 7,
  AF_STATUS_IO = 8,
  AF_STATUS_PANIC = 99,
} AfStatus;

typedef enum AfBand {
  AF_BAND_AUTO_ACCEPT = 0,
  AF_BAND_UNCERTAIN = 1,
  AF_BAND_NORMAL = 2,
} AfBand;

/**
 * Opaque in-memory lease table.
 */
typedef struct AfLockManager AfLockManager;

/**
 * Opaque polygon handle.
 */
typedef struct AfPolygon AfPolygon;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Error message from the most recent call on this thread, or null when
 * that call succeeded. Valid until the next call from the same thread.
 */
const char *af_last_error_message(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void af_string_free(char *s);

/**
 * Build a polygon from `n_points` interleaved `x, y` pairs.
 *
 * # Safety
 * `xy` must point to `2 * n_points` doubles; `out` must be writable.
 */
enum AfStatus af_polygon_new(const double *xy, size_t n_points, struct AfPolygon **out);

/**
 * # Safety
 * `p` must come from [`af_polygon_new`] and not have been freed. Null is
 * ignored.
 */
void af_polygon_free(struct AfPolygon *p);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AfStatus af_polygon_area(const struct AfPolygon *p, double *out);

/**
 * Even-odd containment; boundary points count as inside.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AfStatus af_polygon_contains(const struct AfPolygon *p, double x, double y, bool *out);

/**
 * Rasterized IoU on a `width × height` image at `supersample` samples per
 * pixel side.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AfStatus af_polygon_iou(const struct AfPolygon *a,
                             const struct AfPolygon *b,
                             uint32_t width,
                             uint32_t height,
                             uint32_t supersample,
                             double *out);

/**
 * Polygon as a JSON array of `[x, y]` pairs. Free with [`af_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum AfStatus af_polygon_to_json(const struct AfPolygon *p, char **out);

/**
 * Band for `confidence` under the default thresholds.
 *
 * # Safety
 * `out` must be writable.
 */
enum AfStatus af_confidence_band(double confidence, enum AfBand *out);

/**
 * In-memory lease table with the given idle TTL.
 *
 * # Safety
 * `out` must be writable.
 */
enum AfStatus af_lock_manager_new(uint64_t ttl_ms, struct AfLockManager **out);

/**
 * # Safety
 * `m` must come from [`af_lock_manager_new`]. Null is ignored.
 */
void af_lock_manager_free(struct AfLockManager *m);

/**
 * Lease the first free image among `image_ids` (in order) for `user`.
 * Writes the lease token and image id; free both with [`af_string_free`].
 *
 * # Safety
 * `image_ids` must point to `n_images` valid C strings; other pointers must
 * be valid.
 */
enum AfStatus af_lock_acquire(const struct AfLockManager *m,
                              const char *folder,
                              const char *user,
                              const char *const *image_ids,
                              size_t n_images,
                              int64_t now_ms,
                              char **out_token,
                              char **out_image);

/**
 * # Safety
 * Pointers must be valid.
 */
enum AfStatus af_lock_heartbeat(const struct AfLockManager *m, const char *token, int64_t now_ms);

/**
 * `released` is true iff a live lease was removed.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AfStatus af_lock_release(const struct AfLockManager *m,
                              const char *token,
                              int64_t now_ms,
                              bool *released);

/**
 * `valid` is true iff `token` is a live lease on `image`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum AfStatus af_lock_validate(const struct AfLockManager *m,
                               const char *token,
                               const char *image,
                               int64_t now_ms,
                               bool *valid);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANNOFORGE_H */
