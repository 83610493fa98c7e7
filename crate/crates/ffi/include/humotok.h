#ifndef HUMOTOK_H
#define HUMOTOK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HumotokStatus {
  HUMOTOK_STATUS_OK = 0,
  HUMOTOK_STATUS_NULL_ARGUMENT = 1,
  HUMOTOK_STATUS_BUFFER_TOO_SMALL = 2,
  HUMOTOK_STATUS_INVALID_INPUT = 3,
  HUMOTOK_STATUS_IO = 4,
  HUMOTOK_STATUS_CORRUPT = 5,
  HUMOTOK_STATUS_NUMERICAL = 6,
  HUMOTOK_STATUS_UNSUPPORTED = 7,
  HUMOTOK_STATUS_INVALID_STATE = 8,
  HUMOTOK_STATUS_PARSE = 9,
  HUMOTOK_STATUS_PANIC = 10,
} HumotokStatus;

typedef enum HumotokOrdering {
  HUMOTOK_ORDERING_FRAME_BY_FRAME = 0,
  HUMOTOK_ORDERING_LAYER_BY_LAYER = 1,
} HumotokOrdering;

/**
 * A trained or untrained codebook set.
 */
typedef struct HumotokModel HumotokModel;

/**
 * A feature sequence (`frames x dim` values).
 */
typedef struct HumotokMotion HumotokMotion;

/**
 * Incremental frame-by-frame detokenizer bound to a model.
 */
typedef struct HumotokStream HumotokStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *humotok_last_error(void);

/**
 * Library version, NUL-terminated and static.
 */
const char *humotok_version(void);

/**
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
enum HumotokStatus humotok_motion_load(const char *path, struct HumotokMotion **out);

/**
 * Builds a motion from `frames x dim` row-major values.
 *
 * # Safety
 * `data` holds `frames * dim` values; `layout` is NUL-terminated.
 */
enum HumotokStatus humotok_motion_from_data(const double *data,
                                            size_t frames,
                                            size_t dim,
                                            double fps,
                                            const char *layout,
                                            struct HumotokMotion **out);

/**
 * # Safety
 * `motion` is a live handle; `path` is NUL-terminated.
 */
enum HumotokStatus humotok_motion_save(const struct HumotokMotion *motion, const char *path);

/**
 * # Safety
 * `motion` is a live handle; `frames` and `dim` are writable.
 */
enum HumotokStatus humotok_motion_shape(const struct HumotokMotion *motion,
                                        size_t *frames,
                                        size_t *dim);

/**
 * Copies all values, row-major.
 *
 * # Safety
 * `motion` is a live handle; `out` holds `capacity` values.
 */
enum HumotokStatus humotok_motion_data(const struct HumotokMotion *motion,
                                       double *out,
                                       size_t capacity,
                                       size_t *out_len);

/**
 * # Safety
 * `motion` is NULL or a handle not yet freed.
 */
void humotok_motion_free(struct HumotokMotion *motion);

/**
 * # Safety
 * `path` is NUL-terminated; `out` is writable.
 */
enum HumotokStatus humotok_model_load(const char *path, struct HumotokModel **out);

/**
 * # Safety
 * `model` is NULL or a handle not yet freed, with no live stream bound to it.
 */
void humotok_model_free(struct HumotokModel *model);

/**
 * Token ids for `motion`, including the begin and end markers.
 *
 * # Safety
 * Handles are live; `out` holds `capacity` ids; `out_len` is writable.
 */
enum HumotokStatus humotok_tokenize(const struct HumotokModel *model,
                                    const struct HumotokMotion *motion,
                                    enum HumotokOrdering ordering,
                                    uint32_t base_offset,
                                    uint32_t *out,
                                    size_t capacity,
                                    size_t *out_len);

/**
 * Opens a frame-by-frame decoder for a stream of `frames` frames.
 *
 * # Safety
 * `model` is live and must outlive the stream; `out` is writable.
 */
enum HumotokStatus humotok_stream_new(const struct HumotokModel *model,
                                      size_t frames,
                                      double fps,
                                      uint32_t base_offset,
                                      size_t layers_used,
                                      struct HumotokStream **out);

/**
 * Feeds one token id. Completed frames are written row-major to `out`;
 * `out_frames` receives their count. `out` must hold
 * `humotok_stream_max_values` values; the token is not consumed otherwise.
 *
 * # Safety
 * `stream` is live; `out` holds `capacity` values; `out_frames` is writable.
 */
enum HumotokStatus humotok_stream_push(struct HumotokStream *stream,
                                       uint32_t token,
                                       double *out,
                                       size_t capacity,
                                       size_t *out_frames);

/**
 * Values per decoded frame.
 *
 * # Safety
 * `stream` is a live handle.
 */
size_t humotok_stream_frame_dim(const struct HumotokStream *stream);

/**
 * Largest number of values one push can produce.
 *
 * # Safety
 * `stream` is a live handle.
 */
size_t humotok_stream_max_values(const struct HumotokStream *stream);

/**
 * Sets `complete` to 1 once the end marker was read; `frames` receives
 * the frames emitted so far.
 *
 * # Safety
 * `stream` is live; output pointers are writable.
 */
enum HumotokStatus humotok_stream_finish(const struct HumotokStream *stream,
                                         int32_t *complete,
                                         size_t *frames);

/**
 * # Safety
 * `stream` is NULL or a handle not yet freed.
 */
void humotok_stream_free(struct HumotokStream *stream);

/**
 * Frames per second sustained by `token_rate` tokens per second.
 *
 * # Safety
 * `out` is writable.
 */
enum HumotokStatus humotok_throughput_fps(double token_rate,
                                          size_t downsample,
                                          size_t parts,
                                          size_t layers,
                                          double *out);

/**
 * Code tokens read before the first frame can be emitted.
 */
size_t humotok_first_output_latency(enum HumotokOrdering ordering,
                                    size_t steps,
                                    size_t parts,
                                    size_t layers);

/**
 * MPJPE in millimeters over `frames x joints` positions in meters,
 * stored as consecutive xyz triples.
 *
 * # Safety
 * `pred` and `gt` hold `frames * joints * 3` values; `out` is writable.
 */
enum HumotokStatus humotok_mpjpe(const double *pred,
                                 const double *gt,
                                 size_t frames,
                                 size_t joints,
                                 double *out);

/**
 * Fréchet distance between two row sets of width `dim`.
 *
 * # Safety
 * `a` holds `rows_a * dim` values, `b` holds `rows_b * dim`; `out` is writable.
 */
enum HumotokStatus humotok_frechet(const double *a,
                                   size_t rows_a,
                                   const double *b,
                                   size_t rows_b,
                                   size_t dim,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HUMOTOK_H */
