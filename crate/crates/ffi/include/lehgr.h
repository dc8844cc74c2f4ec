#ifndef LEHGR_H
#define LEHGR_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  LEHGR_STATUS_OK = 0,
  LEHGR_STATUS_NULL_POINTER = 1,
  LEHGR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed data, including files that fail to parse.
   */
  LEHGR_STATUS_DATA_ERROR = 3,
  LEHGR_STATUS_IO = 4,
  /**
   * An output buffer is too small.
   */
  LEHGR_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  LEHGR_STATUS_INTERNAL = 6,
} LehgrStatus;

/**
 * Opaque trained classifier.
 */
typedef struct LehgrModel LehgrModel;

/**
 * Opaque streaming recognizer: a tracker plus a model.
 */
typedef struct LehgrRecognizer LehgrRecognizer;

/**
 * Opaque multi-hand tracker.
 */
typedef struct LehgrTracker LehgrTracker;

/**
 * Tracker tuning; pass NULL to `lehgr_tracker_new` for the defaults.
 */
typedef struct {
  double w_loc;
  double w_iou;
  double w_area;
  double gate;
  uint32_t max_misses;
  size_t history_capacity;
} LehgrTrackerOptions;

/**
 * One hand detection in normalized image coordinates.
 */
typedef struct {
  /**
   * Box center and extent: `cx, cy, w, h`.
   */
  double bbox[4];
  /**
   * `2 * keypoint_count` values laid out `u0, v0, u1, v1, ...`.
   */
  const double *keypoints;
  size_t keypoint_count;
  double confidence;
} LehgrDetection;

/**
 * A gesture event raised by a recognizer.
 */
typedef struct {
  uint64_t trace_id;
  size_t class_id;
  uint64_t frame;
  double probability;
} LehgrEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *lehgr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lehgr_version(void);

/**
 * Fills `out` with the library defaults.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one options struct.
 */
LehgrStatus lehgr_tracker_options_default(LehgrTrackerOptions *out);

/**
 * Creates a tracker. `opts` may be NULL.
 *
 * # Safety
 * `opts` must be NULL or point to a valid options struct; `out` must point
 * to writable storage for one handle.
 */
LehgrStatus lehgr_tracker_new(const LehgrTrackerOptions *opts, LehgrTracker **out);

/**
 * # Safety
 * `tracker` must be NULL or a handle from `lehgr_tracker_new` not yet freed.
 */
void lehgr_tracker_free(LehgrTracker *tracker);

/**
 * Advances the tracker by one frame and writes the trace id assigned to
 * each detection into `out_ids` (length `n`, may be NULL when `n` is 0).
 *
 * # Safety
 * `tracker` must be a live handle; `dets` and `out_ids` must point to `n`
 * elements; each detection's `keypoints` must hold `2 * keypoint_count`
 * values.
 */
LehgrStatus lehgr_tracker_step(LehgrTracker *tracker,
                               uint64_t frame,
                               const LehgrDetection *dets,
                               size_t n,
                               uint64_t *out_ids);

/**
 * Number of live traces, or 0 for a NULL handle.
 *
 * # Safety
 * `tracker` must be NULL or a live handle.
 */
size_t lehgr_tracker_active_count(const LehgrTracker *tracker);

/**
 * Loads a weight file written by `lehgr train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to writable
 * storage for one handle.
 */
LehgrStatus lehgr_model_load(const char *path, LehgrModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from `lehgr_model_load` not yet freed.
 */
void lehgr_model_free(LehgrModel *model);

/**
 * Number of output classes, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lehgr_model_class_count(const LehgrModel *model);

/**
 * Values per input frame, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lehgr_model_frame_width(const LehgrModel *model);

/**
 * Class probabilities of a row-major `frames x width` feature sequence.
 *
 * Writes `class_count` values into `out_probs`; if `out_len` is smaller,
 * returns `BUFFER_TOO_SMALL` without writing.
 *
 * # Safety
 * `model` must be a live handle; `features` must hold `frames * width`
 * values and `out_probs` `out_len` values.
 */
LehgrStatus lehgr_model_predict(const LehgrModel *model,
                                const double *features,
                                size_t frames,
                                size_t width,
                                double *out_probs,
                                size_t out_len);

/**
 * Creates a streaming recognizer that owns a copy of `model`, default
 * tracker settings and the given trigger settings.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to writable storage for
 * one handle.
 */
LehgrStatus lehgr_recognizer_new(const LehgrModel *model,
                                 double prob_threshold,
                                 uint32_t consecutive,
                                 uint32_t refractory,
                                 LehgrRecognizer **out);

/**
 * # Safety
 * `rec` must be NULL or a handle from `lehgr_recognizer_new` not yet freed.
 */
void lehgr_recognizer_free(LehgrRecognizer *rec);

/**
 * Feeds one frame of detections and reports the events it raised.
 *
 * `out_count` receives the number of events. When it exceeds `capacity`
 * the first `capacity` events are written and `BUFFER_TOO_SMALL` is
 * returned; the frame is consumed either way.
 *
 * # Safety
 * `rec` must be a live handle; `dets` must point to `n` detections;
 * `out_events` must hold `capacity` elements (NULL allowed when 0);
 * `out_count` must be writable.
 */
LehgrStatus lehgr_recognizer_step(LehgrRecognizer *rec,
                                  uint64_t frame,
                                  const LehgrDetection *dets,
                                  size_t n,
                                  LehgrEvent *out_events,
                                  size_t capacity,
                                  size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEHGR_H */
