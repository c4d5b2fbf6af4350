#ifndef BOXEDIT_H
#define BOXEDIT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BoxeditProjection {
  BOXEDIT_PROJECTION_DEPTH = 0,
  BOXEDIT_PROJECTION_EDGES = 1,
} BoxeditProjection;

typedef enum BoxeditStatus {
  BOXEDIT_STATUS_OK = 0,
  BOXEDIT_STATUS_NULL_ARGUMENT = 1,
  BOXEDIT_STATUS_INVALID_UTF8 = 2,
  BOXEDIT_STATUS_VALIDATION = 3,
  BOXEDIT_STATUS_NOT_FOUND = 4,
  BOXEDIT_STATUS_GEOMETRY = 5,
  BOXEDIT_STATUS_IO = 6,
  BOXEDIT_STATUS_BUFFER_TOO_SMALL = 7,
  BOXEDIT_STATUS_INTERNAL = 8,
  BOXEDIT_STATUS_PANIC = 9,
} BoxeditStatus;

/**
 * Opaque edit context: a dataset, a model and an object bank.
 */
typedef struct BoxeditContext BoxeditContext;

/**
 * Box in camera coordinates: centre, `[length, width, height]` in metres
 * and yaw in radians about the camera's vertical axis.
 */
typedef struct BoxeditBox {
  double center[3];
  double size[3];
  double yaw;
} BoxeditBox;

/**
 * Pinhole intrinsics in pixels.
 */
typedef struct BoxeditIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} BoxeditIntrinsics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *boxedit_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *boxedit_version(void);

/**
 * Writes `[u_min, v_min, u_max, v_max]` of the clipped projection of `bx`.
 *
 * # Safety
 * `bx` and `k` must be valid pointers; `out_rect` must hold 4 doubles.
 */
enum BoxeditStatus boxedit_project_box_rect(const struct BoxeditBox *bx,
                                            const struct BoxeditIntrinsics *k,
                                            double *out_rect);

/**
 * Renders the six-channel pose image of `bx` into `out`, laid out as
 * `[6, height, width]`. `out_len` must be at least `6 * height * width`.
 * `grid` of 0 selects the default face sampling density.
 *
 * # Safety
 * `bx` and `k` must be valid pointers; `out` must hold `out_len` doubles.
 */
enum BoxeditStatus boxedit_render_pose_image(const struct BoxeditBox *bx,
                                             const struct BoxeditIntrinsics *k,
                                             enum BoxeditProjection mode,
                                             uint32_t grid,
                                             double *out,
                                             uintptr_t out_len);

/**
 * Opens a dataset directory and loads or initialises a model.
 *
 * `config_json` is an object with optional keys `dataset`, `checkpoint`,
 * `model`, `steps` and `seed`. Without a checkpoint a freshly initialised
 * `model` is used.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BoxeditStatus boxedit_context_open(const char *config_json, struct BoxeditContext **out);

/**
 * Releases a context. Null is ignored.
 *
 * # Safety
 * `ctx` must come from [`boxedit_context_open`] and not be used afterwards.
 */
void boxedit_context_free(struct BoxeditContext *ctx);

/**
 * Runs one edit given as EditSpec JSON. When `out_dir` is non-null the
 * frames and report are written there. The report JSON is returned in
 * `out_report` and must be released with [`boxedit_string_free`].
 *
 * # Safety
 * `ctx` must be a live context, strings NUL-terminated and `out_report` a
 * valid pointer.
 */
enum BoxeditStatus boxedit_context_run_edit(const struct BoxeditContext *ctx,
                                            const char *spec_json,
                                            const char *out_dir,
                                            char **out_report);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void boxedit_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOXEDIT_H */
