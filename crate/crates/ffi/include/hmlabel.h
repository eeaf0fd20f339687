#ifndef HMLABEL_H
#define HMLABEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum HmStatus {
  HM_STATUS_OK = 0,
  HM_STATUS_NULL_POINTER = 1,
  HM_STATUS_INVALID_ARGUMENT = 2,
  HM_STATUS_IO = 3,
  HM_STATUS_PARSE = 4,
  HM_STATUS_INTERNAL = 5,
} HmStatus;

/**
 * Height field with per-vertex class posteriors.
 */
typedef struct HmField HmField;

/**
 * Generated scene.
 */
typedef struct HmScene HmScene;

/**
 * Pinhole camera intrinsics.
 */
typedef struct HmIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  size_t width;
  size_t height;
} HmIntrinsics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hm_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length in bytes,
 * or 0 when there is no message.
 */
size_t hm_last_error_message(char *buf, size_t len);

/**
 * Measurement likelihood of class `measured` at distance `distance` from a
 * vertex of class `vertex`.
 */
enum HmStatus hm_decay_likelihood(uint8_t measured,
                                  uint8_t vertex,
                                  double distance,
                                  double alpha,
                                  size_t num_classes,
                                  double *out);

/**
 * Theoretical receptive field of a stack of square conv layers.
 */
enum HmStatus hm_receptive_field(const size_t *kernels,
                                 const size_t *strides,
                                 const size_t *dilations,
                                 size_t num_layers,
                                 size_t *out);

/**
 * Sliding-window offsets and window count for a map.
 */
enum HmStatus hm_plan_tiles(size_t map_width,
                            size_t map_height,
                            size_t window_width,
                            size_t window_height,
                            size_t rf_x,
                            size_t rf_y,
                            size_t *out_offset_x,
                            size_t *out_offset_y,
                            size_t *out_num_tiles);

/**
 * Mean IoU of two label arrays of length `len`; ground truth equal to
 * `ignore` is skipped.
 */
enum HmStatus hm_mean_iou(const uint8_t *pred,
                          const uint8_t *gt,
                          size_t len,
                          uint8_t ignore,
                          double *out);

/**
 * Generates a scene with `counts[0..3]` objects per class.
 */
enum HmStatus hm_scene_generate(double extent,
                                double resolution,
                                const size_t *counts,
                                uint64_t seed,
                                struct HmScene **out);

/**
 * Surface height and class at `(x, y)`.
 */
enum HmStatus hm_scene_sample(const struct HmScene *scene,
                              double x,
                              double y,
                              double *out_height,
                              uint8_t *out_label);

/**
 * Scene description as JSON. The returned string must be released with
 * [`hm_string_free`].
 */
enum HmStatus hm_scene_to_json(const struct HmScene *scene, char **out);

void hm_scene_free(struct HmScene *scene);

void hm_string_free(char *s);

/**
 * Empty `width x height` vertex grid with uniform class posteriors.
 */
enum HmStatus hm_field_new(size_t width,
                           size_t height,
                           double resolution,
                           double origin_x,
                           double origin_y,
                           size_t num_classes,
                           struct HmField **out);

void hm_field_free(struct HmField *field);

enum HmStatus hm_field_dims(const struct HmField *field, size_t *out_width, size_t *out_height);

/**
 * Fraction of vertices with at least one height observation.
 */
enum HmStatus hm_field_coverage(const struct HmField *field, double *out);

/**
 * Fuses one depth frame. `depth` holds `width * height` metres (row-major,
 * nonpositive = invalid). `probs` holds `num_classes` probabilities per
 * pixel, or is null for geometry-only fusion. `rotation` is the row-major
 * world-from-camera rotation and `translation` the camera position.
 */
enum HmStatus hm_field_fuse_frame(struct HmField *field,
                                  const double *depth,
                                  const double *probs,
                                  const struct HmIntrinsics *intrinsics,
                                  const double *rotation,
                                  const double *translation,
                                  double alpha);

/**
 * Copies vertex heights (row-major, `len` must equal width * height).
 */
enum HmStatus hm_field_heights(const struct HmField *field, double *out, size_t len);

/**
 * Copies most probable classes per vertex; unobserved vertices get class 0.
 */
enum HmStatus hm_field_labels(const struct HmField *field, uint8_t *out, size_t len);

/**
 * Runs the view-versus-map comparison and writes its CSV outputs to
 * `out_dir`. `config_json` may be null for the default configuration.
 */
enum HmStatus hm_run_comparison(const char *config_json, const char *out_dir);

/**
 * Label value marking pixels without a valid observation.
 */
uint8_t hm_no_label(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HMLABEL_H */
