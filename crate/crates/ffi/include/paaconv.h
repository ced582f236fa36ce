#ifndef PAACONV_H
#define PAACONV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum PaaStatus {
  PAA_STATUS_OK = 0,
  PAA_STATUS_NULL_POINTER = 1,
  PAA_STATUS_INVALID_INPUT = 2,
  PAA_STATUS_INVALID_ARGUMENT = 3,
  PAA_STATUS_SHAPE = 4,
  PAA_STATUS_CONFIG = 5,
  PAA_STATUS_IO = 6,
  PAA_STATUS_FORMAT = 7,
  PAA_STATUS_UNDEFINED_METRIC = 8,
  PAA_STATUS_BUFFER_TOO_SMALL = 9,
  PAA_STATUS_INTERNAL = 10,
} PaaStatus;

/**
 * Opaque confusion-matrix handle.
 */
typedef struct PaaConfusionMatrix PaaConfusionMatrix;

/**
 * Opaque network handle.
 */
typedef struct PaaNetwork PaaNetwork;

/**
 * Settings for [`paa_network_new`]. Stride and width arrays may be null
 * (with zero length) to keep the built-in topology.
 */
typedef struct PaaNetworkConfig {
  size_t in_channels;
  size_t class_count;
  double cell_size;
  uint64_t seed;
  const size_t *cascade_strides;
  const size_t *cascade_widths;
  size_t cascade_len;
  const size_t *parallel_strides;
  const size_t *parallel_widths;
  size_t parallel_len;
} PaaNetworkConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful call. Valid until the next call on the same thread.
 */
const char *paa_last_error_message(void);

/**
 * Fills `out` with the built-in configuration (12 input channels,
 * 13 classes, default topology, seed 0).
 *
 * # Safety
 * `out` must be null or point to writable memory for one config.
 */
enum PaaStatus paa_network_config_default(struct PaaNetworkConfig *out);

/**
 * Creates a freshly initialized network.
 *
 * # Safety
 * `config` must point to a valid config whose arrays hold the stated
 * lengths; `out` must be writable.
 */
enum PaaStatus paa_network_new(const struct PaaNetworkConfig *config, struct PaaNetwork **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PaaStatus paa_network_load(const char *path, struct PaaNetwork **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `net` must come from this library; `path` must be NUL-terminated.
 */
enum PaaStatus paa_network_save(const struct PaaNetwork *net, const char *path);

/**
 * Releases a network. Null is ignored.
 *
 * # Safety
 * `net` must be null or a handle not yet freed.
 */
void paa_network_free(struct PaaNetwork *net);

/**
 * Input channels, class count and total parameter count of a network.
 *
 * # Safety
 * `net` must be valid; each output pointer may be null to skip it.
 */
enum PaaStatus paa_network_shape(const struct PaaNetwork *net,
                                 size_t *in_channels,
                                 size_t *class_count,
                                 size_t *param_count);

/**
 * Per-point class logits, row-major `n x class_count`, in input order.
 * `out_len` must be at least `n * class_count`.
 *
 * # Safety
 * `positions` holds `3 n` doubles, `features` `n channels`, `out`
 * `out_len`.
 */
enum PaaStatus paa_network_logits(const struct PaaNetwork *net,
                                  const double *positions,
                                  const double *features,
                                  size_t n,
                                  size_t channels,
                                  double *out,
                                  size_t out_len);

/**
 * Predicted class per point (`n` entries), in input order.
 *
 * # Safety
 * As [`paa_network_logits`]; `out` holds `n` entries.
 */
enum PaaStatus paa_network_predict(const struct PaaNetwork *net,
                                   const double *positions,
                                   const double *features,
                                   size_t n,
                                   size_t channels,
                                   uint32_t *out);

/**
 * Oriented unit normals (`3 n` doubles) from the `k` nearest neighbors,
 * oriented toward `center` (3 doubles). `fallbacks` (nullable) receives
 * the number of degenerate neighborhoods.
 *
 * # Safety
 * `positions` and `out` hold `3 n` doubles; `center` holds 3.
 */
enum PaaStatus paa_estimate_normals(const double *positions,
                                    size_t n,
                                    size_t k,
                                    const double *center,
                                    double *out,
                                    size_t *fallbacks);

/**
 * Creates an empty `classes x classes` confusion matrix.
 *
 * # Safety
 * `out` must be writable.
 */
enum PaaStatus paa_confusion_new(size_t classes, struct PaaConfusionMatrix **out);

/**
 * Releases a confusion matrix. Null is ignored.
 *
 * # Safety
 * `cm` must be null or a handle not yet freed.
 */
void paa_confusion_free(struct PaaConfusionMatrix *cm);

/**
 * Adds `n` (truth, prediction) pairs. Truth `-1` marks an unlabeled point
 * and is skipped. The matrix is unchanged on error.
 *
 * # Safety
 * `truth` and `pred` hold `n` entries; `cm` must be valid.
 */
enum PaaStatus paa_confusion_accumulate(struct PaaConfusionMatrix *cm,
                                        const int32_t *truth,
                                        const uint32_t *pred,
                                        size_t n);

/**
 * Count of points with truth `t` predicted as `p`.
 *
 * # Safety
 * `cm` must be valid; `out` writable.
 */
enum PaaStatus paa_confusion_get(const struct PaaConfusionMatrix *cm,
                                 size_t t,
                                 size_t p,
                                 uint64_t *out);

/**
 * Overall accuracy.
 *
 * # Safety
 * `cm` must be valid; `out` writable.
 */
enum PaaStatus paa_confusion_overall_accuracy(const struct PaaConfusionMatrix *cm, double *out);

/**
 * Mean accuracy over classes present in ground truth; `excluded`
 * (nullable) receives the number of absent classes.
 *
 * # Safety
 * `cm` must be valid; `out` writable.
 */
enum PaaStatus paa_confusion_mean_class_accuracy(const struct PaaConfusionMatrix *cm,
                                                 double *out,
                                                 size_t *excluded);

/**
 * Mean IoU over classes with a non-empty union; `excluded` (nullable)
 * receives the number of skipped classes.
 *
 * # Safety
 * `cm` must be valid; `out` writable.
 */
enum PaaStatus paa_confusion_mean_iou(const struct PaaConfusionMatrix *cm,
                                      double *out,
                                      size_t *excluded);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAACONV_H */
