#ifndef BINFER_H
#define BINFER_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum BinferStatus {
  BINFER_STATUS_OK = 0,
  BINFER_STATUS_NULL_POINTER = 1,
  BINFER_STATUS_INVALID_ARGUMENT = 2,
  BINFER_STATUS_IO = 3,
  BINFER_STATUS_FORMAT = 4,
  BINFER_STATUS_INVALID_MODEL = 5,
  BINFER_STATUS_INFEASIBLE = 6,
  BINFER_STATUS_BUFFER_TOO_SMALL = 7,
  BINFER_STATUS_PANIC = 8,
} BinferStatus;

/**
 * Opaque handle to a loaded model.
 */
typedef struct BinferModel BinferModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t binfer_last_error(char *buf, size_t len);

/**
 * Loads a model from its TOML description, weight file and threshold file.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be a valid pointer.
 */
enum BinferStatus binfer_model_load(const char *model_path,
                                    const char *weights_path,
                                    const char *thresholds_path,
                                    struct BinferModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from `binfer_model_load` and not be used afterwards.
 */
void binfer_model_free(struct BinferModel *model);

/**
 * Input width, height and depth, and the number of output classes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum BinferStatus binfer_model_shape(const struct BinferModel *model,
                                     size_t *width,
                                     size_t *height,
                                     size_t *depth,
                                     size_t *classes);

/**
 * Classifies one image of fixed-point values in `[-31, 31]`, `(h, w, d)` order.
 *
 * Writes the predicted class and, if `scores` is not null, `scores_len`
 * (at least the class count) output scores.
 *
 * # Safety
 * `input` must hold `input_len` values; `scores` must be null or hold `scores_len` doubles.
 */
enum BinferStatus binfer_model_classify(const struct BinferModel *model,
                                        const int8_t *input,
                                        size_t input_len,
                                        double *scores,
                                        size_t scores_len,
                                        size_t *class_out);

/**
 * Classifies one 32x32x3 channel-major byte image (CIFAR-10 pixel layout).
 *
 * # Safety
 * `pixels` must hold `len` bytes; `class_out` must be valid.
 */
enum BinferStatus binfer_model_classify_pixels(const struct BinferModel *model,
                                               const uint8_t *pixels,
                                               size_t len,
                                               size_t *class_out);

/**
 * Matching-bit count of two packed vectors of `len_bits` bits each.
 *
 * # Safety
 * `a` and `w` must each hold `ceil(len_bits / 32)` words.
 */
enum BinferStatus binfer_xnor_dot(const uint32_t *a,
                                  const uint32_t *w,
                                  size_t len_bits,
                                  uint32_t *out);

/**
 * Folds one channel's batch-norm parameters into an integer threshold.
 *
 * `first_layer` selects the fixed-point input layer rule (`cnum` is then
 * ignored). `direction_out` receives 0 = GE, 1 = LE, 2 = always one,
 * 3 = always zero.
 *
 * # Safety
 * Output pointers must be valid.
 */
enum BinferStatus binfer_fold_threshold(double mu,
                                        double sigma2,
                                        double gamma,
                                        double beta,
                                        double epsilon,
                                        uint32_t cnum,
                                        bool first_layer,
                                        int32_t *c_out,
                                        uint8_t *direction_out);

/**
 * Estimated cycles of one layer: `ceil(cycle_conv / (uf * p)) * ii`.
 *
 * # Safety
 * `out` must be valid.
 */
enum BinferStatus binfer_cycle_est(uint64_t cycle_conv,
                                   uint64_t uf,
                                   uint64_t p,
                                   uint64_t ii,
                                   uint64_t *out);

/**
 * Frames per second of a layer pipeline at `freq_hz`, and the bottleneck layer index.
 *
 * # Safety
 * `cycles` must hold `n` values; output pointers must be valid.
 */
enum BinferStatus binfer_system_fps(const uint64_t *cycles,
                                    size_t n,
                                    double freq_hz,
                                    double *fps_out,
                                    size_t *bottleneck_out);

/**
 * Plans per-layer UF and P for the conv layers of a model under a LUT budget.
 *
 * `lut_overhead <= 0` selects the calibrated overhead. On success
 * `n_layers_out` holds the planned layer count; `uf_out` and `p_out` must
 * hold at least that many entries (`capacity`), otherwise
 * `BufferTooSmall` is returned with `n_layers_out` set.
 *
 * # Safety
 * `model_path` must be a NUL-terminated string; arrays must hold `capacity` values.
 */
enum BinferStatus binfer_plan(const char *model_path,
                              uint64_t luts,
                              double lut_overhead,
                              double freq_hz,
                              bool full_space,
                              uint64_t *uf_out,
                              uint64_t *p_out,
                              size_t capacity,
                              size_t *n_layers_out,
                              uint64_t *max_cycles_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BINFER_H */
