#ifndef KSP_H
#define KSP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum KspStatus {
  KSP_STATUS_OK = 0,
  KSP_STATUS_NULL_POINTER = 1,
  KSP_STATUS_INVALID_ARGUMENT = 2,
  KSP_STATUS_PARSE = 3,
  KSP_STATUS_PROTOCOL = 4,
  KSP_STATUS_RUNTIME = 5,
  KSP_STATUS_PANIC = 6,
} KspStatus;

/**
 * A running gadget chain. Fed wire-encoded input, it returns the
 * wire-encoded output stream on finish.
 */
typedef struct KspChain KspChain;

/**
 * Byte buffer owned by the library.
 */
typedef struct KspBuffer {
  uint8_t *data;
  size_t len;
} KspBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, or 0 if none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ksp_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ksp_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string obtained from this library, not yet freed.
 */
void ksp_string_free(char *s);

/**
 * Releases a buffer's contents and resets it to empty.
 *
 * # Safety
 * `buf` must be null or point to a buffer filled by this library.
 */
void ksp_buffer_free(struct KspBuffer *buf);

/**
 * Seeded sampling mask: writes 1 for acquired lines, 0 otherwise, into
 * `out[0..num_pe]`.
 *
 * # Safety
 * `out` must point to `num_pe` writable bytes.
 */
enum KspStatus ksp_generate_mask(size_t num_pe,
                                 double rate,
                                 double acs_fraction,
                                 uint64_t seed,
                                 uint8_t *out);

/**
 * SSIM of two row-major magnitude images (7×7 window). `data_range <= 0`
 * means the reference maximum.
 *
 * # Safety
 * `reference` and `test` must each point to `rows * cols` floats; `out` must be writable.
 */
enum KspStatus ksp_ssim(const float *reference,
                        const float *test,
                        size_t rows,
                        size_t cols,
                        double data_range,
                        double *out);

/**
 * Normalized mean squared error `‖test − ref‖² / ‖ref‖²`.
 *
 * # Safety
 * As for [`ksp_ssim`].
 */
enum KspStatus ksp_nmse(const float *reference,
                        const float *test,
                        size_t rows,
                        size_t cols,
                        double *out);

/**
 * Scores a detections document against ground truth; `metrics_json` may be
 * null. The report JSON is returned in `*out` (free with [`ksp_string_free`]).
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum KspStatus ksp_evaluate(const char *detections_json,
                            const char *ground_truth_json,
                            const char *metrics_json,
                            double iou_threshold,
                            char **out);

/**
 * Builds and starts a chain from its JSON configuration.
 *
 * # Safety
 * `config_json` must be NUL-terminated; `out` must be writable.
 */
enum KspStatus ksp_chain_new(const char *config_json, struct KspChain **out);

/**
 * Feeds wire-encoded messages (any number, whole messages only). A Close
 * message ends the input.
 *
 * # Safety
 * `chain` must come from [`ksp_chain_new`]; `bytes` must point to `len` bytes.
 */
enum KspStatus ksp_chain_push(struct KspChain *chain, const uint8_t *bytes, size_t len);

/**
 * Ends the input, waits for the chain, and returns every output message
 * followed by Close, wire-encoded, in `*out` (free with [`ksp_buffer_free`]).
 *
 * # Safety
 * `chain` must come from [`ksp_chain_new`]; `out` must be writable.
 */
enum KspStatus ksp_chain_finish(struct KspChain *chain, struct KspBuffer *out);

/**
 * Destroys a chain, finishing it first if needed.
 *
 * # Safety
 * `chain` must be null or come from [`ksp_chain_new`], not yet freed.
 */
void ksp_chain_free(struct KspChain *chain);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KSP_H */
