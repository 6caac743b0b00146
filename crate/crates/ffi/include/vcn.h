#ifndef VCN_H
#define VCN_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VcnStatus {
  VCN_STATUS_OK = 0,
  VCN_STATUS_NULL_POINTER = 1,
  VCN_STATUS_INVALID_ARGUMENT = 2,
  VCN_STATUS_SHAPE = 3,
  VCN_STATUS_FORMAT = 4,
  VCN_STATUS_NON_FINITE = 5,
  VCN_STATUS_CODEC = 6,
  VCN_STATUS_CHECKSUM = 7,
  VCN_STATUS_CONFIG = 8,
  VCN_STATUS_CONTRACT = 9,
  VCN_STATUS_IO = 10,
  VCN_STATUS_PANIC = 11,
} VcnStatus;

/**
 * Opaque trained model.
 */
typedef struct VcnModel VcnModel;

/**
 * Bytes owned by the library. Free with [`vcn_buffer_free`].
 */
typedef struct VcnBuffer {
  uint8_t *data;
  size_t len;
} VcnBuffer;

/**
 * Decoded 8-bit grayscale image, row-major.
 */
typedef struct VcnImage {
  struct VcnBuffer pixels;
  size_t width;
  size_t height;
} VcnImage;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *vcn_last_error(void);

/**
 * Static, NUL-terminated library version.
 */
const char *vcn_version(void);

/**
 * Loads a checkpoint written by `vcn train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum VcnStatus vcn_model_load(const char *path, struct VcnModel **out);

/**
 * # Safety
 * `model` must come from [`vcn_model_load`] and not be used afterwards.
 */
void vcn_model_free(struct VcnModel *model);

/**
 * Compresses a `width x height` grayscale image with a trained model.
 * `quality` (1..=100) is used by the standard-codec path only.
 *
 * # Safety
 * `pixels` must hold `width * height` bytes; `out` must be valid.
 */
enum VcnStatus vcn_compress(const struct VcnModel *model,
                            const uint8_t *pixels,
                            size_t width,
                            size_t height,
                            uint8_t quality,
                            struct VcnBuffer *out);

/**
 * Decodes a stream produced by [`vcn_compress`] with the same model.
 *
 * # Safety
 * `data` must hold `len` bytes; `out` must be valid.
 */
enum VcnStatus vcn_decompress(const struct VcnModel *model,
                              const uint8_t *data,
                              size_t len,
                              struct VcnImage *out);

/**
 * Standard block-DCT codec, no model involved.
 *
 * # Safety
 * `pixels` must hold `width * height` bytes; `out` must be valid.
 */
enum VcnStatus vcn_jpeg_encode(const uint8_t *pixels,
                               size_t width,
                               size_t height,
                               uint8_t quality,
                               struct VcnBuffer *out);

/**
 * # Safety
 * `data` must hold `len` bytes; `out` must be valid.
 */
enum VcnStatus vcn_jpeg_decode(const uint8_t *data, size_t len, struct VcnImage *out);

/**
 * # Safety
 * `buf` must be null or come from this library; it is reset to empty.
 */
void vcn_buffer_free(struct VcnBuffer *buf);

/**
 * PSNR in dB between two images of equal size.
 *
 * # Safety
 * `a` and `b` must each hold `width * height` bytes; `out` must be valid.
 */
enum VcnStatus vcn_psnr(const uint8_t *a,
                        const uint8_t *b,
                        size_t width,
                        size_t height,
                        double *out);

/**
 * Mean SSIM between two images of equal size.
 *
 * # Safety
 * `a` and `b` must each hold `width * height` bytes; `out` must be valid.
 */
enum VcnStatus vcn_ssim(const uint8_t *a,
                        const uint8_t *b,
                        size_t width,
                        size_t height,
                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCN_H */
