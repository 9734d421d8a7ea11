#ifndef N2L_H
#define N2L_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum N2lStatus {
  N2L_STATUS_OK = 0,
  // A null pointer or an argument outside its range.
  N2L_STATUS_INVALID_ARGUMENT = 1,
  N2L_STATUS_BAD_INPUT = 2,
  N2L_STATUS_MALFORMED = 3,
  N2L_STATUS_DIVERGED = 4,
  N2L_STATUS_BAD_DIMENSIONS = 5,
  // A Rust panic was caught at the boundary.
  N2L_STATUS_INTERNAL = 70,
} N2lStatus;

// Bytes of an encoded stream.
typedef struct N2lBuffer N2lBuffer;

// A decoded 8-bit RGB image, rows top to bottom, pixels interleaved.
typedef struct N2lImage N2lImage;

typedef struct N2lEncodeParams {
  // Complexity setting, 0 to 4.
  uint8_t setting;
  // Bit 0: no-GPP ablation. Bit 1: single-scale noise.
  uint8_t flags;
  uint16_t seed;
  uint16_t init_seed;
  uint32_t steps;
  // Rate-distortion weight; zero or negative selects `0.02 * H * W`.
  double lambda;
} N2lEncodeParams;

typedef struct N2lStreamInfo {
  uint8_t version;
  uint8_t setting;
  uint8_t flags;
  uint16_t width;
  uint16_t height;
  uint16_t seed;
  uint16_t init_seed;
  int8_t gpp_step_exp;
  int8_t synth_step_exp;
  uint32_t gpp_params;
  uint32_t synth_params;
  uint64_t total_bytes;
  double bpp;
} N2lStreamInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *n2l_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *n2l_last_error(void);

// Defaults: setting 0, no flags, seeds 0, 10000 steps, default lambda.
struct N2lEncodeParams n2l_encode_params_default(void);

// Encodes an interleaved 8-bit RGB image of `width * height` pixels.
//
// # Safety
// `params` must point to a valid struct, `rgb` to `3 * width * height`
// readable bytes, and `out` to writable storage for one pointer.
enum N2lStatus n2l_encode_rgb8(const struct N2lEncodeParams *params,
                               const uint8_t *rgb,
                               uint32_t width,
                               uint32_t height,
                               struct N2lBuffer **out);

// # Safety
// `buf` must be a live handle from this library.
const uint8_t *n2l_buffer_data(const struct N2lBuffer *buf);

// # Safety
// `buf` must be a live handle from this library or NULL.
size_t n2l_buffer_len(const struct N2lBuffer *buf);

// # Safety
// `buf` must be a handle from this library not yet freed, or NULL.
void n2l_buffer_free(struct N2lBuffer *buf);

// Reads the header and group sizes of a stream.
//
// # Safety
// `data` must point to `len` readable bytes and `out` to a writable struct.
enum N2lStatus n2l_stream_info(const uint8_t *data, size_t len, struct N2lStreamInfo *out);

// Decodes a stream into an 8-bit RGB image.
//
// # Safety
// `data` must point to `len` readable bytes and `out` to writable storage
// for one pointer.
enum N2lStatus n2l_decode(const uint8_t *data, size_t len, struct N2lImage **out);

// # Safety
// `img` must be a live handle from this library or NULL.
uint32_t n2l_image_width(const struct N2lImage *img);

// # Safety
// `img` must be a live handle from this library or NULL.
uint32_t n2l_image_height(const struct N2lImage *img);

// Pointer to `3 * width * height` bytes owned by the handle.
//
// # Safety
// `img` must be a live handle from this library or NULL.
const uint8_t *n2l_image_rgb8(const struct N2lImage *img);

// # Safety
// `img` must be a handle from this library not yet freed, or NULL.
void n2l_image_free(struct N2lImage *img);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* N2L_H */
