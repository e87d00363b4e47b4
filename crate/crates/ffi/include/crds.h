#ifndef CRDS_H
#define CRDS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CrdsStatus {
  CRDS_STATUS_OK = 0,
  CRDS_STATUS_NULL_POINTER = 1,
  CRDS_STATUS_INVALID_INPUT = 2,
  CRDS_STATUS_IO = 3,
  CRDS_STATUS_FORMAT = 4,
  CRDS_STATUS_CHECKPOINT = 5,
  CRDS_STATUS_INTERNAL = 6,
  CRDS_STATUS_PANIC = 7,
} CrdsStatus;

// A decoded clip of 8-bit frames.
typedef struct CrdsClip CrdsClip;

// Codec side information of one encoded clip.
typedef struct CrdsCodecMeta CrdsCodecMeta;

// An enhancement network with its weights.
typedef struct CrdsModel CrdsModel;

typedef struct CrdsClipInfo {
  uintptr_t frames;
  uintptr_t channels;
  uintptr_t height;
  uintptr_t width;
} CrdsClipInfo;

typedef struct CrdsNoiseStats {
  uintptr_t count;
  double qstep;
  double mean;
  double variance;
  double uniform_variance;
  double max_abs;
  double ks_distance;
} CrdsNoiseStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// Valid until the next call on the same thread.
const char *crds_last_error(void);

// Library version as a static NUL-terminated string.
const char *crds_version(void);

// Load a clip file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum CrdsStatus crds_clip_load(const char *path, struct CrdsClip **out);

// Build a clip from `frames` planar 8-bit frames stored back to back
// (`channels × height × width` bytes each). `channels` is 1 or 3.
//
// # Safety
// `data` must point to `frames·channels·height·width` readable bytes.
enum CrdsStatus crds_clip_from_u8(const uint8_t *data,
                                  uintptr_t frames,
                                  uintptr_t channels,
                                  uintptr_t height,
                                  uintptr_t width,
                                  struct CrdsClip **out);

// # Safety
// `clip` must be a live handle and `path` a NUL-terminated string.
enum CrdsStatus crds_clip_save(const struct CrdsClip *clip, const char *path);

// # Safety
// `clip` must be a live handle and `info` writable.
enum CrdsStatus crds_clip_info(const struct CrdsClip *clip, struct CrdsClipInfo *info);

// Copy frame `index` into `buf`, which must hold `channels·height·width` bytes.
//
// # Safety
// `clip` must be a live handle and `buf` writable for `len` bytes.
enum CrdsStatus crds_clip_frame(const struct CrdsClip *clip,
                                uintptr_t index,
                                uint8_t *buf,
                                uintptr_t len);

// # Safety
// `clip` must be null or a handle not yet freed.
void crds_clip_free(struct CrdsClip *clip);

// Encode and decode `clip` with the toy codec. `block` and `range` of 0
// select the defaults.
//
// # Safety
// `clip` must be a live handle; `out_lq` and `out_meta` writable.
enum CrdsStatus crds_codec_encode(const struct CrdsClip *clip,
                                  uint32_t qp,
                                  uintptr_t block,
                                  uintptr_t range,
                                  struct CrdsClip **out_lq,
                                  struct CrdsCodecMeta **out_meta);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum CrdsStatus crds_meta_load(const char *path, struct CrdsCodecMeta **out);

// Writes `path` (JSON) and a sibling `.bin` coefficient blob.
//
// # Safety
// `meta` must be a live handle and `path` a NUL-terminated string.
enum CrdsStatus crds_meta_save(const struct CrdsCodecMeta *meta, const char *path);

// Quantization-noise statistics of the coded residual coefficients.
//
// # Safety
// `meta` must be a live handle and `out` writable.
enum CrdsStatus crds_meta_noise_stats(const struct CrdsCodecMeta *meta, struct CrdsNoiseStats *out);

// # Safety
// `meta` must be null or a handle not yet freed.
void crds_meta_free(struct CrdsCodecMeta *meta);

// Load a training checkpoint directory.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` writable.
enum CrdsStatus crds_model_load(const char *dir, struct CrdsModel **out);

// A freshly initialised network of the named preset (`desk`, `tiny` or
// `full`); it returns its input unchanged.
//
// # Safety
// `preset` must be a NUL-terminated string and `out` writable.
enum CrdsStatus crds_model_new(const char *preset, struct CrdsModel **out);

// Enhance a compressed clip.
//
// # Safety
// `model` and `lq` must be live handles and `out` writable.
enum CrdsStatus crds_model_enhance(const struct CrdsModel *model,
                                   const struct CrdsClip *lq,
                                   struct CrdsClip **out);

// # Safety
// `model` must be null or a handle not yet freed.
void crds_model_free(struct CrdsModel *model);

// Mean PSNR and SSIM gains of `enhanced` over `lq`, both against `gt`.
//
// # Safety
// The clips must be live handles; the outputs writable.
enum CrdsStatus crds_delta_metrics(const struct CrdsClip *enhanced,
                                   const struct CrdsClip *lq,
                                   const struct CrdsClip *gt,
                                   double *delta_psnr,
                                   double *delta_ssim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRDS_H */
