#ifndef VGSPLAT_H
#define VGSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Variance recursion used by [`vgs_stream_update`].
 */
typedef enum VgsEstimator {
  VGS_ESTIMATOR_PAPER = 0,
  VGS_ESTIMATOR_EXACT = 1,
} VgsEstimator;

/**
 * Result of every fallible call.
 */
typedef enum VgsStatus {
  VGS_STATUS_OK = 0,
  VGS_STATUS_NULL_POINTER = 1,
  VGS_STATUS_INVALID_ARGUMENT = 2,
  VGS_STATUS_IO = 3,
  VGS_STATUS_FORMAT = 4,
  VGS_STATUS_NON_FINITE = 5,
  VGS_STATUS_DIVERGED = 6,
  VGS_STATUS_BUFFER_TOO_SMALL = 7,
  VGS_STATUS_PANIC = 8,
} VgsStatus;

/**
 * Trained model: Gaussians, appearance network and the settings used.
 */
typedef struct VgsModel VgsModel;

/**
 * Pinhole camera. `w2c_rotation` is row-major.
 */
typedef struct VgsCamera {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double w2c_rotation[9];
  double w2c_translation[3];
} VgsCamera;

/**
 * Running statistic of a scalar stream. Zero-initialize before the first
 * update.
 */
typedef struct VgsStreamStat {
  uint64_t n;
  double mean;
  double var;
  double m2;
} VgsStreamStat;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to fit) and returns the full message length in
 * bytes, excluding the terminator. Pass a null `buf` to query the length.
 */
size_t vgs_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint file. On success `*out` owns a new handle.
 */
enum VgsStatus vgs_model_load(const char *path, struct VgsModel **out);

enum VgsStatus vgs_model_save(const struct VgsModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 */
void vgs_model_free(struct VgsModel *model);

/**
 * Number of Gaussians, or 0 for a null handle.
 */
size_t vgs_model_num_gaussians(const struct VgsModel *model);

/**
 * Training iterations the model has seen, or 0 for a null handle.
 */
uint64_t vgs_model_iteration(const struct VgsModel *model);

/**
 * Renders `camera` into `rgb`, `height * width * 3` doubles in row-major
 * pixel order.
 */
enum VgsStatus vgs_render(const struct VgsModel *model,
                          const struct VgsCamera *camera,
                          double *rgb,
                          size_t rgb_len);

/**
 * Trains on the dataset in `data_dir`. `config_json` is a flat JSON object
 * of config keys applied over the defaults, or null.
 */
enum VgsStatus vgs_train(const char *data_dir, const char *config_json, struct VgsModel **out);

/**
 * Mean PSNR and SSIM over the held-out views of `data_dir`.
 */
enum VgsStatus vgs_eval(const struct VgsModel *model,
                        const char *data_dir,
                        double *psnr,
                        double *ssim);

/**
 * Hash-table slot of an integer grid cell for a table of `2^log2_table_size`
 * entries.
 */
uint64_t vgs_hash_index(int32_t x, int32_t y, int32_t z, uint32_t log2_table_size);

/**
 * Adds sample `g` to `stat`.
 */
enum VgsStatus vgs_stream_update(struct VgsStreamStat *stat, double g, enum VgsEstimator estimator);

/**
 * Exact combination of two exact-mode partial statistics.
 */
enum VgsStatus vgs_stream_merge(const struct VgsStreamStat *a,
                                const struct VgsStreamStat *b,
                                struct VgsStreamStat *out);

/**
 * Densification test on per-view averages: `gamma * dbar + grad_norm > tau`.
 * A Gaussian seen in no view never densifies.
 */
enum VgsStatus vgs_densify_decision(double grad_norm,
                                    double dbar,
                                    uint64_t view_count,
                                    double gamma,
                                    double tau,
                                    bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VGSPLAT_H */
