#ifndef PURSE_H
#define PURSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PurseStatus {
  PURSE_STATUS_OK = 0,
  PURSE_STATUS_NULL_POINTER = 1,
  PURSE_STATUS_INVALID_ARGUMENT = 2,
  PURSE_STATUS_IO = 3,
  PURSE_STATUS_PARSE = 4,
  // A prediction region or keypoint configuration is degenerate.
  PURSE_STATUS_DEGENERATE = 5,
  // No pose could be sampled from the PURSE.
  PURSE_STATUS_NO_SAMPLES = 6,
  PURSE_STATUS_SOLVER = 7,
  PURSE_STATUS_PANIC = 8,
} PurseStatus;

// Nonconformity function of a calibration record.
typedef enum PurseScoreKind {
  PURSE_SCORE_KIND_PEAK = 0,
  PURSE_SCORE_KIND_COV = 1,
  PURSE_SCORE_KIND_PVNET = 2,
} PurseScoreKind;

// Calibration scores with their nonconformity configuration.
typedef struct PurseCalibration PurseCalibration;

// 3D keypoints of an object.
typedef struct PurseModel PurseModel;

// Pose uncertainty set.
typedef struct PursePoseSet PursePoseSet;

// One prediction region per keypoint.
typedef struct PursePredictionSet PursePredictionSet;

typedef struct PurseIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  double skew;
} PurseIntrinsics;

typedef struct PurseBound {
  // True when the relaxation proves the PURSE empty; the bounds are then 0.
  bool purse_empty;
  double d_squared_upper;
  double d_upper;
  // Rotation angle bound in degrees for `lambda = 1`, NaN otherwise.
  double angle_upper_deg;
} PurseBound;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *purse_version(void);

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into the library on the same thread.
const char *purse_last_error(void);

// Builds a calibration record from `n` nonconformity scores.
//
// # Safety
// `scores` must point to `n` doubles and `out_cal` must be writable.
enum PurseStatus purse_calibration_from_scores(const double *scores,
                                               size_t n,
                                               enum PurseScoreKind kind,
                                               size_t top_j,
                                               double beta,
                                               struct PurseCalibration **out_cal);

// Reads a calibration record from a JSON file.
//
// # Safety
// `path` must be a NUL-terminated string and `out_cal` writable.
enum PurseStatus purse_calibration_load_json(const char *path, struct PurseCalibration **out_cal);

// Calibration quantile for miscoverage `epsilon`.
//
// # Safety
// `cal` must be a live handle and `out_alpha` writable.
enum PurseStatus purse_calibration_quantile(const struct PurseCalibration *cal,
                                            double epsilon,
                                            double *out_alpha);

// # Safety
// `cal` must be NULL or a handle not yet freed.
void purse_calibration_free(struct PurseCalibration *cal);

// Prediction set from explicit regions. `centers` holds `2k` doubles and
// `shapes` holds `4k` doubles, one row-major 2x2 shape matrix per keypoint.
//
// # Safety
// The arrays must have the stated lengths and `out_set` must be writable.
enum PurseStatus purse_prediction_set_new(const double *centers,
                                          const double *shapes,
                                          size_t k,
                                          double epsilon,
                                          struct PursePredictionSet **out_set);

// Calibrated prediction set of a dense heatmap with `channels * height *
// width` entries, channel-major then row-major.
//
// # Safety
// `data` must hold the stated number of doubles; `cal` must be live.
enum PurseStatus purse_prediction_set_from_heatmap(const struct PurseCalibration *cal,
                                                   const double *data,
                                                   size_t channels,
                                                   size_t height,
                                                   size_t width,
                                                   double epsilon,
                                                   struct PursePredictionSet **out_set);

// Number of keypoint regions in the set.
//
// # Safety
// `set` must be NULL or a live handle.
size_t purse_prediction_set_len(const struct PursePredictionSet *set);

// Whether every keypoint pixel in `labels` (`2k` doubles) lies in its region.
//
// # Safety
// `labels` must hold `2k` doubles and `out_inside` must be writable.
enum PurseStatus purse_prediction_set_contains(const struct PursePredictionSet *set,
                                               const double *labels,
                                               size_t k,
                                               bool *out_inside);

// # Safety
// `set` must be NULL or a handle not yet freed.
void purse_prediction_set_free(struct PursePredictionSet *set);

// Object model from `k` keypoints given as `3k` doubles.
//
// # Safety
// `points` must hold `3k` doubles and `out_model` must be writable.
enum PurseStatus purse_model_new(const double *points, size_t k, struct PurseModel **out_model);

// # Safety
// `model` must be NULL or a handle not yet freed.
void purse_model_free(struct PurseModel *model);

// Builds the PURSE of a prediction set.
//
// # Safety
// All handles must be live and `out_purse` writable.
enum PurseStatus purse_build(const struct PursePredictionSet *set,
                             const struct PurseModel *model,
                             const struct PurseIntrinsics *intrinsics,
                             double trans_bound,
                             struct PursePoseSet **out_purse);

// Whether the pose (12 doubles) satisfies every PURSE constraint.
//
// # Safety
// `pose` must hold 12 doubles and `out_inside` must be writable.
enum PurseStatus purse_contains(const struct PursePoseSet *purse,
                                const double *pose,
                                bool *out_inside);

// Writes the PURSE as JSON.
//
// # Safety
// `purse` must be live and `path` NUL-terminated.
enum PurseStatus purse_save_json(const struct PursePoseSet *purse, const char *path);

// Reads a PURSE written by [`purse_save_json`].
//
// # Safety
// `path` must be NUL-terminated and `out_purse` writable.
enum PurseStatus purse_load_json(const char *path, struct PursePoseSet **out_purse);

// Averaged pose of RANSAG sampling. `out_fallback` may be NULL.
//
// # Safety
// All handles must be live and `out_pose` must hold 12 doubles.
enum PurseStatus purse_ransag(const struct PursePoseSet *purse,
                              const struct PursePredictionSet *set,
                              const struct PurseModel *model,
                              const struct PurseIntrinsics *intrinsics,
                              size_t trials,
                              uint64_t seed,
                              double *out_pose,
                              bool *out_fallback);

// Certified upper bound on `λ‖R − R̄‖²_F + (1 − λ)‖t − t̄‖²` over the PURSE.
//
// # Safety
// `purse` must be live, `pose` must hold 12 doubles and `out_bound` must be
// writable.
enum PurseStatus purse_worst_case_bound(const struct PursePoseSet *purse,
                                        const double *pose,
                                        double lambda,
                                        struct PurseBound *out_bound);

// # Safety
// `purse` must be NULL or a handle not yet freed.
void purse_free(struct PursePoseSet *purse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PURSE_H */
