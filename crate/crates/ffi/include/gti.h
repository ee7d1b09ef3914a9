#ifndef GTI_H
#define GTI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum GtiStatus {
  GTI_STATUS_OK = 0,
  GTI_STATUS_NULL_POINTER = 1,
  GTI_STATUS_INVALID_ARGUMENT = 2,
  GTI_STATUS_IO = 3,
  GTI_STATUS_PARSE = 4,
  GTI_STATUS_OUT_OF_RANGE = 5,
  GTI_STATUS_PANIC = 6,
} GtiStatus;

// Opaque dataset; ground-truth tubelets are simulated on first access.
typedef struct GtiDataset GtiDataset;

// Opaque trained score model.
typedef struct GtiModel GtiModel;

// Opaque greedy switch controller (saved score with per-frame decay).
typedef struct GtiSwitch GtiSwitch;

// Axis-aligned box: top-left corner plus width and height, in pixels.
typedef struct GtiBox {
  double x;
  double y;
  double w;
  double h;
} GtiBox;

// Predicted region-correctness (`r`) and template-quality (`t`) scores.
typedef struct GtiRtScores {
  double r;
  double t;
} GtiRtScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread; empty if none.
// The pointer stays valid until the next failing call on this thread.
const char *gti_last_error(void);

// Library version as a static NUL-terminated string.
const char *gti_version(void);

// Intersection over union of two boxes.
//
// # Safety
// `a`, `b` and `out` must be valid pointers.
enum GtiStatus gti_iou(const struct GtiBox *a, const struct GtiBox *b, double *out);

// Euclidean distance between box centers, in pixels.
//
// # Safety
// `a`, `b` and `out` must be valid pointers.
enum GtiStatus gti_center_distance(const struct GtiBox *a, const struct GtiBox *b, double *out);

// Smoothed-L1 loss of one prediction.
double gti_smoothed_l1(double prediction, double target);

// Success AUC of a predicted tubelet against ground truth (`n` boxes each).
//
// # Safety
// `pred` and `gt` must point to `n` boxes; `out` must be valid.
enum GtiStatus gti_success_auc(const struct GtiBox *pred,
                               const struct GtiBox *gt,
                               size_t n,
                               double *out);

// Fraction of frames whose center distance is at most `threshold` pixels.
//
// # Safety
// `pred` and `gt` must point to `n` boxes; `out` must be valid.
enum GtiStatus gti_precision_at(const struct GtiBox *pred,
                                const struct GtiBox *gt,
                                size_t n,
                                double threshold,
                                double *out);

// Loads a trained score model from a JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum GtiStatus gti_model_load(const char *path, struct GtiModel **out);

// Number of features [`gti_model_predict`] expects.
size_t gti_feature_dim(void);

// Predicts RT-scores from `n` grounding features. `r` is 0 when
// `confidence` is below the 0.5 gate.
//
// # Safety
// `model` must come from [`gti_model_load`]; `features` must point to `n`
// doubles; `out` must be valid.
enum GtiStatus gti_model_predict(const struct GtiModel *model,
                                 const double *features,
                                 size_t n,
                                 double confidence,
                                 struct GtiRtScores *out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`gti_model_load`] and not be used afterwards.
void gti_model_free(struct GtiModel *model);

// Creates a greedy switch controller with decay `lambda` in (0, 1].
//
// # Safety
// `out` must be valid.
enum GtiStatus gti_switch_new(double lambda, struct GtiSwitch **out);

// Feeds one frame's combined score. `*reground` is set when the grounded
// box should be output and the template re-initialized.
//
// # Safety
// `sw` must come from [`gti_switch_new`]; `reground` must be valid.
enum GtiStatus gti_switch_step(struct GtiSwitch *sw, double score, bool *reground);

// Current saved score, or NaN before the first step.
//
// # Safety
// `sw` must come from [`gti_switch_new`]; `out` must be valid.
enum GtiStatus gti_switch_saved(const struct GtiSwitch *sw, double *out);

// Releases a switch controller. Null is ignored.
//
// # Safety
// `sw` must come from [`gti_switch_new`] and not be used afterwards.
void gti_switch_free(struct GtiSwitch *sw);

// Opens a JSONL dataset file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid.
enum GtiStatus gti_dataset_open(const char *path, struct GtiDataset **out);

// Number of videos in the dataset.
//
// # Safety
// `ds` must come from [`gti_dataset_open`]; `out` must be valid.
enum GtiStatus gti_dataset_len(const struct GtiDataset *ds, size_t *out);

// Number of frames of video `video` (by position in the file).
//
// # Safety
// `ds` must come from [`gti_dataset_open`]; `out` must be valid.
enum GtiStatus gti_dataset_n_frames(const struct GtiDataset *ds, size_t video, size_t *out);

// Ground-truth target box of `video` at `frame`.
//
// # Safety
// `ds` must come from [`gti_dataset_open`]; `out` must be valid.
enum GtiStatus gti_dataset_gt_box(const struct GtiDataset *ds,
                                  size_t video,
                                  size_t frame,
                                  struct GtiBox *out);

// Releases a dataset. Null is ignored.
//
// # Safety
// `ds` must come from [`gti_dataset_open`] and not be used afterwards.
void gti_dataset_free(struct GtiDataset *ds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GTI_H */
