/* C interface to the crowd-counting library.
 *
 * Every function returns a cc_status. On failure the message is available from
 * cc_last_error() on the calling thread until the next failing call. Strings
 * returned through char** out-parameters are heap-allocated and released with
 * cc_string_free(). Option and config arguments are JSON text; NULL means
 * defaults. */
#ifndef CROWDCOUNT_H
#define CROWDCOUNT_H

#include <stddef.h>
#include <stdint.h>

#if defined(CROWDCOUNT_BUILDING_LIBRARY)
#define CC_API __attribute__((visibility("default")))
#else
#define CC_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum cc_status {
  CC_OK = 0,
  CC_ERR_ARGUMENT = 1,
  CC_ERR_IO = 2,
  CC_ERR_LOAD = 3,
  CC_ERR_VALIDATION = 4,
  CC_ERR_GENERATION = 5,
  CC_ERR_SAMPLING = 6,
  CC_ERR_INFERENCE = 7,
  CC_ERR_TRAINING = 8,
  CC_ERR_CONFIG = 9,
  CC_ERR_INTERNAL = 10
} cc_status;

typedef enum cc_class { CC_NCP = 0, CC_LCP = 1, CC_MCP = 2, CC_HCP = 3 } cc_class;

typedef struct cc_model cc_model;
typedef struct cc_dataset cc_dataset;
typedef struct cc_count_result cc_count_result;

CC_API const char* cc_last_error(void);
/* Stable snake_case name, e.g. "load_error". */
CC_API const char* cc_status_name(cc_status status);
CC_API void cc_string_free(char* s);

/* ---- datasets ---- */
CC_API cc_status cc_dataset_load(const char* manifest_path, cc_dataset** out);
/* synth_json: {"n_images", "size_range": [a, b], "count_range": [a, b],
 * "blob_radius": [a, b], "seed"} */
CC_API cc_status cc_dataset_synthesize(const char* synth_json, cc_dataset** out);
CC_API cc_status cc_dataset_write(const cc_dataset* data, const char* dir, char** manifest_path);
CC_API size_t cc_dataset_size(const cc_dataset* data);
CC_API cc_status cc_dataset_record(const cc_dataset* data, size_t index, int* width, int* height,
                                   size_t* n_points);
CC_API void cc_dataset_free(cc_dataset* data);

/* ---- models ---- */
/* arch_json: architecture object (may name "preset": "tiny"); NULL = default. */
CC_API cc_status cc_model_init(const char* arch_json, uint64_t seed, cc_model** out);
CC_API cc_status cc_model_load(const char* path, cc_model** out);
CC_API cc_status cc_model_save(const cc_model* model, const char* path);
/* {"arch", "cc_max", "parameter_count", "epochs_completed", "steps"} */
CC_API cc_status cc_model_info(const cc_model* model, char** info_json);
CC_API void cc_model_free(cc_model* model);

/* ---- training and evaluation ---- */
/* config_json follows the training config schema; relative manifest paths
 * resolve against base_dir. data == NULL uses the config's data source.
 * resume may be NULL. */
CC_API cc_status cc_train(const char* config_json, const char* base_dir, const cc_dataset* data,
                          const cc_model* resume, cc_model** out, char** report_json);
CC_API cc_status cc_lr_at(const char* config_json, int epoch, double* lr);

/* options_json: {"routing": "predicted_labels" | "gt_labels", "forced_class":
 * "NCP".., "lcp_rule", "threads", "keep_segmentation"} */
CC_API cc_status cc_evaluate(const cc_model* model, const cc_dataset* data, const char* options_json,
                             char** report_json);
CC_API cc_status cc_count_record(const cc_model* model, const cc_dataset* data, size_t index,
                                 const char* options_json, cc_count_result** out);
/* Loads a PNG and counts it. With out_dir, also writes the JSON report and
 * the segmentation overlay there. */
CC_API cc_status cc_count_image_file(const cc_model* model, const char* image_path,
                                     const char* options_json, const char* out_dir,
                                     cc_count_result** out);
CC_API double cc_count_result_total(const cc_count_result* result);
CC_API size_t cc_count_result_patches(const cc_count_result* result);
CC_API cc_status cc_count_result_patch(const cc_count_result* result, size_t index, int* row, int* col,
                                       int* predicted_class, double* count);
CC_API cc_status cc_count_result_json(const cc_count_result* result, char** out);
CC_API void cc_count_result_free(cc_count_result* result);

/* ---- utilities ---- */
/* options_json: {"preset", "seed", "samples_per_tensor", "step", "vacm_enabled", "zero_regression"} */
CC_API cc_status cc_gradcheck(const char* options_json, char** report_json);
CC_API cc_status cc_label_patch(int64_t cc_gt, int64_t cc_max, int* out_class);
CC_API cc_status cc_mae_rmse(const double* pred, const double* gt, size_t n, double* mae, double* rmse);
/* Writes the rescaled patches for `cls` of a square PNG patch to out_dir. */
CC_API cc_status cc_prm_dump(const char* patch_png, int cls, const char* options_json,
                             const char* out_dir, size_t* n_written);

#ifdef __cplusplus
}
#endif

#endif /* CROWDCOUNT_H */
