#ifndef DEEPSQUARE_H
#define DEEPSQUARE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DS_API __declspec(dllexport)
#else
#define DS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ds_status {
    DS_OK = 0,
    DS_ERR_INVALID_ARGUMENT = 1, /* bad shape, option or config; message names the field */
    DS_ERR_IO = 2,               /* missing or malformed file */
    DS_ERR_CHECK_FAILED = 3,     /* command ran but a validation failed (e.g. gradient check) */
    DS_ERR_INTERNAL = 4
} ds_status;

typedef struct ds_tensor ds_tensor;
typedef struct ds_model ds_model;

DS_API const char* ds_version(void);

/* Message of the most recent failure on the calling thread ("" if none). */
DS_API const char* ds_last_error(void);

/* Dense fp64 tensors, row-major; feature maps are N x H x W x C.
   data may be NULL for a zero tensor. */
DS_API ds_status ds_tensor_create(const size_t* shape, size_t rank, const double* data, ds_tensor** out);
DS_API void ds_tensor_free(ds_tensor* t);
DS_API size_t ds_tensor_rank(const ds_tensor* t);
DS_API ds_status ds_tensor_shape(const ds_tensor* t, size_t* shape, size_t capacity);
DS_API size_t ds_tensor_size(const ds_tensor* t);
DS_API const double* ds_tensor_data(const ds_tensor* t);

/* Forward passes of the square modules. Results are new tensors owned by the caller. */
DS_API ds_status ds_square_pool(const ds_tensor* feature, ds_tensor** out);
DS_API ds_status ds_moment_pool(const ds_tensor* feature, int order, ds_tensor** out);
DS_API ds_status ds_gem_pool(const ds_tensor* feature, double p, ds_tensor** out);
/* raw holds one scale per class, or a single shared one; the scale used is raw^2. */
DS_API ds_status ds_square_softmin(const ds_tensor* x, const ds_tensor* raw, ds_tensor** out);
DS_API ds_status ds_scale_proportion(const ds_tensor* energy, double alpha, ds_tensor** out);
DS_API ds_status ds_square_excitation(const ds_tensor* feature, double alpha, ds_tensor** out);

/* model_json: {"builder": "vanilla_cnn"|"mini_resnet"|"spec", "variant": ..., ...} */
DS_API ds_status ds_model_build(const char* model_json, uint64_t init_seed, ds_model** out);
/* A document written by ds_model_to_json (spec plus parameters). */
DS_API ds_status ds_model_load(const char* network_json, ds_model** out);
DS_API ds_status ds_model_to_json(const ds_model* model, char** out);
DS_API ds_status ds_model_parameter_count(const ds_model* model, size_t* out);
/* Inference-mode logits for a batch. */
DS_API ds_status ds_model_forward(ds_model* model, const ds_tensor* input, ds_tensor** out);
DS_API void ds_model_free(ds_model* model);

/* Coefficients of the boundary A x1^2 + B x2^2 = C for the two-class EleSquare
   network with weights w = {w11, w12, w21, w22} and biases b = {b1, b2}.
   type points to a static string. */
DS_API ds_status ds_boundary_coefficients(const double w[4], const double b[2], double* a, double* b_out, double* c,
                                          const char** type);

/* Runs gradcheck | spiral | boundary | train | ablate with JSON options.
   summary_json and summary_path (either may be NULL) receive strings to release
   with ds_string_free; they are set whenever the command ran, including when it
   returns DS_ERR_CHECK_FAILED. */
DS_API ds_status ds_run_command(const char* command, const char* options_json, char** summary_json,
                                char** summary_path);

DS_API void ds_string_free(char* s);

/* Test fixture: scales the backward rule of the named ops so gradient checks fail. */
DS_API ds_status ds_set_fault_injection(const char* const* ops, size_t count);

#ifdef __cplusplus
}
#endif

#endif
