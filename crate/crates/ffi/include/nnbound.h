#ifndef NNBOUND_H
#define NNBOUND_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum NnbStatus {
  NNB_STATUS_OK = 0,
  NNB_STATUS_NULL_POINTER = 1,
  NNB_STATUS_INVALID_UTF8 = 2,
  NNB_STATUS_PARSE = 3,
  NNB_STATUS_SHAPE = 4,
  NNB_STATUS_DIMENSION = 5,
  NNB_STATUS_IO = 6,
  NNB_STATUS_UNSUPPORTED = 7,
  NNB_STATUS_INTERNAL = 8,
} NnbStatus;

// Bounding method for `nnb_bound`.
typedef enum NnbMethod {
  NNB_METHOD_IBP = 0,
  NNB_METHOD_WK = 1,
  NNB_METHOD_CROWN = 2,
  NNB_METHOD_DSG_PLUS = 3,
  NNB_METHOD_DEC_DSG_PLUS = 4,
  NNB_METHOD_SUPERGRADIENT = 5,
  NNB_METHOD_PROXIMAL = 6,
  NNB_METHOD_SIMPLEX = 7,
} NnbMethod;

// Branch-and-bound configuration for `nnb_verify`.
typedef enum NnbPreset {
  // Proximal bounding, iteration ladder, filtered smart branching.
  NNB_PRESET_BADNB = 0,
  // Exact LP bounding with score-based branching.
  NNB_PRESET_BABSR = 1,
} NnbPreset;

typedef enum NnbDecision {
  NNB_DECISION_VERIFIED = 0,
  NNB_DECISION_FALSIFIED = 1,
  NNB_DECISION_TIMEOUT = 2,
} NnbDecision;

// Opaque network handle.
typedef struct NnbNetwork NnbNetwork;

// Opaque property handle.
typedef struct NnbProperty NnbProperty;

// Summary of one verification run.
typedef struct NnbVerifyResult {
  enum NnbDecision decision;
  // Subproblems bounded over all functionals.
  size_t subproblems;
  double global_lb;
  double global_ub;
  // Nonzero when the counterexample buffer was filled.
  int32_t has_counterexample;
} NnbVerifyResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *nnb_last_error(void);

// Parses a model from JSON text.
//
// # Safety
// `json` is a nul-terminated string; `out` is writable.
enum NnbStatus nnb_network_from_json(const char *json, struct NnbNetwork **out);

// Reads a model file.
//
// # Safety
// `path` is a nul-terminated string; `out` is writable.
enum NnbStatus nnb_network_load(const char *path, struct NnbNetwork **out);

// Releases a network; null is ignored.
//
// # Safety
// `net` is null or a handle not yet freed.
void nnb_network_free(struct NnbNetwork *net);

// Input and output sizes of a network.
//
// # Safety
// `net` is a live handle; the outputs are writable.
enum NnbStatus nnb_network_dims(const struct NnbNetwork *net,
                                size_t *input_dim,
                                size_t *output_dim);

// Forward pass; `out` must hold `output_dim` values.
//
// # Safety
// `x` is readable for `x_len` values and `out` writable for `out_len`.
enum NnbStatus nnb_network_forward(const struct NnbNetwork *net,
                                   const double *x,
                                   size_t x_len,
                                   double *out,
                                   size_t out_len);

// Parses one property from JSON text.
//
// # Safety
// `json` is a nul-terminated string; `out` is writable.
enum NnbStatus nnb_property_from_json(const char *json, struct NnbProperty **out);

// Releases a property; null is ignored.
//
// # Safety
// `prop` is null or a handle not yet freed.
void nnb_property_free(struct NnbProperty *prop);

// Lower bound on `min_x cᵀf(x) + d` over the property's domain, taking the
// smallest value over its functionals. A non-negative bound proves the
// property. `budget` is the iteration count of iterative methods.
//
// # Safety
// `net` and `prop` are live handles; `out` is writable.
enum NnbStatus nnb_bound(const struct NnbNetwork *net,
                         const struct NnbProperty *prop,
                         enum NnbMethod method,
                         size_t budget,
                         double *out);

// Decides the property with branch and bound. `timeout_s ≤ 0` or NaN means
// no limit. When the property is falsified and `counterexample` is non-null,
// an input of length `input_dim` violating it is written there.
//
// # Safety
// `net` and `prop` are live handles; `result` is writable; `counterexample`
// is null or writable for `cex_len` values.
enum NnbStatus nnb_verify(const struct NnbNetwork *net,
                          const struct NnbProperty *prop,
                          enum NnbPreset preset,
                          double timeout_s,
                          struct NnbVerifyResult *result,
                          double *counterexample,
                          size_t cex_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NNBOUND_H */
