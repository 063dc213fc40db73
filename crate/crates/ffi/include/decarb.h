#ifndef DECARB_H
#define DECARB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum DecarbStatus {
  DECARB_STATUS_OK = 0,
  // A required pointer argument was null.
  DECARB_STATUS_NULL_POINTER = 1,
  // An argument is out of its domain (p outside (0,1), bad k, bad date…).
  DECARB_STATUS_INVALID_ARGUMENT = 2,
  // An input file is missing, unreadable or malformed.
  DECARB_STATUS_DATA = 3,
  // The constraints admit no portfolio.
  DECARB_STATUS_INFEASIBLE = 4,
  // The caller-supplied buffer is too small.
  DECARB_STATUS_BUFFER_TOO_SMALL = 5,
  // Numerical failure or a bug; the message has details.
  DECARB_STATUS_INTERNAL = 6,
} DecarbStatus;

// Factor model selector for [`decarb_universe_load`].
typedef enum DecarbModel {
  // MKT_RF, SMB, HML, RMW, CMA
  DECARB_MODEL_FIVE_FACTOR = 0,
  // SMB, HML, WML, MF
  DECARB_MODEL_FOUR_FACTOR = 1,
} DecarbModel;

typedef enum DecarbProxy {
  DECARB_PROXY_GHG = 0,
  DECARB_PROXY_CO2 = 1,
} DecarbProxy;

// Solver outcome reported by [`decarb_solve`] and [`decarb_build_index`].
typedef enum DecarbSolveStatus {
  DECARB_SOLVE_STATUS_CONVERGED = 0,
  DECARB_SOLVE_STATUS_ITERATION_LIMIT = 1,
  DECARB_SOLVE_STATUS_INFEASIBLE = 2,
} DecarbSolveStatus;

typedef enum DecarbMethod {
  // Drop the `k` highest emitters.
  DECARB_METHOD_DROP_K = 0,
  // Cap the footprint at `c_rel` × benchmark footprint.
  DECARB_METHOD_CARBON_CAP = 1,
} DecarbMethod;

typedef enum DecarbRisk {
  DECARB_RISK_VAR = 0,
  DECARB_RISK_ES = 1,
} DecarbRisk;

typedef enum DecarbConvention {
  // `−wᵀμ + m·σ`
  DECARB_CONVENTION_LOSS = 0,
  // `+wᵀμ + m·σ`
  DECARB_CONVENTION_LITERAL = 1,
} DecarbConvention;

// Opaque aligned universe. Create with [`decarb_universe_load`], release
// with [`decarb_universe_free`].
typedef struct DecarbUniverse DecarbUniverse;

// Parameters of one decarbonized index for [`decarb_build_index`].
typedef struct DecarbIndexSpec {
  enum DecarbMethod method;
  // Used by `DropK` only.
  size_t k;
  // Used by `CarbonCap` only.
  double c_rel;
  enum DecarbRisk risk;
  double p;
  enum DecarbConvention convention;
} DecarbIndexSpec;

// Outputs of [`decarb_build_index`]; `weights` is caller-owned, length = assets.
typedef struct DecarbIndexResult {
  double *weights;
  double risk_value;
  double footprint;
  double benchmark_footprint;
  enum DecarbSolveStatus status;
} DecarbIndexResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the last error message of this thread into `buf` (NUL-terminated).
//
// `needed` (nullable) receives the size including the NUL. The message is
// empty after a successful call.
//
// # Safety
// `buf` must be null or valid for `len` bytes; `needed` must be null or valid.
enum DecarbStatus decarb_last_error_message(char *buf, size_t len, size_t *needed);

// Load prices, caps, carbon and factor files and align them into a universe.
//
// # Safety
// Path arguments must be NUL-terminated strings; `out` must be valid.
enum DecarbStatus decarb_universe_load(const char *prices,
                                       const char *caps,
                                       const char *carbon,
                                       const char *factors,
                                       enum DecarbModel model,
                                       enum DecarbProxy proxy,
                                       struct DecarbUniverse **out);

// Release a universe. Null is ignored.
//
// # Safety
// `u` must be null or a handle from [`decarb_universe_load`] not yet freed.
void decarb_universe_free(struct DecarbUniverse *u);

// Number of assets in the universe.
//
// # Safety
// `u` must be a live handle; `out` must be valid.
enum DecarbStatus decarb_universe_num_assets(const struct DecarbUniverse *u, size_t *out);

// Ticker of asset `i` (universe order) as a NUL-terminated string.
//
// # Safety
// `u` must be a live handle; `buf` valid for `len` bytes or null with
// `len == 0`; `needed` null or valid.
enum DecarbStatus decarb_universe_ticker(const struct DecarbUniverse *u,
                                         size_t i,
                                         char *buf,
                                         size_t len,
                                         size_t *needed);

// Standard normal quantile Φ⁻¹(p) for `p` in (0, 1).
//
// # Safety
// `out` must be valid.
enum DecarbStatus decarb_normal_quantile(double p, double *out);

// Gaussian expected-shortfall multiplier φ(Φ⁻¹(p)) / (1 − p).
//
// # Safety
// `out` must be valid.
enum DecarbStatus decarb_es_multiplier(double p, double *out);

// Minimize `mean_sign·wᵀμ + multiplier·√(wᵀΣw)` over the simplex.
//
// `carbon` (nullable) with `cap` adds `carbonᵀw ≤ cap`. `pinned` (nullable)
// is a length-`n` mask; nonzero entries are fixed at weight 0.
//
// # Safety
// `mu`, `carbon`, `pinned` and `weights` must be valid for `n` elements,
// `sigma` for `n·n`; scalar out-pointers must be valid.
enum DecarbStatus decarb_solve(size_t n,
                               const double *mu,
                               const double *sigma,
                               double multiplier,
                               double mean_sign,
                               const double *carbon,
                               double cap,
                               const uint8_t *pinned,
                               double *weights,
                               double *objective,
                               enum DecarbSolveStatus *status);

// Fit the factor model on `[window_start, window_end]` and build one index.
//
// # Safety
// `u` must be a live handle, dates NUL-terminated `YYYY-MM-DD` strings,
// `spec` valid, and `result.weights` valid for the universe's asset count.
enum DecarbStatus decarb_build_index(const struct DecarbUniverse *u,
                                     const char *window_start,
                                     const char *window_end,
                                     const struct DecarbIndexSpec *spec,
                                     struct DecarbIndexResult *result);

// Percentage return `(w·P1 − w·P0)·100 / (w·P0)` of fixed weights.
//
// # Safety
// `w`, `p0`, `p1` must be valid for `n` elements; `out` must be valid.
enum DecarbStatus decarb_monthly_return(size_t n,
                                        const double *w,
                                        const double *p0,
                                        const double *p1,
                                        double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DECARB_H */
