#ifndef PANELQ_H
#define PANELQ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PanelqMode {
  PANELQ_MODE_IID = 0,
  PANELQ_MODE_DEPENDENT = 1,
} PanelqMode;

// Status codes; 3 to 8 coincide with the CLI exit codes.
typedef enum PanelqStatus {
  PANELQ_STATUS_OK = 0,
  PANELQ_STATUS_NULL_POINTER = 1,
  PANELQ_STATUS_INVALID_ARGUMENT = 2,
  PANELQ_STATUS_INPUT = 3,
  PANELQ_STATUS_ESTIMATION = 4,
  PANELQ_STATUS_IO = 5,
  PANELQ_STATUS_CONFIG = 6,
  PANELQ_STATUS_VERSION = 7,
  PANELQ_STATUS_SIMULATION = 8,
  PANELQ_STATUS_PANIC = 9,
} PanelqStatus;

// Opaque pooled estimate.
typedef struct PanelqEstimate PanelqEstimate;

// Opaque balanced panel.
typedef struct PanelqPanel PanelqPanel;

// Estimator settings. Obtain defaults from [`panelq_options_default`].
typedef struct PanelqOptions {
  enum PanelqMode mode;
  // Bandwidth override; nonpositive or NaN selects the default.
  double d_t;
  // Lag override; negative selects the default.
  int64_t m_t;
  bool drop_failed;
} PanelqOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *panelq_last_error(void);

// Library version as a static NUL-terminated string.
const char *panelq_version(void);

struct PanelqOptions panelq_options_default(void);

// Builds a panel from row-major arrays: `y[i*t + s]` and
// `x[(i*t + s)*p + j]`. Individuals are labelled `1..n`.
//
// # Safety
// `y` must point to `n*t` values, `x` to `n*t*p` values and `out` to
// writable storage for one pointer.
enum PanelqStatus panelq_panel_new(size_t n,
                                   size_t t,
                                   size_t p,
                                   const double *y,
                                   const double *x,
                                   struct PanelqPanel **out);

// Loads a long-format CSV panel (`id,time,y,x1,...,xp`).
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PanelqStatus panelq_panel_load_csv(const char *path, struct PanelqPanel **out);

// Writes the panel dimensions; any output pointer may be null.
//
// # Safety
// `panel` must come from this library; non-null outputs must be writable.
enum PanelqStatus panelq_panel_dims(const struct PanelqPanel *panel,
                                    size_t *n,
                                    size_t *t,
                                    size_t *p);

// # Safety
// `panel` must be null or a handle from this library not yet freed.
void panelq_panel_free(struct PanelqPanel *panel);

// Fits the pooled estimator at `tau`. `options` may be null for defaults.
//
// # Safety
// `panel` must be a live handle, `options` null or valid, `out` writable.
enum PanelqStatus panelq_estimate(const struct PanelqPanel *panel,
                                  double tau,
                                  const struct PanelqOptions *options,
                                  struct PanelqEstimate **out);

// # Safety
// `est` must be null or a handle from this library not yet freed.
void panelq_estimate_free(struct PanelqEstimate *est);

// Number of slope coefficients, 0 for a null handle.
//
// # Safety
// `est` must be null or a live handle.
size_t panelq_estimate_p(const struct PanelqEstimate *est);

// Copies `β̂` into `out[0..p]`.
//
// # Safety
// `est` must be a live handle and `out` hold `len` values.
enum PanelqStatus panelq_estimate_beta(const struct PanelqEstimate *est, double *out, size_t len);

// Copies the standard errors into `out[0..p]`.
//
// # Safety
// `est` must be a live handle and `out` hold `len` values.
enum PanelqStatus panelq_estimate_std_errors(const struct PanelqEstimate *est,
                                             double *out,
                                             size_t len);

// Copies `Σ̂` row-major into `out[0..p*p]`.
//
// # Safety
// `est` must be a live handle and `out` hold `len` values.
enum PanelqStatus panelq_estimate_sigma(const struct PanelqEstimate *est, double *out, size_t len);

// Wald test of `β = 0`.
//
// # Safety
// `est` must be a live handle; `statistic` and `p_value` writable.
enum PanelqStatus panelq_estimate_wald(const struct PanelqEstimate *est,
                                       double *statistic,
                                       double *p_value);

// Serialises the estimate record as JSON. Release the string with
// [`panelq_string_free`].
//
// # Safety
// `est` must be a live handle and `out` writable.
enum PanelqStatus panelq_estimate_to_json(const struct PanelqEstimate *est, char **out);

// # Safety
// `s` must be null or a string returned by this library.
void panelq_string_free(char *s);

// Single quantile regression of `y` on `(1, x)`; `x` is row-major `t × p`.
// Writes `(α̂, β̂)` to `gamma[0..=p]` and the mean check loss to
// `objective` (may be null).
//
// # Safety
// `x` must hold `t*p` values, `y` `t` values and `gamma` `gamma_len`.
enum PanelqStatus panelq_fit_qr(size_t t,
                                size_t p,
                                const double *x,
                                const double *y,
                                double tau,
                                double *gamma,
                                size_t gamma_len,
                                double *objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANELQ_H */
