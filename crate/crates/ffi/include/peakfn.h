#ifndef PEAKFN_H
#define PEAKFN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PkStatus {
  PK_STATUS_OK = 0,
  PK_STATUS_NULL_POINTER = 1,
  PK_STATUS_INVALID_UTF8 = 2,
  PK_STATUS_CONFIG = 3,
  // A construction stage aborted.
  PK_STATUS_STAGE = 4,
  PK_STATUS_OUTSIDE_DOMAIN = 5,
  // Verification ran and the report is FAIL.
  PK_STATUS_VERIFY_FAILED = 6,
  // No certificate yet; call `pk_pipeline_certify` or `pk_pipeline_load_certificate`.
  PK_STATUS_NOT_CERTIFIED = 7,
  PK_STATUS_PANIC = 8,
} PkStatus;

// Opaque pipeline handle.
typedef struct PkPipeline PkPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses a JSON run configuration into a new pipeline.
//
// # Safety
// `config_json` must be a NUL-terminated string; `out` must be writable.
enum PkStatus pk_pipeline_new(const char *config_json, struct PkPipeline **out);

// Releases a pipeline. Null is ignored.
//
// # Safety
// `p` must come from `pk_pipeline_new` and not be used afterwards.
void pk_pipeline_free(struct PkPipeline *p);

// Complex dimension of the configured family.
//
// # Safety
// `p` must be a live pipeline handle.
uintptr_t pk_pipeline_dimension(const struct PkPipeline *p);

// Runs every construction stage and keeps the certificate.
//
// # Safety
// `p` must be a live pipeline handle.
enum PkStatus pk_pipeline_certify(struct PkPipeline *p);

// Uses a stored certificate instead of certifying.
//
// # Safety
// `p` must be a live pipeline handle; `certificate_json` NUL-terminated.
enum PkStatus pk_pipeline_load_certificate(struct PkPipeline *p, const char *certificate_json);

// Certificate JSON; release with `pk_string_free`.
//
// # Safety
// `p` must be a live pipeline handle; `out` writable.
enum PkStatus pk_pipeline_certificate_json(const struct PkPipeline *p, char **out);

// `h_t(z; ζ)` with `ζ` projected onto `∂G_t`. `zeta` and `z` hold `2·n` doubles.
//
// # Safety
// `p` must be a live certified handle; the arrays must hold `2·n` doubles
// for the family dimension `n`; `out_re` and `out_im` writable.
enum PkStatus pk_pipeline_eval(struct PkPipeline *p,
                               double t,
                               const double *zeta,
                               const double *z,
                               double *out_re,
                               double *out_im);

// Runs verification; writes the report JSON (release with `pk_string_free`).
// Returns `Ok` for a PASS report and `VerifyFailed` for a FAIL report.
//
// # Safety
// `p` must be a live certified handle; `out` writable.
enum PkStatus pk_pipeline_verify(struct PkPipeline *p, char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void pk_string_free(char *s);

// Message of the last failure on this thread; empty if none. Valid until the
// next failing call on the same thread.
const char *pk_last_error_message(void);

// Library version, static storage.
const char *pk_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEAKFN_H */
